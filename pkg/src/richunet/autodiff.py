"""Tape-based reverse-mode automatic differentiation over dense float64 arrays.

A `Tensor` is a contiguous float64 ndarray plus an optional handle onto a
`Tape`.  Operations (see `ops`) compute forward values eagerly and append
one node per call to the tape; `backward` replays the nodes in reverse
recording order exactly once, accumulating gradients into a map keyed by
node id.  Tensors without a tape handle are constants and receive no
gradient.
"""

import numpy as np

from .errors import UsageError


class Tensor:
    """Dense float64 value, optionally recorded on a tape."""

    __slots__ = ("data", "tape", "node_id")

    def __init__(self, data, tape=None, node_id=None):
        arr = np.asarray(data, dtype=np.float64)
        # ascontiguousarray would promote 0-d to 1-d; 0-d is always contiguous
        if arr.ndim and not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.tape = tape
        self.node_id = node_id

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        tag = f", node={self.node_id}" if self.node_id is not None else ""
        return f"Tensor(shape={tuple(self.data.shape)}{tag})"


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class Parameter:
    """Named learnable array; bound onto a fresh tape once per step."""

    __slots__ = ("name", "data")

    def __init__(self, name, data):
        self.name = name
        self.data = np.ascontiguousarray(data, dtype=np.float64)

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={tuple(self.data.shape)})"


class _Node:
    __slots__ = ("op", "input_ids", "backward_fn")

    def __init__(self, op, input_ids, backward_fn):
        self.op = op
        self.input_ids = input_ids
        self.backward_fn = backward_fn


class Tape:
    """Append-only record of one forward computation.

    `mode` is "train" or "eval"; batch-norm and dropout read it.  Node
    inputs always reference earlier nodes, so a single reverse sweep
    visits every node exactly once.
    """

    def __init__(self, mode="train"):
        if mode not in ("train", "eval"):
            raise UsageError(f"tape mode must be 'train' or 'eval', got {mode!r}")
        self.mode = mode
        self.nodes = []
        self._param_ids = {}
        self._params = []  # strong refs so id() keys stay valid

    def record(self, op, input_ids, backward_fn):
        nid = len(self.nodes)
        self.nodes.append(_Node(op, tuple(input_ids), backward_fn))
        return nid

    def input(self, data):
        """Register a data array as a leaf and return its tensor."""
        nid = self.record("leaf", (), None)
        return Tensor(data, self, nid)

    def param(self, p):
        """Bind a Parameter as a leaf (cached: one node per parameter per tape)."""
        nid = self._param_ids.get(id(p))
        if nid is None:
            nid = self.record("leaf", (), None)
            self._param_ids[id(p)] = nid
            self._params.append(p)
        return Tensor(p.data, self, nid)

    def param_node_id(self, p):
        """Node id a parameter was bound at, or None if never bound."""
        return self._param_ids.get(id(p))


def bind(tape, p):
    """Parameter -> Tensor: tape leaf when a tape is given, constant otherwise."""
    return tape.param(p) if tape is not None else Tensor(p.data)


def backward(tape, loss):
    """Reverse sweep from a scalar loss; returns {node_id: gradient Tensor}.

    Nodes with no path to the loss are absent from the map (their
    gradient is identically zero).  The sweep is deterministic: nodes
    are visited in strictly decreasing recording order and multi-use
    values accumulate contributions in that same order.
    """
    if not isinstance(loss, Tensor) or loss.tape is not tape or loss.node_id is None:
        raise UsageError("loss is not recorded on this tape")
    if loss.data.size != 1:
        raise UsageError(f"loss must be scalar, got shape {tuple(loss.data.shape)}")

    grads = {loss.node_id: np.ones_like(loss.data)}
    for nid in range(loss.node_id, -1, -1):
        g = grads.get(nid)
        if g is None:
            continue
        node = tape.nodes[nid]
        if node.backward_fn is None:
            continue
        for iid, ig in zip(node.input_ids, node.backward_fn(g)):
            if iid is None or ig is None:
                continue  # constant input, no gradient tracked
            acc = grads.get(iid)
            grads[iid] = ig if acc is None else acc + ig
    return {nid: Tensor(g) for nid, g in grads.items()}
