"""Loss, optimizer, training loop, evaluation.

Training is deterministic per (seed, config, data): batch order is
derived from the seed and epoch index alone, every stochastic op draws
from one explicitly-threaded generator, and checkpoints capture enough
state (parameters, moments, running stats, rng, step) that a resumed
run is bit-identical to an uninterrupted one.
"""

import math

import numpy as np

from . import metrics
from .autodiff import Tape, Tensor, backward
from .checkpoint import checkpoint_load, checkpoint_save
from .errors import (CheckpointError, ConfigError, MetricUndefinedError,
                     NumericalError, ShapeError)
from .network import RichUNetConfig, build
from .ops import (add, div, log_softmax, mul, scale, select, softmax, sub,
                  sum_reduce)
from .rng import SplitMix64, derive_seed


class TrainConfig:
    FIELDS = ("learning_rate", "epochs", "batch_size", "seed", "beta1", "beta2",
              "adam_eps", "loss_lambda", "checkpoint_every")

    def __init__(self, learning_rate=1e-4, epochs=400, batch_size=4, seed=0,
                 beta1=0.9, beta2=0.999, adam_eps=1e-8, loss_lambda=0.5,
                 checkpoint_every=0, steps=None):
        self.learning_rate = float(learning_rate)
        self.epochs = int(epochs)
        self.batch_size = int(batch_size)
        self.seed = int(seed)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.adam_eps = float(adam_eps)
        self.loss_lambda = float(loss_lambda)
        self.checkpoint_every = int(checkpoint_every)
        self.steps = None if steps is None else int(steps)
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
        if self.epochs < 0 or (self.steps is not None and self.steps < 0):
            raise ConfigError("epochs/steps must be >= 0")
        if not 0.0 <= self.loss_lambda <= 1.0:
            raise ConfigError(f"loss_lambda must be in [0,1], got {loss_lambda}")


def cross_entropy(logits, class_map):
    """Mean pixelwise negative log-likelihood.  class_map: int array [B,H,W]."""
    b, k, h, w = logits.shape
    cm = np.asarray(class_map)
    if cm.shape != (b, h, w):
        raise ShapeError(f"class map {cm.shape} does not match logits {logits.shape}")
    onehot = np.zeros((b, k, h, w))
    np.put_along_axis(onehot, cm[:, None].astype(np.int64), 1.0, axis=1)
    ls = log_softmax(logits, axis=1)
    return scale(sum_reduce(mul(ls, Tensor(onehot))), -1.0 / (b * h * w))


def soft_dice_loss(logits, fg_mask):
    """1 - (2*sum(p*g)+1)/(sum(p)+sum(g)+1) on the foreground probability."""
    b, k, h, w = logits.shape
    g = np.asarray(fg_mask, dtype=np.float64)
    if g.shape != (b, h, w):
        raise ShapeError(f"mask {g.shape} does not match logits {logits.shape}")
    p = select(softmax(logits, axis=1), 1, 1)
    inter = sum_reduce(mul(p, Tensor(g)))
    num = add(scale(inter, 2.0), 1.0)
    den = add(add(sum_reduce(p), float(g.sum())), 1.0)
    return sub(1.0, div(num, den))


def segmentation_loss(logits, fg_mask, loss_lambda=0.5):
    """Convex blend of cross-entropy and soft Dice loss."""
    lam = float(loss_lambda)
    cm = np.asarray(fg_mask).astype(np.int64)
    ce = cross_entropy(logits, cm)
    dl = soft_dice_loss(logits, fg_mask)
    return add(scale(ce, lam), scale(dl, 1.0 - lam))


class Adam:
    """Adam with bias correction; moments keyed by fixed parameter order."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v, g in zip(self.params, self.m, self.v, grads):
            if g is None:
                g = np.zeros_like(p.data)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _stack_samples(samples):
    images = np.stack([s.image.data for s in samples])  # [n,1,H,W]
    masks = np.stack([s.mask for s in samples])         # [n,H,W] bool
    return images, masks


def _batch_dice(logits, masks):
    pred = metrics.mask_from_logits(logits)
    return float(np.mean([metrics.dice(pred[i], masks[i]) for i in range(len(masks))]))


def _total_steps(cfg, batches_per_epoch):
    if cfg.steps is not None:
        return cfg.steps
    return cfg.epochs * batches_per_epoch


def train_state_entries(net, opt, rng, step):
    """Ordered checkpoint entries capturing the full training state."""
    entries = [("step", np.array(float(step)))]
    entries += [("config/" + k, v) for k, v in net.config.numeric_items()]
    st = rng.state
    entries.append(("rng", np.array([float(st >> 32), float(st & 0xFFFFFFFF)])))
    entries.append(("adam/t", np.array(float(opt.t))))
    for p in net.parameters():
        entries.append(("param/" + p.name, p.data))
    for p, m in zip(opt.params, opt.m):
        entries.append(("adam/m/" + p.name, m))
    for p, v in zip(opt.params, opt.v):
        entries.append(("adam/v/" + p.name, v))
    for bn in net.bn_states():
        entries.append(("running_mean/" + bn.name, bn.running_mean))
        entries.append(("running_var/" + bn.name, bn.running_var))
    return entries


def restore_train_state(net, opt, rng, entries):
    """Inverse of train_state_entries; returns the restored step counter."""
    table = dict(entries)

    def need(name):
        if name not in table:
            raise CheckpointError(f"checkpoint is missing entry {name!r}", 0)
        return table[name]

    step = int(need("step"))
    hi, lo = need("rng")
    rng.state = (int(hi) << 32) | int(lo)
    opt.t = int(need("adam/t"))
    for p in net.parameters():
        arr = need("param/" + p.name)
        if arr.shape != p.data.shape:
            raise CheckpointError(
                f"shape mismatch for {p.name}: checkpoint {arr.shape}, model {p.data.shape}", 0
            )
        p.data[...] = arr
    for p, m in zip(opt.params, opt.m):
        m[...] = need("adam/m/" + p.name)
    for p, v in zip(opt.params, opt.v):
        v[...] = need("adam/v/" + p.name)
    for bn in net.bn_states():
        bn.running_mean[...] = need("running_mean/" + bn.name)
        bn.running_var[...] = need("running_var/" + bn.name)
    return step


def net_from_checkpoint(path):
    """Rebuild a network (weights + running stats) from a checkpoint file."""
    entries = checkpoint_load(path)
    table = dict(entries)
    cfg_map = {k[len("config/"):]: v for k, v in table.items() if k.startswith("config/")}
    try:
        config = RichUNetConfig.from_numeric(cfg_map)
    except KeyError as e:
        raise CheckpointError(f"checkpoint is missing config entry {e}", 0) from None
    net = build(config, SplitMix64(0))  # weights overwritten below
    for p in net.parameters():
        key = "param/" + p.name
        if key not in table:
            raise CheckpointError(f"checkpoint is missing entry {key!r}", 0)
        p.data[...] = table[key]
    for bn in net.bn_states():
        bn.running_mean[...] = table["running_mean/" + bn.name]
        bn.running_var[...] = table["running_var/" + bn.name]
    return net, entries


def train(net, samples, cfg, checkpoint_path=None, resume_entries=None, log_fn=None):
    """Run the loop; returns the [(step, loss, batch dice)] log.

    Batch order for epoch e is a Fisher-Yates shuffle seeded by
    derive_seed(cfg.seed, e), so any step is reproducible from (seed,
    step) alone and resume needs no extra bookkeeping.
    """
    if not samples:
        raise ConfigError("training requires at least one sample")
    rng = SplitMix64(derive_seed(cfg.seed, 0xD0))  # dropout/forward stream
    opt = Adam(net.parameters(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
    start = 0
    if resume_entries is not None:
        start = restore_train_state(net, opt, rng, resume_entries)
    images, masks = _stack_samples(samples)
    n = len(samples)
    bs = min(cfg.batch_size, n)
    bpe = math.ceil(n / bs)
    total = _total_steps(cfg, bpe)
    log = []
    perm_epoch, perm = -1, None
    for step in range(start, total):
        epoch, pos = divmod(step, bpe)
        if epoch != perm_epoch:
            perm = SplitMix64(derive_seed(cfg.seed, epoch)).permutation(n)
            perm_epoch = epoch
        idx = perm[pos * bs : (pos + 1) * bs]
        tape = Tape("train")
        x = tape.input(images[idx])
        logits = net.forward(x, "train", rng)
        loss = segmentation_loss(logits, masks[idx], cfg.loss_lambda)
        lval = loss.item()
        if not math.isfinite(lval):
            raise NumericalError(f"loss became non-finite at step {step}")
        grads = backward(tape, loss)
        glist = []
        for p in opt.params:
            nid = tape.param_node_id(p)
            g = grads.get(nid) if nid is not None else None
            glist.append(None if g is None else g.data)
        d = _batch_dice(logits, masks[idx])
        opt.step(glist)
        log.append((step, lval, d))
        if log_fn is not None:
            log_fn(step, lval, d)
        done = step + 1
        if checkpoint_path and (
            done == total or (cfg.checkpoint_every and done % cfg.checkpoint_every == 0)
        ):
            checkpoint_save(checkpoint_path, train_state_entries(net, opt, rng, done))
    if checkpoint_path and start >= total:
        # nothing to run; still leave a valid checkpoint behind
        checkpoint_save(checkpoint_path, train_state_entries(net, opt, rng, start))
    return log


class EvalRow:
    __slots__ = ("id", "dice", "iou", "hd95", "hd95_defined")

    def __init__(self, sample_id, dice_v, iou_v, hd95_v, defined):
        self.id = sample_id
        self.dice = dice_v
        self.iou = iou_v
        self.hd95 = hd95_v
        self.hd95_defined = defined


class EvalReport:
    def __init__(self, rows):
        self.rows = rows

    @property
    def mean_dice(self):
        return float(np.mean([r.dice for r in self.rows]))

    @property
    def mean_iou(self):
        return float(np.mean([r.iou for r in self.rows]))

    @property
    def mean_hd95(self):
        vals = [r.hd95 for r in self.rows if r.hd95_defined]
        return float(np.mean(vals)) if vals else float("nan")

    @property
    def hd95_defined_count(self):
        return sum(1 for r in self.rows if r.hd95_defined)


def evaluate(net, samples):
    """Evaluation-mode pass over the dataset; per-sample and mean metrics."""
    rows = []
    for s in samples:
        logits = net.forward(Tensor(s.image.data[None]), "eval")
        pred = metrics.mask_from_logits(logits)[0]
        d = metrics.dice(pred, s.mask)
        j = metrics.iou(pred, s.mask)
        try:
            h = metrics.hd95(pred, s.mask)
            defined = True
        except MetricUndefinedError:
            h = float("nan")
            defined = False
        rows.append(EvalRow(s.id, d, j, h, defined))
    return EvalReport(rows)
