"""Binary PGM (P5, maxval 255) reader and writer.

The reader is liberal about header whitespace and '#' comments but
strict about everything else, and every parse error carries the byte
offset where it happened.  The writer emits the canonical header
"P5\\n<w> <h>\\n255\\n", so write(read(f)) == f for canonical files.
"""

import numpy as np

from .autodiff import Tensor
from .errors import PgmError

_WS = b" \t\r\n\x0b\x0c"


class _Scanner:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def fail(self, msg):
        raise PgmError(msg, self.pos)

    def skip_ws_and_comments(self):
        d = self.data
        while self.pos < len(d):
            c = d[self.pos : self.pos + 1]
            if c in (b"#",):
                nl = d.find(b"\n", self.pos)
                if nl == -1:
                    self.fail("unterminated comment")
                self.pos = nl + 1
            elif c in _WS:
                self.pos += 1
            else:
                return

    def read_int(self, what):
        self.skip_ws_and_comments()
        start = self.pos
        d = self.data
        while self.pos < len(d) and d[self.pos : self.pos + 1].isdigit():
            self.pos += 1
        if self.pos == start:
            self.fail(f"expected {what}")
        return int(d[start : self.pos])


def load_pgm(path):
    """Read a P5 file into a Tensor[H,W] scaled to [0,1]."""
    with open(path, "rb") as f:
        data = f.read()
    s = _Scanner(data)
    if data[:2] != b"P5":
        s.fail("not a P5 binary pgm")
    s.pos = 2
    width = s.read_int("width")
    height = s.read_int("height")
    if width < 1 or height < 1:
        s.fail(f"bad dimensions {width}x{height}")
    maxval_at = s.pos
    maxval = s.read_int("maxval")
    if maxval != 255:
        raise PgmError(f"unsupported maxval {maxval}", maxval_at)
    if s.pos >= len(data) or data[s.pos : s.pos + 1] not in _WS:
        s.fail("expected single whitespace before pixel data")
    s.pos += 1
    need = width * height
    payload = data[s.pos : s.pos + need]
    if len(payload) < need:
        raise PgmError(
            f"truncated payload: need {need} bytes, have {len(payload)}", len(data)
        )
    if s.pos + need != len(data):
        raise PgmError("trailing bytes after pixel data", s.pos + need)
    px = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return Tensor(px.astype(np.float64) / 255.0)


def save_pgm(tensor, path):
    """Write a Tensor/array with values in [0,1] as a canonical P5 file.

    Values are scaled by 255 and rounded half up.
    """
    a = tensor.data if isinstance(tensor, Tensor) else np.asarray(tensor, dtype=np.float64)
    if a.ndim == 3 and a.shape[0] == 1:
        a = a[0]
    if a.ndim != 2:
        raise PgmError(f"can only save 2-d images, got shape {a.shape}", 0)
    px = np.clip(np.floor(a * 255.0 + 0.5), 0, 255).astype(np.uint8)
    h, w = px.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(px.tobytes())
