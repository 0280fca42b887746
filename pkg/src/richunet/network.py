"""Rich-U-Net assembly: conv encoder, K-Attention + Fusion stage,
patch-embedding bottleneck, MSAGF decoder, 1x1 classification head.

All numeric defaults are desk-scale choices; the architecture itself
fixes only the stage structure.
"""

import math

import numpy as np

from . import ops
from .attention import KAttentionParams, k_attention_forward
from .autodiff import Parameter, bind
from .errors import ConfigError, ShapeError
from .fusion import FusionLayerParams, fusion_forward
from .initializers import he_uniform
from .msagf import MsagfParams, msagf_fuse
from .ops import BatchNormState


class RichUNetConfig:
    """Architecture hyperparameters with validation.

    The use_* switches exist for ablations: turned off, the attention
    stage becomes the identity and decoder fusion degrades to addition.
    """

    FIELDS = (
        "in_channels", "num_classes", "stage_channels", "heads", "topk",
        "drop_rate", "patch_size", "bottleneck_channels", "reduction",
        "use_attention", "use_fusion", "use_msagf",
    )

    def __init__(self, in_channels=1, num_classes=2, stage_channels=(16, 32, 64),
                 heads=4, topk=8, drop_rate=0.1, patch_size=2,
                 bottleneck_channels=128, reduction=4,
                 use_attention=True, use_fusion=True, use_msagf=True):
        self.in_channels = int(in_channels)
        self.num_classes = int(num_classes)
        self.stage_channels = tuple(int(c) for c in stage_channels)
        self.heads = int(heads)
        self.topk = int(topk)
        self.drop_rate = float(drop_rate)
        self.patch_size = int(patch_size)
        self.bottleneck_channels = int(bottleneck_channels)
        self.reduction = int(reduction)
        self.use_attention = bool(use_attention)
        self.use_fusion = bool(use_fusion)
        self.use_msagf = bool(use_msagf)
        self.validate()

    def validate(self):
        c = self
        if c.in_channels < 1:
            raise ConfigError(f"in_channels must be >= 1, got {c.in_channels}")
        if c.num_classes < 1:
            raise ConfigError(f"num_classes must be >= 1, got {c.num_classes}")
        if len(c.stage_channels) != 3 or any(ch < 1 for ch in c.stage_channels):
            raise ConfigError(f"stage_channels must be 3 positive ints, got {c.stage_channels}")
        if not (c.stage_channels[0] < c.stage_channels[1] < c.stage_channels[2]):
            raise ConfigError(f"stage_channels must be ascending, got {list(c.stage_channels)}")
        if c.heads < 1:
            raise ConfigError(f"heads must be >= 1, got {c.heads}")
        if c.stage_channels[2] % c.heads:
            raise ConfigError(
                f"stage_channels[2] ({c.stage_channels[2]}) must be divisible by heads ({c.heads})"
            )
        if c.bottleneck_channels < 1 or c.bottleneck_channels % c.heads:
            raise ConfigError(
                f"bottleneck_channels ({c.bottleneck_channels}) must be positive and "
                f"divisible by heads ({c.heads})"
            )
        if c.topk < 1:
            raise ConfigError(f"topk must be >= 1, got {c.topk}")
        if not 0.0 <= c.drop_rate < 1.0:
            raise ConfigError(f"drop_rate must be in [0,1), got {c.drop_rate}")
        if c.patch_size < 1 or (c.patch_size & (c.patch_size - 1)):
            raise ConfigError(f"patch_size must be a power of two, got {c.patch_size}")
        if c.reduction < 1 or any(ch % c.reduction for ch in c.stage_channels):
            raise ConfigError(
                f"reduction ({c.reduction}) must divide every stage channel count "
                f"{list(c.stage_channels)}"
            )

    @property
    def divisor(self):
        # 3 pooling halvings + the patch embedding stride
        return 8 * self.patch_size

    def replace(self, **kv):
        vals = {f: getattr(self, f) for f in self.FIELDS}
        vals.update(kv)
        return RichUNetConfig(**vals)

    def numeric_items(self):
        """Flat (key, float array) view of every field, for checkpoints."""
        out = []
        for f in self.FIELDS:
            v = getattr(self, f)
            if f == "stage_channels":
                out.append((f, np.array(v, dtype=np.float64)))
            else:
                out.append((f, np.array(float(v))))
        return out

    @classmethod
    def from_numeric(cls, mapping):
        kv = {}
        for f in cls.FIELDS:
            v = np.asarray(mapping[f])
            if f == "stage_channels":
                kv[f] = tuple(int(x) for x in v)
            elif f == "drop_rate":
                kv[f] = float(v)
            elif f.startswith("use_"):
                kv[f] = bool(v)
            else:
                kv[f] = int(v)
        return cls(**kv)


def micro_config(**overrides):
    """Desk-scale default: small enough for CPU training runs, large
    enough to overfit a handful of synthetic samples."""
    base = dict(stage_channels=(8, 16, 32), heads=4, topk=8, drop_rate=0.1,
                patch_size=2, bottleneck_channels=64, reduction=4)
    base.update(overrides)
    return RichUNetConfig(**base)


class _ConvBNRelu:
    """conv -> batchnorm -> relu unit."""

    def __init__(self, name, cin, cout, k, stride, pad, rng):
        self.w = Parameter(f"{name}.w", he_uniform(rng, (cout, cin, k, k), cin * k * k))
        self.b = Parameter(f"{name}.b", np.zeros(cout))
        self.bn = BatchNormState(cout, name=f"{name}.bn")
        self.stride = stride
        self.pad = pad

    def apply(self, x, mode):
        tape = x.tape
        y = ops.conv2d(x, bind(tape, self.w), bind(tape, self.b),
                       stride=self.stride, padding=self.pad)
        return ops.relu(ops.batchnorm2d(y, self.bn, mode))

    def params(self):
        return [self.w, self.b] + self.bn.params()

    def bn_states(self):
        return [self.bn]


class _Conv1x1:
    """Plain 1x1 conv with bias (channel projection)."""

    def __init__(self, name, cin, cout, rng):
        self.w = Parameter(f"{name}.w", he_uniform(rng, (cout, cin, 1, 1), cin))
        self.b = Parameter(f"{name}.b", np.zeros(cout))

    def apply(self, x):
        tape = x.tape
        return ops.conv2d(x, bind(tape, self.w), bind(tape, self.b))

    def params(self):
        return [self.w, self.b]


class RichUNet:
    """The assembled network.  Construct via `build(config, rng)`."""

    def __init__(self, config, rng):
        config.validate()
        self.config = config
        cfg = config
        c1, c2, c3 = cfg.stage_channels

        self.encoder = []
        cin = cfg.in_channels
        for i, cout in enumerate(cfg.stage_channels):
            self.encoder.append([
                _ConvBNRelu(f"enc{i}.conv0", cin, cout, 3, 1, 1, rng),
                _ConvBNRelu(f"enc{i}.conv1", cout, cout, 3, 1, 1, rng),
            ])
            cin = cout

        self.attn = (KAttentionParams(c3, cfg.heads, cfg.topk, cfg.drop_rate,
                                      rng=rng, name="attn")
                     if cfg.use_attention else None)
        if self.attn is not None:
            # damp the output projection so the residual branch starts close
            # to identity; small but nonzero so gradients reach q/k/v at step 0
            self.attn.w_o.data *= 0.1
        self.fusion = FusionLayerParams(c3, rng, name="fusion") if cfg.use_fusion else None

        p = cfg.patch_size
        self.patch = _ConvBNRelu("bottleneck.patch", c3, cfg.bottleneck_channels,
                                 p, p, 0, rng)
        self.bridge = _Conv1x1("bottleneck.bridge", cfg.bottleneck_channels, c3, rng)

        self.dec_match = []
        self.dec_fuse = []
        self.dec_conv = []
        prev = c3
        for i, skip_ch in enumerate((c3, c2, c1)):
            self.dec_match.append(_Conv1x1(f"dec{i}.match", prev, skip_ch, rng))
            self.dec_fuse.append(
                MsagfParams(skip_ch, cfg.reduction, rng, name=f"dec{i}.msagf")
                if cfg.use_msagf else None
            )
            self.dec_conv.append(_ConvBNRelu(f"dec{i}.conv", skip_ch, skip_ch, 3, 1, 1, rng))
            prev = skip_ch

        self.head = _Conv1x1("head", c1, cfg.num_classes, rng)

        self._params = self._collect_params()
        names = [p.name for p in self._params]
        assert len(names) == len(set(names)), "parameter names must be unique"

    def _collect_params(self):
        out = []
        for stage in self.encoder:
            for blk in stage:
                out += blk.params()
        if self.attn is not None:
            out += self.attn.params()
        if self.fusion is not None:
            out += self.fusion.params()
        out += self.patch.params()
        out += self.bridge.params()
        for i in range(3):
            out += self.dec_match[i].params()
            if self.dec_fuse[i] is not None:
                out += self.dec_fuse[i].params()
            out += self.dec_conv[i].params()
        out += self.head.params()
        return out

    def parameters(self):
        """Every learnable tensor, in fixed construction order."""
        return list(self._params)

    def bn_states(self):
        out = []
        for stage in self.encoder:
            for blk in stage:
                out.append(blk.bn)
        if self.fusion is not None:
            out.append(self.fusion.bn)
        out.append(self.patch.bn)
        for i in range(3):
            if self.dec_fuse[i] is not None:
                out.append(self.dec_fuse[i].bn)
            out.append(self.dec_conv[i].bn)
        return out

    # ---- forward pieces ------------------------------------------------

    def _check_input(self, x):
        if x.ndim != 4:
            raise ShapeError(f"expected NCHW input, got {x.shape}")
        if x.shape[1] != self.config.in_channels:
            raise ShapeError(
                f"expected {self.config.in_channels} input channels, got {x.shape[1]}"
            )
        d = self.config.divisor
        if x.shape[2] % d or x.shape[3] % d:
            raise ShapeError(
                f"spatial extent {x.shape[2]}x{x.shape[3]} must be divisible by {d}"
            )

    def encode(self, x, mode):
        """Returns (skips, deepest): three pre-pool feature maps plus the
        pooled deepest map at 1/8 resolution."""
        self._check_input(x)
        skips = []
        cur = x
        for stage in self.encoder:
            cur = stage[0].apply(cur, mode)
            cur = stage[1].apply(cur, mode)
            skips.append(cur)
            cur = ops.maxpool2d(cur)
        return skips, cur

    def attend_stage(self, deepest, mode, rng=None):
        """K-Attention over flattened tokens, then the Fusion-Layer."""
        cur = deepest
        if self.attn is not None:
            b, c, h, w = cur.shape
            tokens = ops.transpose(ops.reshape(cur, (b, c, h * w)), (0, 2, 1))
            tokens = k_attention_forward(tokens, self.attn, mode, rng)
            cur = ops.reshape(ops.transpose(tokens, (0, 2, 1)), (b, c, h, w))
        if self.fusion is not None:
            cur = fusion_forward(cur, self.fusion, mode)
        return cur

    def bottleneck(self, x, mode):
        """Patch embedding + projection back to the decoder entry shape."""
        p = self.config.patch_size
        if x.shape[2] % p or x.shape[3] % p:
            raise ShapeError(
                f"bottleneck input {x.shape[2]}x{x.shape[3]} not divisible by patch size {p}"
            )
        y = self.patch.apply(x, mode)
        y = self.bridge.apply(y)
        for _ in range(int(math.log2(p))):
            y = ops.nearest_upsample2x(y)
        return y

    def forward(self, x, mode, rng=None):
        """x [B,in,H,W] -> logits [B,num_classes,H,W]."""
        skips, deep = self.encode(x, mode)
        deep = self.attend_stage(deep, mode, rng)
        cur = self.bottleneck(deep, mode)
        for i in range(3):
            skip = skips[2 - i]
            cur = ops.nearest_upsample2x(cur)
            cur = self.dec_match[i].apply(cur)
            if self.dec_fuse[i] is not None:
                cur = msagf_fuse(cur, skip, self.dec_fuse[i], mode)
            else:
                cur = ops.add(cur, skip)  # ablation baseline: plain skip sum
            cur = self.dec_conv[i].apply(cur, mode)
        return self.head.apply(cur)


def build(config, rng):
    """Construct a RichUNet with every weight drawn from `rng`."""
    return RichUNet(config, rng)
