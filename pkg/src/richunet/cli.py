"""Command-line interface.

Subcommands: train, eval, infer, selftest.  Exit codes: 0 success,
1 usage/config error, 2 data error, 3 numerical failure.
"""

import argparse
import os
import sys

import numpy as np

from .autodiff import Tensor
from .data import load_dataset, save_dataset, synth_dataset
from .errors import (CheckpointError, ConfigError, DataError, NumericalError,
                     PgmError, ShapeError, UsageError)
from .metrics import mask_from_logits
from .network import RichUNetConfig, build
from .pgm import load_pgm, save_pgm
from .report import report_csv, report_text
from .rng import SplitMix64, derive_seed
from .train import (TrainConfig, checkpoint_load, evaluate, net_from_checkpoint,
                    train)

_NET_KEYS = {
    "in_channels": int, "num_classes": int, "heads": int, "topk": int,
    "drop_rate": float, "patch_size": int, "bottleneck_channels": int,
    "reduction": int, "use_attention": bool, "use_fusion": bool,
    "use_msagf": bool, "stage_channels": "intlist",
}
_TRAIN_KEYS = {
    "learning_rate": float, "epochs": int, "batch_size": int,
    "loss_lambda": float, "checkpoint_every": int, "synth_size": int,
}


def _parse_bool(v, key):
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"config key {key}: expected a boolean, got {v!r}")


def parse_config_file(path):
    """Flat key=value file, '#' comments; unknown keys are usage errors."""
    if not os.path.isfile(path):
        raise UsageError(f"config file not found: {path}")
    net_kv, train_kv = {}, {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
            key, val = (part.strip() for part in line.split("=", 1))
            if key not in _NET_KEYS and key not in _TRAIN_KEYS:
                raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
            try:
                if key in _NET_KEYS:
                    kind = _NET_KEYS[key]
                    if kind == "intlist":
                        net_kv[key] = tuple(int(x) for x in val.split(","))
                    elif kind is bool:
                        net_kv[key] = _parse_bool(val, key)
                    else:
                        net_kv[key] = kind(val)
                else:
                    train_kv[key] = _TRAIN_KEYS[key](val)
            except UsageError:
                raise
            except ValueError:
                raise UsageError(f"{path}:{lineno}: bad value for {key}: {val!r}") from None
    return net_kv, train_kv


class _Parser(argparse.ArgumentParser):
    # argparse exits with its own codes; route through the usage-error path
    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage()}")


def _build_parser():
    p = _Parser(prog="richunet", description="Rich-U-Net segmentation toolkit")
    sub = p.add_subparsers(dest="cmd", required=True)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config", help="key=value config file")
    src = t.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="directory of <id>.pgm / <id>_mask.pgm pairs")
    src.add_argument("--synth", type=int, metavar="N", help="generate N synthetic samples")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--steps", type=int, help="optimizer steps (overrides epochs)")
    t.add_argument("--resume", nargs="?", const="", metavar="CKPT",
                   help="continue from a checkpoint (default: OUT/checkpoint.run1)")

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--report", required=True, help="CSV output path")

    i = sub.add_parser("infer", help="segment one image")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--image", required=True, help="input .pgm")
    i.add_argument("--mask", required=True, help="output mask .pgm")

    sub.add_parser("selftest", help="run the invariant suite")
    return p


def _cmd_train(args):
    net_kv, train_kv = ({}, {})
    if args.config:
        net_kv, train_kv = parse_config_file(args.config)
    synth_size = train_kv.pop("synth_size", 64)
    config = RichUNetConfig(**net_kv)

    if args.synth is not None:
        if args.synth < 1:
            raise UsageError("--synth needs at least 1 sample")
        samples = synth_dataset(args.synth, synth_size, synth_size, args.seed)
    else:
        samples = load_dataset(args.data)

    os.makedirs(args.out, exist_ok=True)
    if args.synth is not None:
        # persist the generated set so eval/infer can reuse it
        save_dataset(samples, os.path.join(args.out, "data"))

    resume_entries = None
    if args.resume is not None:
        if net_kv:
            raise UsageError("network config keys cannot be changed on --resume; "
                             "the checkpoint fixes the architecture")
        ckpt_in = args.resume or os.path.join(args.out, "checkpoint.run1")
        net, resume_entries = net_from_checkpoint(ckpt_in)
    else:
        net = build(config, SplitMix64(derive_seed(args.seed, 0xB0)))

    tc = TrainConfig(seed=args.seed, steps=args.steps, **train_kv)
    ckpt_path = os.path.join(args.out, "checkpoint.run1")
    log_path = os.path.join(args.out, "train_log.csv")
    with open(log_path, "w", encoding="utf-8") as logf:
        logf.write("step,loss,dice\n")

        def log_fn(step, loss, dice_v):
            line = "%d,%.17g,%.6f" % (step, loss, dice_v)
            logf.write(line + "\n")
            print(line)

        train(net, samples, tc, checkpoint_path=ckpt_path,
              resume_entries=resume_entries, log_fn=log_fn)
    print(f"checkpoint written to {ckpt_path}")
    return 0


def _cmd_eval(args):
    net, _ = net_from_checkpoint(args.checkpoint)
    samples = load_dataset(args.data)
    report = evaluate(net, samples)
    with open(args.report, "w", encoding="utf-8") as f:
        f.write(report_csv(report))
    sys.stdout.write(report_text(report))
    return 0


def _cmd_infer(args):
    net, _ = net_from_checkpoint(args.checkpoint)
    image = load_pgm(args.image)
    x = Tensor(image.data[None, None])
    logits = net.forward(x, "eval")
    pred = mask_from_logits(logits)[0]
    save_pgm(pred.astype(np.float64), args.mask)
    print(f"mask written to {args.mask}")
    return 0


def _cmd_selftest(_args):
    from .selftest import run_selftest

    return run_selftest(print)


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.cmd == "train":
            return _cmd_train(args)
        if args.cmd == "eval":
            return _cmd_eval(args)
        if args.cmd == "infer":
            return _cmd_infer(args)
        return _cmd_selftest(args)
    except (UsageError, ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (DataError, PgmError, CheckpointError, ShapeError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


def entrypoint():
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
