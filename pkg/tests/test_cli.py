import os

import numpy as np
import pytest

from richunet.checkpoint import checkpoint_load
from richunet.cli import main, parse_config_file
from richunet.errors import UsageError
from richunet.pgm import load_pgm


def _train(out, *extra):
    return main(["train", "--synth", "4", "--steps", "2", "--seed", "5",
                 "--out", str(out)] + list(extra))


@pytest.fixture()
def small_cfg(tmp_path):
    cfg = tmp_path / "small.cfg"
    cfg.write_text("synth_size = 16\nlearning_rate = 1e-3\n")
    return str(cfg)


# ------------------------------------------------------------- parsing

def test_config_file_parsing(tmp_path):
    cfg = tmp_path / "a.cfg"
    cfg.write_text(
        "# full line comment\n"
        "heads = 2   # trailing comment\n"
        "stage_channels = 4,8,16\n"
        "use_msagf = off\n"
        "drop_rate=0.0\n"
        "\n"
        "learning_rate = 5e-4\n"
        "batch_size = 2\n"
    )
    net_kv, train_kv = parse_config_file(str(cfg))
    assert net_kv == {"heads": 2, "stage_channels": (4, 8, 16),
                      "use_msagf": False, "drop_rate": 0.0}
    assert train_kv == {"learning_rate": 5e-4, "batch_size": 2}


def test_config_file_errors(tmp_path):
    with pytest.raises(UsageError, match="not found"):
        parse_config_file(str(tmp_path / "missing.cfg"))
    bad = tmp_path / "bad.cfg"
    bad.write_text("volume = 11\n")
    with pytest.raises(UsageError, match="unknown config key"):
        parse_config_file(str(bad))
    bad.write_text("heads two\n")
    with pytest.raises(UsageError, match="key=value"):
        parse_config_file(str(bad))
    bad.write_text("heads = two\n")
    with pytest.raises(UsageError, match="bad value"):
        parse_config_file(str(bad))
    bad.write_text("use_fusion = maybe\n")
    with pytest.raises(UsageError, match="boolean"):
        parse_config_file(str(bad))


# ---------------------------------------------------------- exit codes

def test_unknown_flag_exits_1(tmp_path, capsys):
    rc = main(["train", "--synth", "2", "--out", str(tmp_path), "--frobnicate"])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_missing_subcommand_exits_1(capsys):
    assert main([]) == 1
    assert main(["launder"]) == 1


def test_train_rejects_zero_synth(tmp_path, capsys):
    rc = main(["train", "--synth", "0", "--steps", "1", "--out", str(tmp_path)])
    assert rc == 1


def test_train_missing_data_dir_exits_2(tmp_path, capsys):
    rc = main(["train", "--data", str(tmp_path / "nope"), "--steps", "1",
               "--out", str(tmp_path / "o")])
    assert rc == 2
    assert "error:" in capsys.readouterr().err


def test_eval_missing_checkpoint_exits_2(tmp_path, capsys):
    rc = main(["eval", "--checkpoint", str(tmp_path / "no.ckpt"),
               "--data", str(tmp_path), "--report", str(tmp_path / "r.csv")])
    assert rc == 2


def test_bad_config_value_exits_1(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("heads = 0\n")
    rc = main(["train", "--synth", "2", "--steps", "1", "--seed", "1",
               "--out", str(tmp_path / "o"), "--config", str(cfg)])
    assert rc == 1


def test_selftest_exits_0(capsys):
    assert main(["selftest"]) == 0
    out = capsys.readouterr().out
    assert "all 7 suites passed" in out
    assert "FAIL" not in out


# ------------------------------------------------------------ workflow

def test_train_eval_infer_roundtrip(tmp_path, small_cfg, capsys):
    out = tmp_path / "run"
    rc = _train(out, "--config", small_cfg)
    assert rc == 0
    stdout = capsys.readouterr().out
    assert "checkpoint written" in stdout

    ckpt = out / "checkpoint.run1"
    log = out / "train_log.csv"
    assert ckpt.is_file() and log.is_file()
    lines = log.read_text().strip().splitlines()
    assert lines[0] == "step,loss,dice"
    assert len(lines) == 3  # header + 2 steps
    assert lines[1].startswith("0,") and lines[2].startswith("1,")

    data_dir = out / "data"
    assert sorted(p.name for p in data_dir.iterdir()) == [
        "synth000.pgm", "synth000_mask.pgm", "synth001.pgm",
        "synth001_mask.pgm", "synth002.pgm", "synth002_mask.pgm",
        "synth003.pgm", "synth003_mask.pgm",
    ]

    report = tmp_path / "report.csv"
    rc = main(["eval", "--checkpoint", str(ckpt), "--data", str(data_dir),
               "--report", str(report)])
    assert rc == 0
    eval_out = capsys.readouterr().out
    assert "mean" in eval_out.lower()
    rows = report.read_text().strip().splitlines()
    comments = [r for r in rows if r.startswith("#")]
    body = [r for r in rows if not r.startswith("#")]
    assert comments and all(r.startswith("#") for r in rows[:len(comments)])
    assert body[0] == "id,dice,iou,hd95,hd95_defined"
    assert len(body) == 1 + 4 + 1  # header + samples + mean row
    assert body[-1].startswith("mean,")

    mask_path = tmp_path / "pred.pgm"
    rc = main(["infer", "--checkpoint", str(ckpt),
               "--image", str(data_dir / "synth000.pgm"),
               "--mask", str(mask_path)])
    assert rc == 0
    pred = load_pgm(str(mask_path)).data
    assert pred.shape == (16, 16)
    assert set(np.unique(pred)) <= {0.0, 1.0}


def test_train_is_deterministic_across_invocations(tmp_path, small_cfg, capsys):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert _train(out1, "--config", small_cfg) == 0
    assert _train(out2, "--config", small_cfg) == 0
    capsys.readouterr()
    b1 = (out1 / "checkpoint.run1").read_bytes()
    b2 = (out2 / "checkpoint.run1").read_bytes()
    assert b1 == b2
    assert (out1 / "train_log.csv").read_text() == (out2 / "train_log.csv").read_text()


def test_resume_matches_straight_run(tmp_path, small_cfg, capsys):
    straight = tmp_path / "straight"
    rc = main(["train", "--synth", "4", "--steps", "4", "--seed", "5",
               "--out", str(straight), "--config", small_cfg])
    assert rc == 0

    resumed = tmp_path / "resumed"
    assert _train(resumed, "--config", small_cfg) == 0  # steps 0-1
    rc = main(["train", "--synth", "4", "--steps", "4", "--seed", "5",
               "--out", str(resumed), "--config", small_cfg, "--resume"])
    assert rc == 0
    capsys.readouterr()

    assert (straight / "checkpoint.run1").read_bytes() == \
        (resumed / "checkpoint.run1").read_bytes()
    straight_log = (straight / "train_log.csv").read_text().splitlines()
    resumed_log = (resumed / "train_log.csv").read_text().splitlines()
    assert resumed_log == ["step,loss,dice"] + straight_log[3:]


def test_resume_rejects_architecture_changes(tmp_path, small_cfg, capsys):
    out = tmp_path / "r"
    assert _train(out, "--config", small_cfg) == 0
    cfg2 = tmp_path / "wider.cfg"
    cfg2.write_text("synth_size = 16\nheads = 2\n")
    rc = main(["train", "--synth", "4", "--steps", "4", "--seed", "5",
               "--out", str(out), "--config", str(cfg2), "--resume"])
    assert rc == 1
    assert "resume" in capsys.readouterr().err


def test_resume_explicit_checkpoint_path(tmp_path, small_cfg, capsys):
    out = tmp_path / "orig"
    assert _train(out, "--config", small_cfg) == 0
    out2 = tmp_path / "fork"
    rc = main(["train", "--synth", "4", "--steps", "4", "--seed", "5",
               "--out", str(out2), "--config", small_cfg,
               "--resume", str(out / "checkpoint.run1")])
    assert rc == 0
    capsys.readouterr()
    entries = dict(checkpoint_load(str(out2 / "checkpoint.run1")))
    assert entries["step"] == 4.0


def test_config_architecture_keys_apply(tmp_path, capsys):
    cfg = tmp_path / "thin.cfg"
    cfg.write_text("synth_size = 16\nstage_channels = 2,3,4\nheads = 1\n"
                   "reduction = 1\nbottleneck_channels = 8\n")
    out = tmp_path / "thin"
    rc = main(["train", "--synth", "2", "--steps", "1", "--seed", "3",
               "--out", str(out), "--config", str(cfg)])
    assert rc == 0
    capsys.readouterr()
    entries = dict(checkpoint_load(str(out / "checkpoint.run1")))
    assert tuple(entries["config/stage_channels"]) == (2.0, 3.0, 4.0)
    assert entries["config/heads"] == 1.0
