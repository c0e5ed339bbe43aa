import csv
import subprocess
import sys

import numpy as np
import pytest

from rtrecon import cli, config, records

TINY_CFG = """\
# small enough to train in a couple of seconds
n = 3
height = 16
width = 16
channels = 4
window_size = 2
ru1_scales = 1
ru2_scales = 1
ru3_scales = 1
unroll = 2
steps = 2
batch_size = 2
lr = 0.001
ablation_seeds = 0
sweep_unrolls = 1, 2
"""


@pytest.fixture()
def tiny(tmp_path):
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text(TINY_CFG)
    data = tmp_path / "data"
    assert cli.main(["gen-data", "--config", str(cfg), "--out", str(data)]) == 0
    return tmp_path, cfg, data


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_selftest_subprocess_exit_zero(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "rtrecon", "selftest", "--out", str(tmp_path)],
                          capture_output=True, text=True, timeout=300)
    assert proc.returncode == 0, proc.stdout + proc.stderr
    assert proc.stdout.strip().endswith("selftest passed")
    assert "FAIL" not in proc.stdout


def test_gen_data_is_reproducible(tiny):
    tmp, cfg, data = tiny
    again = tmp / "again"
    assert cli.main(["gen-data", "--config", str(cfg), "--out", str(again)]) == 0
    names = sorted(p.name for p in data.iterdir())
    assert names == sorted(p.name for p in again.iterdir())
    assert "effective_config.txt" in names and "manifest.txt" in names
    assert all((data / n).read_bytes() == (again / n).read_bytes() for n in names)
    other = tmp / "other"
    assert cli.main(["gen-data", "--config", str(cfg), "--out", str(other), "--seed", "5", "--n", "2"]) == 0
    assert (other / "sample_0000.gt.rfk").read_bytes() != (data / "sample_0000.gt.rfk").read_bytes()
    assert not (other / "sample_0002.gt.rfk").exists()


def test_train_eval_recon_pipeline(tiny, capsys):
    tmp, cfg, data = tiny
    run = tmp / "run"
    assert cli.main(["train", "--config", str(cfg), "--data", str(data), "--out", str(run)]) == 0
    for name in ("checkpoint.rfk", "loss.csv", "loss.png", "effective_config.txt"):
        assert (run / name).exists(), name
    assert [r["step"] for r in read_csv(run / "loss.csv")] == ["1", "2"]

    ck = str(run / "checkpoint.rfk")
    ev = tmp / "eval"
    assert cli.main(["eval", "--config", str(cfg), "--data", str(data), "--checkpoint", ck, "--out", str(ev)]) == 0
    rows = read_csv(ev / "metrics.csv")
    assert len(rows) == 3 and set(rows[0]) >= {"psnr", "ssim", "zf_psnr", "psnr_low", "psnr_high"}
    summary = (ev / "summary.txt").read_text()
    assert "zf_psnr = " in summary and "config.unroll = 2" in summary
    assert (ev / "bands.png").exists() and len(read_csv(ev / "bands.csv")) == 3

    rc = tmp / "recon"
    assert cli.main(["recon", "--config", str(cfg), "--data", str(data), "--checkpoint", ck,
                     "--sample", "1", "--out", str(rc)]) == 0
    err = records.load_record(rc / "error_map.rfk", "error_map")
    mag = records.load_record(rc / "recon_magnitude.rfk", "recon_magnitude")
    assert err.shape == mag.shape == (16, 16) and (err >= 0).all()
    stats = read_csv(rc / "error_stats.csv")
    assert [r["image"] for r in stats] == ["model", "zero_filled"]
    assert float(stats[0]["max"]) == pytest.approx(err.max(), rel=1e-6)
    assert (rc / "error_map.png").exists()
    assert "PSNR" in capsys.readouterr().out


def test_kspace_analysis_without_checkpoint(tiny):
    tmp, cfg, data = tiny
    out = tmp / "bands"
    assert cli.main(["kspace-analysis", "--config", str(cfg), "--data", str(data), "--out", str(out)]) == 0
    rows = read_csv(out / "bands.csv")
    # without a checkpoint the zero-filled images are analysed twice
    assert all(r["low_psnr"] == r["zf_low_psnr"] for r in rows)
    assert all(np.isfinite(float(r["high_psnr"])) for r in rows)


def test_ablate_and_sweep(tiny):
    tmp, cfg, data = tiny
    ab = tmp / "ablate"
    assert cli.main(["ablate", "--config", str(cfg), "--data", str(data), "--out", str(ab)]) == 0
    assert len(read_csv(ab / "ablation.csv")) == 5
    assert (ab / "ablation.txt").read_text().startswith("RU1 RU2 RU3 RM  RPTL")
    assert (ab / "ablation.png").exists()
    sw = tmp / "sweep"
    assert cli.main(["sweep-unroll", "--config", str(cfg), "--data", str(data), "--out", str(sw)]) == 0
    assert [r["T"] for r in read_csv(sw / "unroll.csv")] == ["1", "2"]
    assert (sw / "unroll.png").exists()


def test_config_echo_replays(tiny):
    tmp, cfg, data = tiny
    first = tmp / "first"
    assert cli.main(["gen-data", "--config", str(cfg), "--set", "noise_sigma=0.01", "--out", str(first)]) == 0
    echo = first / config.ECHO_NAME
    text = echo.read_text()
    assert text.startswith("# command = gen-data") and "noise_sigma = 0.01" in text
    second = tmp / "second"
    assert cli.main(["gen-data", "--config", str(echo), "--out", str(second)]) == 0
    assert (second / config.ECHO_NAME).read_text() == text
    assert (first / "sample_0000.ksp.rfk").read_bytes() == (second / "sample_0000.ksp.rfk").read_bytes()


def test_flags_take_precedence_over_overrides():
    cfg = config.resolve(None, ["steps = 7", "lr=0.5"], {"steps": 9, "seed": None})
    assert cfg["steps"] == 9 and cfg["lr"] == 0.5 and cfg["seed"] == 0
    assert config.parse_text("ru1_scales = 1, 3\nrefine = false")["ru1_scales"] == (1, 3)


@pytest.mark.parametrize("argv", [
    ["frobnicate"],
    ["train", "--bogus"],
    ["train", "--set", "no_such_key=1"],
    ["train", "--set", "steps=abc"],
    ["train", "--set", "height=60"],
    ["eval"],  # no checkpoint
])
def test_usage_errors_exit_2(argv, tmp_path, tiny):
    _, _, data = tiny
    extra = ["--out", str(tmp_path / "o")] if argv[0] != "frobnicate" else []
    if argv == ["eval"]:
        extra += ["--data", str(data)]
    assert cli.main(argv + extra) == 2


def test_domain_errors_exit_1(tiny, capsys):
    tmp, cfg, data = tiny
    assert cli.main(["train", "--config", str(cfg), "--data", str(tmp / "nowhere"), "--out", str(tmp / "x")]) == 1
    assert "rtrecon train: OSError in dataset.read_manifest" in capsys.readouterr().err
    (tmp / "bad.rfk").write_bytes(b"NOPE")
    assert cli.main(["eval", "--config", str(cfg), "--data", str(data), "--checkpoint", str(tmp / "bad.rfk"),
                     "--out", str(tmp / "y")]) == 1
    assert "FormatError in records.load_records" in capsys.readouterr().err
    # dataset geometry disagrees with the model
    assert cli.main(["train", "--config", str(cfg), "--set", "height=32", "--set", "width=32",
                     "--data", str(data), "--out", str(tmp / "z")]) == 1
    assert "ShapeError in training._check_geometry" in capsys.readouterr().err
