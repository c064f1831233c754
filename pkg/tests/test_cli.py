import csv

import numpy as np
import pytest

from stagediff.cli import main
from stagediff.denoiser import init_params
from stagediff.harness import save_checkpoint
from stagediff.structure import read_similarity_csv

BASE = ["K_tot=20", "n_train=32", "n_val=16", "n_monitor=4", "d=16", "L_b=3", "C=4", "d_ssl=4",
        "d_h=8", "batch_size=4", "frames_per_sample=4", "delta_k=5", "m=3", "M_interval=10", "T=20"]


def sets(*extra):
    return [a for kv in (*BASE, *extra) for a in ("--set", kv)]


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["train", *sets("guidance_enabled=true", "save_steps=5,10,15,20"), "--out", str(out)]) == 0
    return out


def test_train_writes_outputs(run_dir):
    for name in ("steps.csv", "monitor.csv", "final.ckpt", "config.cfg", "similarity/S_step000020.csv"):
        assert (run_dir / name).is_file()


def test_train_is_byte_deterministic(run_dir, tmp_path):
    assert main(["train", *sets("guidance_enabled=true", "save_steps=5,10,15,20"), "--out", str(tmp_path)]) == 0
    for name in ("steps.csv", "monitor.csv", "final.ckpt"):
        assert (tmp_path / name).read_bytes() == (run_dir / name).read_bytes()


def test_train_config_file_then_overrides(tmp_path):
    cfg = tmp_path / "base.cfg"
    cfg.write_text("\n".join(BASE) + "\nseed=4\n")
    assert main(["train", "--config", str(cfg), "--set", "K_tot=5", "--out", str(tmp_path / "o")]) == 0
    assert "K_tot=5\n" in (tmp_path / "o" / "config.cfg").read_text()
    assert "seed=4\n" in (tmp_path / "o" / "config.cfg").read_text()


def test_bad_key_and_usage(tmp_path, caplog):
    assert main(["train", "--set", "nonsense=1", "--out", str(tmp_path)]) == 1
    assert "nonsense" in caplog.text
    assert main(["frobnicate"]) == 1
    assert main(["train"]) == 1


def test_eval(run_dir, tmp_path, capsys):
    assert main(["eval", str(run_dir / "final.ckpt"), "--n-eval", "4", "--out", str(tmp_path / "m.json")]) == 0
    assert "val_loss" in (tmp_path / "m.json").read_text()
    assert main(["eval", str(run_dir / "final.ckpt"), "--task", "super_res"]) == 2


def test_analyze_cka(run_dir, tmp_path):
    cks = sorted(str(p) for p in (run_dir / "checkpoints").iterdir())
    assert len(cks) == 4
    assert main(["analyze-cka", *cks, "--out", str(tmp_path)]) == 0
    mats = sorted(tmp_path.glob("S_*.csv"))
    assert len(mats) == 4
    for m in mats:
        S = read_similarity_csv(m)
        assert np.array_equal(S, S.T) and np.array_equal(np.diag(S), np.ones(3))
    with (tmp_path / "summary.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4 and [int(r["step"]) for r in rows] == [5, 10, 15, 20]


def test_analyze_cka_identical_blocks(tmp_path):
    p = init_params(0, d=8, d_in=4, L_b=3, C=2, d_ssl=2)
    for blk in p.blocks[1:]:
        blk.W.data, blk.V.data = p.blocks[0].W.data.copy(), p.blocks[0].V.data.copy()
    ck = save_checkpoint(p, {}, 0, tmp_path / "same.ckpt")
    assert main(["analyze-cka", str(ck), "--out", str(tmp_path / "o")]) == 0
    S = read_similarity_csv(tmp_path / "o" / "S_same.csv")
    assert np.allclose(S, 1.0, atol=1e-12)


def test_analyze_cka_skips_bad_inputs(run_dir, tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"nope")
    assert main(["analyze-cka", str(bad), str(run_dir / "final.ckpt"), "--out", str(tmp_path / "o")]) == 0
    assert main(["analyze-cka", str(bad), "--out", str(tmp_path / "o2")]) == 2


def test_export_ref_feeds_training(run_dir, tmp_path):
    ref = tmp_path / "S_ref.csv"
    assert main(["export-ref", str(run_dir / "final.ckpt"), "--out", str(ref)]) == 0
    S = read_similarity_csv(ref)
    assert np.array_equal(S, S.T) and np.array_equal(np.diag(S), np.ones(3))
    early = tmp_path / "S_early.csv"
    assert main(["export-ref", str(run_dir / "checkpoints" / "step000005.ckpt"), "--out", str(early)]) == 0
    assert not np.array_equal(read_similarity_csv(early), S)
    out = tmp_path / "sr"
    assert main(["train", *sets("structure_reg_enabled=true", f"s_ref_path={ref}"), "--out", str(out)]) == 0


def test_export_ref_zero_block(tmp_path, caplog):
    p = init_params(0, d=4, d_in=4, L_b=2, C=2, d_ssl=2)
    p.blocks[1].W.data = np.zeros((4, 4))
    p.blocks[1].V.data = np.zeros((4, 4))
    ck = save_checkpoint(p, {}, 0, tmp_path / "z.ckpt")
    assert main(["export-ref", str(ck), "--out", str(tmp_path / "S.csv")]) == 2
    assert "block 1" in caplog.text


def test_plot_data(run_dir, tmp_path):
    out = tmp_path / "plot.csv"
    assert main(["plot-data", str(run_dir), "--out", str(out), "--max-rows", "50"]) == 0
    with out.open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) <= 50
    gamma = [r for r in rows if r["series"] == "gamma"]
    assert gamma and float(gamma[-1]["value"]) == 0.0
    assert {"diff_loss", "g", "mu", "ssl_loss"} <= {r["series"] for r in rows}
    before = (run_dir / "steps.csv").read_bytes()
    assert main(["plot-data", str(run_dir), "--out", str(tmp_path / "again.csv"), "--max-rows", "50"]) == 0
    assert (tmp_path / "again.csv").read_bytes() == out.read_bytes()
    assert (run_dir / "steps.csv").read_bytes() == before


def test_plot_data_empty_dir(tmp_path):
    assert main(["plot-data", str(tmp_path), "--out", str(tmp_path / "p.csv")]) == 2
