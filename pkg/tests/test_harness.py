import csv

import numpy as np
import pytest

from stagediff.denoiser import init_params
from stagediff.diffusion import ConfigError
from stagediff.harness import (CheckpointError, TrainConfig, Trainer, gen_dataset, load_checkpoint,
                               load_config, log_spectral_distance, lsd_bands, save_checkpoint, train)
from stagediff.harness.checkpoint import read_manifest
from stagediff.harness.config import write_config
from stagediff.harness.evaluate import evaluate
from stagediff.harness.train import MONITOR_HEADER, STEP_HEADER
from stagediff.structure import similarity_matrix, write_similarity_csv

from reference_loop import plain_losses

SMALL = dict(K_tot=40, n_train=64, n_val=32, n_monitor=8, d=16, L_b=3, C=4, d_ssl=4, d_h=8,
             batch_size=4, frames_per_sample=4, delta_k=5, m=3, M_interval=20, T=20)


def small(**kw):
    return TrainConfig(**{**SMALL, **kw})


# -- config ---------------------------------------------------------------

def test_config_file_and_overrides(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# comment\nseed = 3\nlambda=0.01  # trailing\nguidance_enabled=on\n\n")
    cfg = load_config(p, ["seed=5", "s_scale=auto", "nu=4"])
    assert cfg.seed == 5 and cfg.lam == 0.01 and cfg.guidance_enabled and cfg.s_scale is None
    assert cfg.nu == 4.0


def test_config_rejections(tmp_path):
    with pytest.raises(ConfigError, match="'bogus'"):
        load_config(None, ["bogus=1"])
    with pytest.raises(ConfigError):
        load_config(None, ["rho_ssl=0"])
    with pytest.raises(ConfigError):
        load_config(None, ["seed"])
    with pytest.raises(ConfigError):
        load_config(None, ["guidance_enabled=maybe"])
    with pytest.raises(ConfigError):
        load_config(None, ["structure_reg_enabled=true"])


def test_config_write_round_trip(tmp_path):
    cfg = small(seed=9, guidance_enabled=True, s_phi=0.5)
    write_config(cfg, tmp_path / "c.cfg")
    assert load_config(tmp_path / "c.cfg") == cfg


# -- data -------------------------------------------------------------------

def test_dataset_deterministic_and_normalised():
    a, b = gen_dataset("class_cond", 3, 20), gen_dataset("class_cond", 3, 20)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.labels, b.labels)
    assert not np.array_equal(a.x, gen_dataset("class_cond", 4, 20).x)
    assert np.allclose(a.x.mean(axis=(1, 2)), 0, atol=1e-12)
    assert np.allclose(a.x.std(axis=(1, 2)), 1, atol=1e-12)


def test_super_res_condition_has_no_high_band():
    d = gen_dataset("super_res", 0, 10)
    assert np.array_equal(d.cond[:, 8:, :], np.zeros((10, 8, 32)))
    assert np.array_equal(d.cond[:, :8, :], d.x[:, :8, :])


def test_classes_are_separable():
    d = gen_dataset("class_cond", 0, 400)
    means = np.stack([d.x[d.labels == c].mean(axis=0) for c in range(8)])
    # nearest class mean recovers most labels
    dist = ((d.x[:, None] - means[None]) ** 2).sum(axis=(2, 3))
    assert np.mean(dist.argmin(axis=1) == d.labels) > 0.9


def test_rows_round_trip():
    d = gen_dataset("super_res", 1, 5)
    rows, cond = d.rows(np.arange(5))
    assert rows.shape == (5 * 32, 16)
    assert np.array_equal(d.to_images(rows), d.x)
    assert cond.payload.shape == rows.shape


# -- checkpoint ------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    p = init_params(3, d=8, d_in=4, L_b=2, C=3, d_ssl=2)
    path = save_checkpoint(p, {"seed": "3"}, 17, tmp_path / "a.ckpt")
    ck = load_checkpoint(path)
    assert ck.step == 17 and ck.config == {"seed": "3"}
    for (n1, t1), (n2, t2) in zip(p.named_tensors(), ck.params.named_tensors()):
        assert n1 == n2
        assert np.max(np.abs(t1.data - t2.data)) <= np.max(np.abs(t1.data)) * 2.0**-24 + 1e-45
    manifest, _ = read_manifest(path)
    assert len(manifest["tensors"]) == len(p.tensors())


def test_checkpoint_corruption(tmp_path):
    p = init_params(0, d=8, d_in=4, L_b=2, C=3, d_ssl=2)
    path = save_checkpoint(p, {}, 0, tmp_path / "a.ckpt")
    raw = path.read_bytes()
    for bad in (raw[:-3], raw[:40], b"XXXX" + raw[4:], raw.replace(b'"nbytes"', b'"nbyte"', 1)):
        path.write_bytes(bad)
        with pytest.raises(CheckpointError):
            load_checkpoint(path)


# -- LSD --------------------------------------------------------------------

def test_lsd_examples():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(2, 8, 5))
    assert lsd_bands(X, X) == {"lsd": 0.0, "lsd_lf": 0.0, "lsd_hf": 0.0}
    Y = X.copy()
    Y[:, 4:, :] *= 3.0
    b = lsd_bands(X, Y)
    assert b["lsd_lf"] == 0.0 and b["lsd_hf"] > 0


def test_lsd_loop_oracle():
    rng = np.random.default_rng(1)
    X, Y = rng.normal(size=(3, 6, 4)), rng.normal(size=(3, 6, 4))
    frames = []
    for b in range(3):
        for n in range(4):
            acc = sum((np.log10(X[b, f, n] ** 2 + 1e-8) - np.log10(Y[b, f, n] ** 2 + 1e-8)) ** 2
                      for f in range(6))
            frames.append(np.sqrt(acc / 6))
    assert abs(log_spectral_distance(X, Y) - np.mean(frames)) <= 1e-10


# -- training loop ----------------------------------------------------------

def test_ablation_identity_against_plain_loop():
    cfg = small(K_tot=30)
    log, _ = train(cfg)
    ref = plain_losses(cfg, 30)
    assert np.array_equal(log.losses, ref)
    assert all(r[2] == 0.0 and r[3] == 0.0 and r[4] == 0.0 for r in log.steps)


def test_guidance_after_cutoff_is_bit_identical_step():
    # once gamma hits zero the guided loop takes exactly the unguided step
    cfg = small(K_tot=12, rho_ssl=0.25)
    a, b = Trainer(cfg), Trainer(cfg.replace(guidance_enabled=True))
    b.params = a.params.copy()
    for _ in range(3):
        a.step(), b.step()
    b.params = a.params.copy()
    la, lb = a.step(), b.step()
    assert b.log.steps[-1][2] == 0.0 and la == lb


def test_guidance_changes_early_loss():
    cfg = small(K_tot=5)
    a, b = train(cfg)[0].losses, train(cfg.replace(guidance_enabled=True))[0].losses
    assert not np.array_equal(a, b)


def test_structure_gate(tmp_path):
    ref = tmp_path / "S.csv"
    write_similarity_csv(similarity_matrix(init_params(0, d=16, d_in=16, L_b=3, C=4, d_ssl=4)), ref)
    cfg = small(K_tot=40, structure_reg_enabled=True, s_ref_path=str(ref), rho_sp=0.5, k_on_frac=0.25)
    log, _ = train(cfg)
    active = [r[0] for r in log.steps if r[3] != 0.0]
    assert active and min(active) >= 10 and max(active) <= 20
    assert all(r[4] >= 0 for r in log.steps)


def test_structure_requires_matching_reference(tmp_path):
    ref = tmp_path / "S.csv"
    write_similarity_csv(np.eye(2), ref)
    with pytest.raises(ConfigError):
        Trainer(small(structure_reg_enabled=True, s_ref_path=str(ref)))
    with pytest.raises(ConfigError):
        Trainer(small(structure_reg_enabled=True, s_ref_path=str(tmp_path / "missing.csv")))


def test_seed_determinism_and_outputs(tmp_path):
    cfg = small(guidance_enabled=True, adaptive_t_enabled=True, save_steps="20,40")
    a, _ = train(cfg, tmp_path / "a")
    b, _ = train(cfg, tmp_path / "b")
    assert a.steps == b.steps and a.monitor == b.monitor
    for name in ("steps.csv", "monitor.csv", "similarity/S_step000040.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    with (tmp_path / "a" / "steps.csv").open() as fh:
        assert tuple(next(csv.reader(fh))) == STEP_HEADER
    with (tmp_path / "a" / "monitor.csv").open() as fh:
        assert tuple(next(csv.reader(fh))) == MONITOR_HEADER
    assert sorted(p.name for p in (tmp_path / "a" / "checkpoints").iterdir()) == [
        "step000020.ckpt", "step000040.ckpt"]
    assert sorted(a.snapshots) == [20, 40]
    assert (tmp_path / "a" / "final.ckpt").is_file()
    c, _ = train(cfg.replace(seed=1))
    assert c.steps != a.steps


def test_monitor_schedule_and_window():
    log, _ = train(small(K_tot=30, adaptive_t_enabled=True))
    assert [r[0] for r in log.monitor] == [5, 10, 15, 20, 25, 30]
    assert log.monitor[1][2] is None and log.monitor[2][2] is not None
    mus = [r[3] for r in log.monitor if r[3] is not None]
    assert all(0 < m < 1 for m in mus)


def test_evaluate_reports_metrics(tmp_path):
    cfg = small(task="super_res", K_tot=5)
    train(cfg, tmp_path)
    ck = load_checkpoint(tmp_path / "final.ckpt")
    m = evaluate(ck, "super_res", n_eval=4)
    assert {"val_loss", "ssl_loss", "lsd", "lsd_lf", "lsd_hf"} <= set(m)
    assert m["step"] == 5
    with pytest.raises(ValueError):
        evaluate(ck, "class_cond")
