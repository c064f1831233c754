"""Stage-aware training loop.

One step draws a batch, noises it at sampled timesteps, optionally injects the
masked SSL context, and takes a plain SGD step on

    L = L_diff + lambda * beta_sp * 1(k_on <= k <= rho_sp * K_tot) * L_sp

Every ``delta_k`` steps the frozen-encoder discrepancy is measured, the regime
window updated, and the timestep law and ``beta_sp`` refreshed.

Randomness is split into independent streams (batch indices, timesteps,
noise; masks are keyed by step), so a disabled mechanism never shifts the
draws of the others.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import autodiff as ad
from ..denoiser import DenoiserParams, denoise, init_params
from ..diffusion import ConfigError, diffusion_loss, forward_noise, make_schedule, x0_from_eps
from ..guidance import GuidanceSchedule, apply_guidance, gamma, make_mask
from ..monitor import RegimeWindow, SslEncoder, encode, ssl_discrepancy
from ..sampler import SamplerState
from ..structure import (block_stack, build_affinity, beta_sp, add_block_grad,
                         read_similarity_csv, similarity_matrix, sp_loss_and_grad,
                         write_similarity_csv)
from .checkpoint import save_checkpoint
from .config import TrainConfig
from .data import Dataset, gen_dataset

log = logging.getLogger(__name__)

STEP_HEADER = ("step", "diff_loss", "gamma", "beta_sp", "sp_loss", "t")
MONITOR_HEADER = ("step", "ssl_loss", "g", "mu")
VAL_SEED_OFFSET = 1000


class DivergenceError(RuntimeError):
    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss {value} at step {step}")
        self.step = step


@dataclass
class RunLog:
    steps: list[tuple] = field(default_factory=list)
    monitor: list[tuple] = field(default_factory=list)
    snapshots: dict[int, np.ndarray] = field(default_factory=dict)

    def write(self, outdir) -> None:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        _write_csv(outdir / "steps.csv", STEP_HEADER, self.steps)
        _write_csv(outdir / "monitor.csv", MONITOR_HEADER, self.monitor)
        for k, S in sorted(self.snapshots.items()):
            write_similarity_csv(S, outdir / "similarity" / f"S_step{k:06d}.csv")

    @property
    def losses(self) -> np.ndarray:
        return np.array([r[1] for r in self.steps])


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    return repr(float(v))


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow(_fmt(v) for v in r)


def monitor_timesteps(T: int) -> list[int]:
    return [int(math.floor(q * T)) for q in (0.25, 0.5, 0.75)]


def monitor_discrepancy(params: DenoiserParams, data: Dataset, idx: np.ndarray, sched,
                        enc: SslEncoder, noise_seed: int) -> float:
    """Mean frozen-feature discrepancy of unguided clean-signal estimates."""
    x0, cond = data.rows(idx)
    rng = np.random.default_rng([noise_seed, 202])
    vals = []
    with ad.no_grad():
        for t in monitor_timesteps(sched.T):
            eps = rng.standard_normal(x0.shape)
            z_t = forward_noise(x0, t, eps, sched)
            eps_hat = denoise(z_t, t, cond, None, params).data
            x0_hat = x0_from_eps(z_t, eps_hat, t, sched)
            vals.append(ssl_discrepancy(data.to_images(x0_hat), data.x[idx], enc))
    return float(np.mean(vals))


def sgd_step(params: DenoiserParams, lr: float) -> None:
    for t in params.tensors():
        t.data = t.data - lr * t.grad
        t.zero_grad()


class Trainer:
    """Owns all mutable run state; :meth:`step` advances one optimisation step."""

    def __init__(self, cfg: TrainConfig, train_data: Dataset | None = None,
                 val_data: Dataset | None = None):
        self.cfg = cfg
        self.sched = make_schedule(cfg.T, cfg.beta_min, cfg.beta_max)
        self.train = train_data or gen_dataset(cfg.task, cfg.data_seed, cfg.n_train, cfg.F, cfg.N, cfg.C)
        self.val = val_data or gen_dataset(cfg.task, cfg.data_seed + VAL_SEED_OFFSET, cfg.n_val,
                                           cfg.F, cfg.N, cfg.C)
        self.params = init_params(cfg.seed, cfg.d, cfg.d_in, cfg.L_b, cfg.C, cfg.d_ssl,
                                  T=cfg.T, cond_kind=cfg.cond_kind)
        self.enc = SslEncoder.from_seed(cfg.encoder_seed, cfg.F, cfg.d_h, cfg.d_ssl)
        self.window = RegimeWindow(capacity=cfg.m, interval=cfg.delta_k)
        self.sampler = SamplerState(T=cfg.T, nu=cfg.nu, s_scale=cfg.s_scale)
        self.guide = GuidanceSchedule(cfg.rho_ssl, cfg.K_tot)
        self.s_phi = cfg.s_phi
        self.g: float | None = None
        self.beta_sp: float | None = None
        self.k = 0

        self.data_rng = np.random.default_rng([cfg.seed, 1])
        self.t_rng = np.random.default_rng([cfg.seed, 2])
        self.noise_rng = np.random.default_rng([cfg.seed, 3])

        self.ssl_feats = encode(self.train.x, self.enc) if cfg.guidance_enabled else None
        self.aff = None
        if cfg.structure_reg_enabled:
            path = Path(cfg.s_ref_path)
            if not path.is_file():
                raise ConfigError(f"s_ref_path {str(path)!r} does not exist")
            S_ref = read_similarity_csv(path)
            if S_ref.shape[0] != cfg.L_b:
                raise ConfigError(f"S_ref has {S_ref.shape[0]} blocks, model has {cfg.L_b}")
            self.aff = build_affinity(S_ref, cfg.affinity_norm)
        self.k_on = int(math.ceil(cfg.k_on_frac * cfg.K_tot))
        self.log = RunLog()

    # -- per-step pieces -------------------------------------------------
    def structure_active(self, k: int) -> bool:
        return (self.aff is not None and self.beta_sp is not None
                and self.k_on <= k <= self.cfg.rho_sp * self.cfg.K_tot)

    def guidance_context(self, k: int, idx: np.ndarray, f: int) -> tuple[float, np.ndarray | None]:
        """Masked context per latent row; one mask is shared by the whole step."""
        if not self.cfg.guidance_enabled:
            return 0.0, None
        gk = gamma(k, self.guide)
        if gk == 0.0:
            return gk, None
        M = make_mask(self.cfg.d_ssl, self.cfg.N, gk, self.cfg.seed, k)
        return gk, np.repeat(apply_guidance(self.ssl_feats[idx], M), f, axis=0)

    def draw_timesteps(self, B: int) -> np.ndarray:
        if self.cfg.adaptive_t_enabled:
            return self.sampler.sample(self.t_rng, B)
        return self.t_rng.integers(0, self.cfg.T, size=B)

    def draw_batch(self) -> tuple[np.ndarray, np.ndarray | None]:
        cfg = self.cfg
        idx = self.data_rng.integers(0, self.train.n, size=cfg.batch_size)
        if cfg.frames_per_sample in (0, cfg.N):
            return idx, None
        frames = self.data_rng.integers(0, cfg.N, size=(cfg.batch_size, cfg.frames_per_sample))
        return idx, frames

    def step(self) -> float:
        cfg, k = self.cfg, self.k
        idx, frames = self.draw_batch()
        t = self.draw_timesteps(cfg.batch_size)
        x0, cond = self.train.rows(idx, frames)
        f = x0.shape[0] // idx.size
        t_rows = np.repeat(t, f)
        eps = self.noise_rng.standard_normal(x0.shape)
        z_t = forward_noise(x0, t_rows, eps, self.sched)
        gk, ctx = self.guidance_context(k, idx, f)

        loss = diffusion_loss(denoise(z_t, t_rows, cond, ctx, self.params), eps)
        ad.backward(loss, retain_graph=False)
        value = loss.item()

        sp_val, coef = 0.0, 0.0
        if self.structure_active(k):
            sp_val, grad = sp_loss_and_grad(block_stack(self.params), self.aff)
            coef = self.beta_sp
            add_block_grad(self.params, grad, cfg.lam * coef)
            value_total = value + cfg.lam * coef * sp_val
        else:
            value_total = value
        if not math.isfinite(value_total):
            raise DivergenceError(k, value_total)
        sgd_step(self.params, cfg.lr)

        self.log.steps.append((k, value, gk, coef, sp_val, float(np.mean(t))))
        self.k += 1
        self.after_step()
        return value

    def after_step(self) -> None:
        cfg, done = self.cfg, self.k
        if done % cfg.delta_k == 0:
            self.observe(done)
        if done % cfg.M_interval == 0 or done == cfg.K_tot:
            self.log.snapshots[done] = similarity_matrix(self.params)
        if done in self.save_steps:
            save_checkpoint(self.params, self.cfg.to_mapping(), done,
                            self.outdir / "checkpoints" / f"step{done:06d}.ckpt")

    def monitor_indices(self, done: int) -> tuple[Dataset, np.ndarray, int]:
        n = min(self.cfg.n_monitor, self.val.n)
        if self.cfg.monitor_mode == "fixed":
            return self.val, np.arange(n), self.cfg.seed
        rng = np.random.default_rng([self.cfg.seed, done, 303])
        return self.train, rng.choice(self.train.n, n, replace=False), self.cfg.seed + done

    def observe(self, done: int) -> None:
        data, idx, nseed = self.monitor_indices(done)
        L = monitor_discrepancy(self.params, data, idx, self.sched, self.enc, nseed)
        g = self.window.observe(done, L)
        if g is not None:
            self.g = g
            self.sampler.update(g)
            if self.s_phi is None:
                self.s_phi = max(abs(g), 1e-8)
            self.beta_sp = beta_sp(g, self.s_phi)
        self.log.monitor.append((done, L, self.g, self.sampler.mu))

    # -- driver ----------------------------------------------------------
    save_steps: frozenset = frozenset()
    outdir: Path = Path(".")

    def run(self, outdir=None) -> RunLog:
        if outdir is not None:
            self.outdir = Path(outdir)
            self.save_steps = frozenset(self.cfg.checkpoint_steps)
        try:
            while self.k < self.cfg.K_tot:
                self.step()
        finally:
            if outdir is not None:
                self.log.write(self.outdir)
        return self.log


def train(cfg: TrainConfig, outdir=None) -> tuple[RunLog, DenoiserParams]:
    """Run ``cfg.K_tot`` steps; with ``outdir`` also write logs and checkpoints."""
    trainer = Trainer(cfg)
    runlog = trainer.run(outdir)
    if outdir is not None:
        save_checkpoint(trainer.params, cfg.to_mapping(), trainer.k, Path(outdir) / "final.ckpt")
    return runlog, trainer.params
