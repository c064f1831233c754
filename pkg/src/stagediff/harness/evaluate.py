"""Held-out metrics: validation loss, monitor discrepancy and band-split LSD."""
from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..denoiser import DenoiserParams, denoise
from ..diffusion import NoiseSchedule, forward_noise, make_schedule
from ..monitor import SslEncoder
from .checkpoint import Checkpoint
from .config import TrainConfig
from .data import Dataset, gen_dataset
from .train import VAL_SEED_OFFSET, monitor_discrepancy

LSD_EPS = 1e-8


def log_spectral_distance(X: np.ndarray, X_hat: np.ndarray, eps: float = LSD_EPS) -> float:
    """Frame-averaged RMS log-power difference for ``(F, N)`` or ``(B, F, N)`` inputs.

    Frequency bins are rows, frames are columns; batches are averaged.
    """
    X = np.asarray(X, dtype=np.float64)
    X_hat = np.asarray(X_hat, dtype=np.float64)
    if X.shape != X_hat.shape:
        raise ad.ShapeError(f"lsd: {X.shape} vs {X_hat.shape}")
    d = np.log10(X**2 + eps) - np.log10(X_hat**2 + eps)
    per_frame = np.sqrt(np.mean(d**2, axis=-2))
    return float(np.mean(per_frame))


def lsd_bands(X: np.ndarray, X_hat: np.ndarray) -> dict[str, float]:
    F = X.shape[-2]
    return {"lsd": log_spectral_distance(X, X_hat),
            "lsd_lf": log_spectral_distance(X[..., : F // 2, :], X_hat[..., : F // 2, :]),
            "lsd_hf": log_spectral_distance(X[..., F // 2:, :], X_hat[..., F // 2:, :])}


def validation_loss(params: DenoiserParams, data: Dataset, sched: NoiseSchedule,
                    seed: int, n_t: int = 10) -> float:
    """Unguided epsilon-MSE averaged over an even grid of ``n_t`` timesteps."""
    rng = np.random.default_rng([seed, 404])
    x0, cond = data.rows(np.arange(data.n))
    total = 0.0
    with ad.no_grad():
        for j in range(n_t):
            t = int((j + 0.5) * sched.T / n_t)
            eps = rng.standard_normal(x0.shape)
            eps_hat = denoise(forward_noise(x0, t, eps, sched), t, cond, None, params).data
            total += float(np.mean((eps_hat - eps) ** 2))
    return total / n_t


def ancestral_sample(params: DenoiserParams, cond, n: int, sched: NoiseSchedule,
                     rng: np.random.Generator) -> np.ndarray:
    """Full T-step reverse chain from standard normal noise; returns ``(n, d_in)`` latents."""
    z = rng.standard_normal((n, params.d_in))
    with ad.no_grad():
        for t in range(sched.T - 1, -1, -1):
            eps_hat = denoise(z, t, cond, None, params).data
            a, ab, b = sched.alpha[t], sched.alpha_bar[t], sched.beta[t]
            z = (z - b / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(a)
            if t > 0:
                z = z + np.sqrt(b) * rng.standard_normal(z.shape)
    return z


def evaluate(ckpt: Checkpoint, task: str, n_eval: int = 128, seed: int = 0) -> dict:
    cfg = TrainConfig(**{k: v for k, v in _config_from(ckpt).items()})
    if task != cfg.task:
        raise ValueError(f"checkpoint was trained on {cfg.task!r}, asked to evaluate {task!r}")
    sched = make_schedule(cfg.T, cfg.beta_min, cfg.beta_max)
    data = gen_dataset(task, cfg.data_seed + VAL_SEED_OFFSET, n_eval, cfg.F, cfg.N, cfg.C)
    enc = SslEncoder.from_seed(cfg.encoder_seed, cfg.F, cfg.d_h, cfg.d_ssl)
    params = ckpt.params
    out = {"step": ckpt.step, "task": task, "n_eval": n_eval,
           "val_loss": validation_loss(params, data, sched, seed),
           "ssl_loss": monitor_discrepancy(params, data, np.arange(min(n_eval, cfg.n_monitor)),
                                           sched, enc, seed)}
    if task == "super_res":
        rng = np.random.default_rng([seed, 505])
        _, cond = data.rows(np.arange(data.n))
        gen = ancestral_sample(params, cond, data.n * data.N, sched, rng)
        out.update(lsd_bands(data.x, data.to_images(gen)))
    return out


def _config_from(ckpt: Checkpoint) -> dict:
    from .config import parse_pairs
    return parse_pairs((k, str(v)) for k, v in ckpt.config.items())
