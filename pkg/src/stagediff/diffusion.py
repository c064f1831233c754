"""Forward noising process and the epsilon-prediction objective."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    @property
    def T(self) -> int:
        return int(self.beta.shape[0])

    def check_t(self, t) -> np.ndarray:
        t = np.asarray(t)
        if t.size and (t.min() < 0 or t.max() >= self.T):
            raise IndexError(f"timestep out of range [0, {self.T}): {t}")
        return t


def make_schedule(T: int = 100, beta_min: float = 1e-4, beta_max: float = 0.02) -> NoiseSchedule:
    """Linear beta schedule with running-product ``alpha_bar``."""
    if T < 2:
        raise ConfigError(f"T must be >= 2, got {T}")
    if not 0.0 < beta_min <= beta_max < 1.0:
        raise ConfigError(f"need 0 < beta_min <= beta_max < 1, got {beta_min}, {beta_max}")
    beta = np.linspace(beta_min, beta_max, T)
    alpha = 1.0 - beta
    return NoiseSchedule(beta=beta, alpha=alpha, alpha_bar=np.cumprod(alpha))


def _coef(s: NoiseSchedule, t, ndim: int) -> np.ndarray:
    ab = s.alpha_bar[s.check_t(t)]
    # per-sample coefficient for batched t, broadcast over trailing feature axes
    return ab.reshape(ab.shape + (1,) * (ndim - ab.ndim)) if ab.ndim else ab


def forward_noise(z0: np.ndarray, t, eps: np.ndarray, s: NoiseSchedule) -> np.ndarray:
    """``sqrt(ab_t) * z0 + sqrt(1 - ab_t) * eps``; ``t`` may be a scalar or one per row."""
    z0 = np.asarray(z0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if z0.shape != eps.shape:
        raise ad.ShapeError(f"forward_noise: z0 {z0.shape} vs eps {eps.shape}")
    ab = _coef(s, t, z0.ndim)
    return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps


def x0_from_eps(z_t: np.ndarray, eps_hat: np.ndarray, t, s: NoiseSchedule) -> np.ndarray:
    z_t = np.asarray(z_t, dtype=np.float64)
    ab = _coef(s, t, z_t.ndim)
    if np.any(ab < 1e-8):
        raise FloatingPointError("alpha_bar below 1e-8: clean-signal reconstruction is singular")
    return (z_t - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)


def diffusion_loss(eps_hat, eps):
    """Mean squared error over all entries.

    Accepts tensors (returns a differentiable scalar tensor) or arrays
    (returns a float).
    """
    if isinstance(eps_hat, ad.Tensor) or isinstance(eps, ad.Tensor):
        a, b = ad._wrap(eps_hat), ad._wrap(eps)
        if a.shape != b.shape:
            raise ad.ShapeError(f"diffusion_loss: {a.shape} vs {b.shape}")
        return ad.mean(ad.square(ad.sub(a, b)))
    a, b = np.asarray(eps_hat, dtype=np.float64), np.asarray(eps, dtype=np.float64)
    if a.shape != b.shape:
        raise ad.ShapeError(f"diffusion_loss: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))
