"""Regime-driven timestep sampling through a mode-parameterized Beta law."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def mode_from_progress(g: float, s_scale: float) -> float:
    """Map progress ``g`` to a Beta mode: ``1 / (1 + exp(g / s_scale))``."""
    if s_scale <= 0:
        raise ValueError(f"s_scale must be positive, got {s_scale}")
    if not math.isfinite(g):
        raise ValueError(f"progress signal must be finite, got {g}")
    z = g / s_scale
    # overflow-safe logistic of -z
    if z >= 0:
        e = math.exp(-z)
        return e / (1.0 + e)
    return 1.0 / (1.0 + math.exp(z))


def beta_shapes(mu: float, nu: float) -> tuple[float, float]:
    """Shapes with mode ``mu`` and concentration ``alpha + beta = nu``."""
    if nu <= 2:
        raise ValueError(f"concentration must exceed 2 for a defined mode, got {nu}")
    if not 0.0 < mu < 1.0:
        raise ValueError(f"mode must lie in (0, 1), got {mu}")
    return mu * (nu - 2.0) + 1.0, (1.0 - mu) * (nu - 2.0) + 1.0


def beta_mode(a: float, b: float) -> float:
    return (a - 1.0) / (a + b - 2.0)


def sample_timestep(a: float, b: float, T: int, rng: np.random.Generator, size=None):
    """Draw ``tau ~ Beta(a, b)`` and return ``min(T - 1, floor(tau * T))``."""
    if not (a > 0 and b > 0):
        raise ValueError(f"Beta shapes must be positive, got {a}, {b}")
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    tau = rng.beta(a, b, size=size)
    return np.minimum(T - 1, np.floor(tau * T).astype(int))


@dataclass
class SamplerState:
    """Current sampler law; uniform until the first progress value arrives."""

    T: int
    nu: float = 6.0
    s_scale: float | None = None  # None: fixed from the first |g| seen
    mu: float | None = None

    def update(self, g: float) -> float:
        if self.s_scale is None:
            self.s_scale = max(abs(g), 1e-8)
        self.mu = mode_from_progress(g, self.s_scale)
        return self.mu

    @property
    def ready(self) -> bool:
        return self.mu is not None

    @property
    def shapes(self) -> tuple[float, float] | None:
        if self.mu is None:
            return None
        mu = min(max(self.mu, 1e-12), 1.0 - 1e-12)
        return beta_shapes(mu, self.nu)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.mu is None:
            return rng.integers(0, self.T, size=size)
        a, b = self.shapes
        return sample_timestep(a, b, self.T, rng, size=size)
