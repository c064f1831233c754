"""Semantic-progress monitoring in a frozen feature space.

The monitor never touches the autodiff graph: everything here is plain numpy,
so the regime signal cannot leak gradients into the denoiser.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .autodiff import ShapeError

VIEW_FACTORS = (1, 2, 4)


@dataclass(frozen=True)
class SslEncoder:
    """Frozen two-layer random-feature network standing in for a pretrained encoder."""

    A1: np.ndarray  # (d_h, F)
    A2: np.ndarray  # (d_ssl, d_h)

    @classmethod
    def from_seed(cls, seed: int, F: int, d_h: int, d_ssl: int) -> "SslEncoder":
        rng = np.random.default_rng(seed)
        A1 = rng.normal(0.0, 1.0 / np.sqrt(F), (d_h, F))
        A2 = rng.normal(0.0, 1.0 / np.sqrt(d_h), (d_ssl, d_h))
        A1.flags.writeable = False
        A2.flags.writeable = False
        return cls(A1, A2)

    @property
    def F(self) -> int:
        return self.A1.shape[1]

    @property
    def d_ssl(self) -> int:
        return self.A2.shape[0]


def encode(x: np.ndarray, enc: SslEncoder) -> np.ndarray:
    """Frame-wise features: ``(F, N) -> (d_ssl, N)`` or ``(B, F, N) -> (B, d_ssl, N)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (2, 3) or x.shape[-2] != enc.F:
        raise ShapeError(f"encode: input {x.shape} needs {enc.F} frequency rows")
    return np.tanh(np.matmul(enc.A2, np.tanh(np.matmul(enc.A1, x))))


def _interp_matrix(n_out: int, n_in: int) -> np.ndarray:
    # half-pixel-centre linear interpolation with edge clamping
    R = np.zeros((n_out, n_in))
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    R[np.arange(n_out), lo] += 1.0 - frac
    R[np.arange(n_out), hi] += frac
    return R


def resize_bilinear(x: np.ndarray, rows: int, cols: int) -> np.ndarray:
    """Bilinear resize of the last two axes."""
    Rr = _interp_matrix(rows, x.shape[-2])
    Rc = _interp_matrix(cols, x.shape[-1])
    return np.matmul(np.matmul(Rr, x), Rc.T)


def smoothing_views(x: np.ndarray) -> list[np.ndarray]:
    """Identity plus bilinear down-then-up views at factors 2 and 4."""
    x = np.asarray(x, dtype=np.float64)
    F, N = x.shape[-2:]
    if F % 4 or N % 4:
        raise ShapeError(f"smoothing_views needs F, N divisible by 4, got {F}x{N}")
    views = [x]
    for f in VIEW_FACTORS[1:]:
        small = resize_bilinear(x, F // f, N // f)
        views.append(resize_bilinear(small, F, N))
    return views


def ssl_discrepancy(x0_hat: np.ndarray, x0: np.ndarray, enc: SslEncoder) -> float:
    """Batch- and view-averaged mean squared feature difference.

    Inputs are ``(B, F, N)`` batches. The same view is applied to both sides.
    """
    x0_hat = np.asarray(x0_hat, dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64)
    if x0_hat.shape != x0.shape:
        raise ShapeError(f"ssl_discrepancy: {x0_hat.shape} vs {x0.shape}")
    if x0.ndim != 3 or x0.shape[0] == 0:
        raise ValueError("ssl_discrepancy needs a non-empty (B, F, N) batch")
    B = x0.shape[0]
    total = 0.0
    for vh, vx in zip(smoothing_views(x0_hat), smoothing_views(x0)):
        diff = encode(vh, enc) - encode(vx, enc)
        total += float(np.sum(np.mean(diff**2, axis=(1, 2))))
    return total / (B * len(VIEW_FACTORS))


def ols_slope(k: np.ndarray, y: np.ndarray) -> float:
    """Least-squares slope of ``y`` against ``k``."""
    k = np.asarray(k, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    kc = k - k.mean()
    return float(np.dot(kc, y - y.mean()) / np.dot(kc, kc))


@dataclass
class RegimeWindow:
    """Ring buffer of the most recent ``capacity`` (step, discrepancy) pairs."""

    capacity: int = 5
    interval: int = 50
    entries: deque = field(default_factory=deque)

    def __post_init__(self):
        if self.capacity < 2:
            raise ValueError("window capacity must be >= 2")
        self.entries = deque(self.entries, maxlen=self.capacity)

    @property
    def ready(self) -> bool:
        return len(self.entries) == self.capacity

    def slope(self) -> float | None:
        if len(self.entries) < 2:
            return None
        k, y = zip(*self.entries)
        return ols_slope(np.array(k), np.array(y))

    def observe(self, k: int, value: float) -> float | None:
        """Record an observation; return ``g = -slope`` once the window is full."""
        if self.entries and k <= self.entries[-1][0]:
            raise ValueError(f"step {k} not after last observed step {self.entries[-1][0]}")
        self.entries.append((int(k), float(value)))
        if not self.ready:
            return None
        return -self.slope()


def observe_and_slope(w: RegimeWindow, k: int, value: float) -> float | None:
    return w.observe(k, value)
