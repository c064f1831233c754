"""Synthetic "spectrogram" corpora for the two toy tasks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import ShapeError
from ..denoiser import Condition


@dataclass
class Dataset:
    task: str
    x: np.ndarray        # (n, F, N) clean targets
    labels: np.ndarray   # (n,) class ids (generating class for super_res too)
    cond: np.ndarray     # class ids, or (n, F, N) low-band copies

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def F(self) -> int:
        return self.x.shape[1]

    @property
    def N(self) -> int:
        return self.x.shape[2]

    def rows(self, idx, frames=None) -> tuple[np.ndarray, Condition]:
        """Frame latents for samples ``idx`` as ``(len(idx) * f, F)`` rows.

        Each latent is one spectrogram frame (a column, low band first).
        ``frames`` is an ``(len(idx), f)`` array of frame indices; ``None``
        takes every frame in order, so the rows of sample ``i`` are its
        ``N`` columns.
        """
        idx = np.asarray(idx)
        if frames is None:
            frames = np.broadcast_to(np.arange(self.N), (idx.size, self.N))
        cols = self.x[idx[:, None], :, frames]            # (B, f, F)
        z0 = cols.reshape(-1, self.F)
        if self.task == "class_cond":
            ids = np.repeat(self.cond[idx], frames.shape[1])
            return z0, Condition("class_label", ids)
        low = self.cond[idx[:, None], :, frames].reshape(-1, self.F)
        return z0, Condition("low_band", low)

    def to_images(self, rows: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`rows` with all frames: ``(B * N, F) -> (B, F, N)``."""
        return rows.reshape(-1, self.N, self.F).transpose(0, 2, 1)


def class_templates(F: int, N: int, C: int) -> list[dict]:
    """Per-class harmonic recipe; depends only on (F, N, C) so splits share it."""
    rng = np.random.default_rng([F, N, C, 7919])
    out = []
    for _ in range(C):
        n_h = int(rng.integers(2, 5))
        f0 = rng.uniform(0.8, (F - 1) / (n_h + 0.25))
        rate = int(rng.integers(1, 4))
        out.append({"n_h": n_h, "f0": f0, "rate": rate,
                    "amps": 1.0 / np.arange(1, n_h + 1) ** rng.uniform(0.3, 1.0)})
    return out


def _render(tpl: dict, F: int, N: int, phase: float, gain: float) -> np.ndarray:
    rows = np.arange(F)[:, None]
    env = 1.0 + 0.5 * np.cos(2 * np.pi * tpl["rate"] * np.arange(N) / N + phase)
    img = np.zeros((F, N))
    for h in range(1, tpl["n_h"] + 1):
        band = np.exp(-0.5 * ((rows - tpl["f0"] * h) / 0.6) ** 2)
        img += tpl["amps"][h - 1] * band * env[None, :]
    return gain * img


def gen_dataset(task: str, seed: int, n: int, F: int = 16, N: int = 32, C: int = 8) -> Dataset:
    if F % 4 or N % 4 or F <= 0 or N <= 0:
        raise ShapeError(f"F and N must be positive multiples of 4, got {F}x{N}")
    if task not in ("class_cond", "super_res"):
        raise ValueError(f"unknown task {task!r}")
    if n < 1 or C < 1:
        raise ValueError("need n >= 1 and C >= 1")
    tpls = class_templates(F, N, C)
    rng = np.random.default_rng([seed, 101])
    labels = rng.integers(0, C, size=n)
    x = np.empty((n, F, N))
    for i, c in enumerate(labels):
        img = _render(tpls[c], F, N, rng.uniform(0, 2 * np.pi), rng.uniform(0.8, 1.2))
        img = img + rng.normal(0.0, 0.05, (F, N))
        x[i] = (img - img.mean()) / img.std()
    if task == "class_cond":
        return Dataset(task, x, labels, labels.copy())
    low = x.copy()
    low[:, F // 2:, :] = 0.0
    return Dataset(task, x, labels, low)
