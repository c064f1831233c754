"""Decayed SSL guidance: linear decay of the mask density and the masks themselves."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ShapeError


@dataclass(frozen=True)
class GuidanceSchedule:
    rho_ssl: float
    K_tot: int

    def __post_init__(self):
        if not 0.0 < self.rho_ssl <= 1.0:
            raise ValueError(f"rho_ssl must lie in (0, 1], got {self.rho_ssl}")
        if self.K_tot < 1:
            raise ValueError(f"K_tot must be positive, got {self.K_tot}")


def gamma(k: int, sched: GuidanceSchedule) -> float:
    """Active mask fraction at step ``k``; reaches 0 at ``rho_ssl * K_tot``."""
    if k < 0:
        raise ValueError(f"step must be non-negative, got {k}")
    return max(0.0, 1.0 - k / (sched.rho_ssl * sched.K_tot))


def mask_rng(master_seed: int, k: int) -> np.random.Generator:
    """Counter-based generator keyed by (seed, step); no state is carried between steps."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([master_seed, k])))


def make_mask(rows: int, cols: int, gamma_k: float, master_seed: int, k: int) -> np.ndarray:
    """Rank-1 binary mask with expected active fraction ``gamma_k``.

    Rows and columns are kept independently with probability ``sqrt(gamma_k)``
    and the mask is their outer product.
    """
    if not 0.0 <= gamma_k <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma_k}")
    if gamma_k == 1.0:
        return np.ones((rows, cols))
    if gamma_k == 0.0:
        return np.zeros((rows, cols))
    rng = mask_rng(master_seed, k)
    p = np.sqrt(gamma_k)
    row_keep = (rng.random(rows) < p).astype(np.float64)
    col_keep = (rng.random(cols) < p).astype(np.float64)
    return np.outer(row_keep, col_keep)


def apply_guidance(C_ssl: np.ndarray, M: np.ndarray) -> np.ndarray:
    """Masked context; ``M`` may be a single map broadcast over a batch of contexts."""
    C_ssl = np.asarray(C_ssl, dtype=np.float64)
    M = np.asarray(M, dtype=np.float64)
    if C_ssl.shape[-2:] != M.shape[-2:] or M.ndim > C_ssl.ndim:
        raise ShapeError(f"apply_guidance: context {C_ssl.shape} vs mask {M.shape}")
    return C_ssl * M
