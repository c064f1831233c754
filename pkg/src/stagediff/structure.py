"""Block similarity in parameter space and the graph-smoothness regularizer."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import ShapeError
from .denoiser import DenoiserParams, blocks_square_weights


class ZeroNormError(ValueError):
    """A block representation with no variance has undefined similarity."""

    def __init__(self, msg: str, block: int | None = None):
        super().__init__(msg)
        self.block = block


def block_representation(params: DenoiserParams, i: int) -> np.ndarray:
    """Column-centred ``[W_i | V_i]``; rows act as samples."""
    mats = blocks_square_weights(params)[i]
    if not mats:
        raise ValueError(f"block {i} has no square weight matrices")
    X = np.concatenate([m.data for m in mats], axis=1)
    return X - X.mean(axis=0, keepdims=True)


def linear_cka(X: np.ndarray, Y: np.ndarray) -> float:
    """``||X^T Y||_F^2 / (||X^T X||_F ||Y^T Y||_F)`` for column-centred X, Y."""
    if X.shape[0] != Y.shape[0]:
        raise ShapeError(f"linear_cka: row counts differ, {X.shape} vs {Y.shape}")
    nx = np.linalg.norm(X.T @ X)
    ny = np.linalg.norm(Y.T @ Y)
    if nx <= 1e-24 or ny <= 1e-24:
        raise ZeroNormError("linear_cka: zero-norm representation")
    return float(np.linalg.norm(X.T @ Y) ** 2 / (nx * ny))


def similarity_matrix(params: DenoiserParams) -> np.ndarray:
    L = params.L_b
    if L < 2:
        raise ValueError("similarity needs at least two blocks")
    reps = []
    for i in range(L):
        X = block_representation(params, i)
        if np.linalg.norm(X.T @ X) <= 1e-24:
            raise ZeroNormError(f"block {i} has a zero-norm representation", block=i)
        reps.append(X)
    S = np.eye(L)
    for i in range(L):
        for j in range(i + 1, L):
            S[i, j] = S[j, i] = linear_cka(reps[i], reps[j])
    return S


@dataclass(frozen=True)
class AffinityOperator:
    W: np.ndarray
    D: np.ndarray

    @property
    def laplacian(self) -> np.ndarray:
        return self.D - self.W


def build_affinity(S_ref: np.ndarray, normalization: str = "max_row") -> AffinityOperator:
    """Non-negative zero-diagonal affinity from a reference similarity pattern.

    ``max_row`` divides by the largest row sum (so ``||W||_inf <= 1``);
    ``symmetric`` uses ``D^-1/2 A D^-1/2``.
    """
    A = np.array(S_ref, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ShapeError(f"reference pattern must be square, got {A.shape}")
    np.fill_diagonal(A, 0.0)
    A = np.maximum(A, 0.0)
    A = 0.5 * (A + A.T)
    rows = A.sum(axis=1)
    if rows.max() <= 0.0:
        raise ValueError("reference pattern has no off-diagonal structure")
    if normalization == "max_row":
        W = A / rows.max()
    elif normalization == "symmetric":
        inv = np.where(rows > 0, 1.0 / np.sqrt(np.where(rows > 0, rows, 1.0)), 0.0)
        W = inv[:, None] * A * inv[None, :]
        W = 0.5 * (W + W.T)  # rounding can break exact symmetry
    else:
        raise ValueError(f"unknown normalization {normalization!r}")
    return AffinityOperator(W=W, D=np.diag(W.sum(axis=1)))


def block_stack(params: DenoiserParams) -> np.ndarray:
    """``P x L_b`` matrix; column i is block i's square matrices flattened in order."""
    cols = [np.concatenate([m.data.reshape(-1) for m in mats])
            for mats in blocks_square_weights(params)]
    return np.stack(cols, axis=1)


def sp_loss_and_grad(omega: np.ndarray, aff: AffinityOperator) -> tuple[float, np.ndarray]:
    """``Tr((D - W) Omega^T Omega)`` and its gradient ``2 Omega (D - W)``."""
    if omega.ndim != 2 or omega.shape[1] != aff.W.shape[0]:
        raise ShapeError(f"sp_loss: Omega {omega.shape} vs {aff.W.shape[0]} blocks")
    Lap = aff.laplacian
    G = omega.T @ omega
    return float(np.sum(Lap * G)), 2.0 * omega @ Lap


def add_block_grad(params: DenoiserParams, grad_omega: np.ndarray, weight: float) -> None:
    """Scatter ``weight * grad_omega`` back onto each block's square matrices."""
    for i, mats in enumerate(blocks_square_weights(params)):
        col = grad_omega[:, i]
        off = 0
        for m in mats:
            n = m.size
            m.grad = m.grad + weight * col[off:off + n].reshape(m.shape)
            off += n


def beta_sp(g: float, s_phi: float) -> float:
    """Monotone decreasing progress coefficient ``1 / (1 + exp(g / s_phi))``."""
    if s_phi <= 0:
        raise ValueError(f"s_phi must be positive, got {s_phi}")
    if not math.isfinite(g):
        raise ValueError(f"progress signal must be finite, got {g}")
    z = g / s_phi
    if z >= 0:
        e = math.exp(-z)
        return e / (1.0 + e)
    return 1.0 / (1.0 + math.exp(z))


def offdiag_stats(S: np.ndarray) -> tuple[float, float]:
    mask = ~np.eye(S.shape[0], dtype=bool)
    vals = S[mask]
    return float(vals.mean()), float(vals.std())


def write_similarity_csv(S: np.ndarray, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(range(S.shape[0]))
        for row in S:
            w.writerow(repr(float(v)) for v in row)


def read_similarity_csv(path) -> np.ndarray:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty similarity file")
    header = [int(h) for h in rows[0]]
    if header != list(range(len(header))):
        raise ValueError(f"{path}: header must be block indices 0..L-1")
    S = np.array([[float(v) for v in r] for r in rows[1:]])
    if S.shape != (len(header), len(header)):
        raise ValueError(f"{path}: expected {len(header)}x{len(header)} matrix, got {S.shape}")
    return S
