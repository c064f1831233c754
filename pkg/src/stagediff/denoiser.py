"""Block-structured conditional epsilon-predictor.

Hidden states are row vectors (batch x d), so block ``i`` computes

    h <- h + s_i * gelu(h @ W_i + b_i) @ V_i

with ``W_i`` and ``V_i`` square (d x d). ``s_i`` starts at zero, so a fresh
model is the input/output projection path only.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

COND_KINDS = ("class_label", "low_band")


@dataclass
class Condition:
    """Batch conditioning: class ids ``(B,)`` or low-band inputs ``(B, d_in)``.

    For ``low_band`` only the first ``d_in // 2`` entries of each row (the
    bottom frequency bins of a frame) are read.
    """

    kind: str
    payload: np.ndarray

    def __post_init__(self):
        if self.kind not in COND_KINDS:
            raise ValueError(f"unknown condition kind {self.kind!r}")
        self.payload = np.asarray(self.payload)


@dataclass
class Block:
    W: Tensor
    V: Tensor
    b: Tensor
    scale: Tensor


@dataclass
class DenoiserParams:
    d: int
    d_in: int
    T: int
    cond_kind: str
    blocks: list[Block]
    w_in: Tensor
    b_in: Tensor
    w_time: Tensor
    w_cond: Tensor
    ssl_proj: Tensor
    ssl_gate: Tensor
    w_out: Tensor
    b_out: Tensor
    meta: dict = field(default_factory=dict)

    @property
    def L_b(self) -> int:
        return len(self.blocks)

    def named_tensors(self) -> Iterator[tuple[str, Tensor]]:
        """Every trainable tensor under a stable, unique name."""
        yield "w_in", self.w_in
        yield "b_in", self.b_in
        yield "w_time", self.w_time
        yield "w_cond", self.w_cond
        yield "ssl_proj", self.ssl_proj
        yield "ssl_gate", self.ssl_gate
        for i, blk in enumerate(self.blocks):
            yield f"blocks.{i}.W", blk.W
            yield f"blocks.{i}.V", blk.V
            yield f"blocks.{i}.b", blk.b
            yield f"blocks.{i}.scale", blk.scale
        yield "w_out", self.w_out
        yield "b_out", self.b_out

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self.named_tensors()]

    @property
    def n_params(self) -> int:
        return sum(t.size for t in self.tensors())

    def zero_grad(self) -> None:
        for t in self.tensors():
            t.zero_grad()

    def copy(self) -> "DenoiserParams":
        def c(t: Tensor) -> Tensor:
            return Tensor(t.data.copy(), requires_grad=True)

        return DenoiserParams(
            d=self.d, d_in=self.d_in, T=self.T, cond_kind=self.cond_kind,
            blocks=[Block(c(b.W), c(b.V), c(b.b), c(b.scale)) for b in self.blocks],
            w_in=c(self.w_in), b_in=c(self.b_in), w_time=c(self.w_time),
            w_cond=c(self.w_cond), ssl_proj=c(self.ssl_proj), ssl_gate=c(self.ssl_gate),
            w_out=c(self.w_out), b_out=c(self.b_out), meta=dict(self.meta),
        )


def init_params(seed: int, d: int, d_in: int, L_b: int, C: int, d_ssl: int,
                T: int = 100, cond_kind: str = "class_label") -> DenoiserParams:
    if min(d, d_in, L_b) < 1:
        raise ValueError(f"d, d_in, L_b must be >= 1, got {d}, {d_in}, {L_b}")
    if cond_kind == "class_label" and C < 1:
        raise ValueError("class conditioning needs C >= 1")
    if cond_kind == "low_band" and d_in < 2:
        raise ValueError("low-band conditioning needs d_in >= 2")
    if cond_kind not in COND_KINDS:
        raise ValueError(f"unknown condition kind {cond_kind!r}")
    rng = np.random.default_rng(seed)

    def gauss(rows, cols, fan_in):
        return Tensor(rng.normal(0.0, 1.0 / np.sqrt(fan_in), (rows, cols)), requires_grad=True)

    def zeros(*shape):
        return Tensor(np.zeros(shape), requires_grad=True)

    w_in = gauss(d_in, d, d_in)
    w_time = gauss(d, d, d)
    if cond_kind == "class_label":
        w_cond = Tensor(rng.normal(0.0, 1.0, (C, d)), requires_grad=True)
    else:
        w_cond = gauss(d_in // 2, d, d_in // 2)
    ssl_proj = gauss(d_ssl, d, d_ssl)
    blocks = [Block(W=gauss(d, d, d), V=gauss(d, d, d), b=zeros(d), scale=zeros())
              for _ in range(L_b)]
    w_out = gauss(d, d_in, d)
    return DenoiserParams(
        d=d, d_in=d_in, T=T, cond_kind=cond_kind, blocks=blocks,
        w_in=w_in, b_in=zeros(d), w_time=w_time, w_cond=w_cond,
        ssl_proj=ssl_proj, ssl_gate=Tensor(1.0, requires_grad=True),
        w_out=w_out, b_out=zeros(d_in),
        meta={"seed": seed, "C": C, "d_ssl": d_ssl},
    )


def time_features(t: np.ndarray, d: int) -> np.ndarray:
    """Fixed sinusoidal features of integer timesteps, shape ``(len(t), d)``."""
    t = np.asarray(t, dtype=np.float64).reshape(-1, 1)
    half = d // 2
    freqs = np.exp(-np.log(1000.0) * np.arange(half) / max(half, 1))
    ang = t * freqs
    feats = np.concatenate([np.sin(ang), np.cos(ang)], axis=1)
    if feats.shape[1] < d:
        feats = np.concatenate([feats, np.zeros((feats.shape[0], d - feats.shape[1]))], axis=1)
    return feats


def _cond_embedding(cond: Condition, params: DenoiserParams, B: int) -> Tensor:
    if cond.kind != params.cond_kind:
        raise ValueError(f"model expects {params.cond_kind!r} conditioning, got {cond.kind!r}")
    if cond.kind == "class_label":
        ids = cond.payload.astype(int).reshape(-1)
        C = params.w_cond.shape[0]
        if ids.shape[0] != B or ids.min() < 0 or ids.max() >= C:
            raise ad.ShapeError(f"class ids {cond.payload.shape} invalid for batch {B}, C={C}")
        onehot = np.zeros((B, C))
        onehot[np.arange(B), ids] = 1.0
        return ad.matmul(Tensor(onehot), params.w_cond)
    low = cond.payload.reshape(B, -1)
    if low.shape[1] != params.d_in:
        raise ad.ShapeError(f"low-band payload {cond.payload.shape} vs d_in={params.d_in}")
    return ad.matmul(ad.slice_(Tensor(low), 0, params.d_in // 2, axis=1), params.w_cond)


def denoise(z_t, t, cond: Condition, ssl_ctx: np.ndarray | None,
            params: DenoiserParams) -> Tensor:
    """Predict the injected noise for a batch ``z_t`` of shape ``(B, d_in)``.

    ``ssl_ctx`` is an optional ``(B, d_ssl, N)`` masked feature map; it is
    mean-pooled over frames, projected and added to the input embedding
    through a learned gate. ``None`` adds nothing at all.
    """
    z = z_t if isinstance(z_t, Tensor) else Tensor(z_t)
    if z.ndim == 1:
        z = Tensor(z.data.reshape(1, -1))
    B = z.shape[0]
    if z.shape[1] != params.d_in:
        raise ad.ShapeError(f"denoise: z_t {z.shape} vs d_in={params.d_in}")
    t = np.broadcast_to(np.asarray(t, dtype=int), (B,))
    if t.min() < 0 or t.max() >= params.T:
        raise IndexError(f"timestep out of range [0, {params.T})")

    h = ad.broadcast_add(ad.matmul(z, params.w_in), params.b_in)
    h = ad.add(h, ad.matmul(Tensor(time_features(t, params.d)), params.w_time))
    h = ad.add(h, _cond_embedding(cond, params, B))
    if ssl_ctx is not None:
        ctx = np.asarray(ssl_ctx, dtype=np.float64)
        if ctx.ndim == 2:
            ctx = np.broadcast_to(ctx, (B,) + ctx.shape)
        if ctx.shape[0] != B or ctx.shape[1] != params.ssl_proj.shape[0]:
            raise ad.ShapeError(f"ssl_ctx {ctx.shape} incompatible with batch {B}, "
                                f"d_ssl={params.ssl_proj.shape[0]}")
        pooled = Tensor(ctx.mean(axis=2))
        h = ad.add(h, ad.mul(ad.matmul(pooled, params.ssl_proj), params.ssl_gate))

    for blk in params.blocks:
        u = ad.gelu(ad.broadcast_add(ad.matmul(h, blk.W), blk.b))
        h = ad.add(h, ad.mul(ad.matmul(u, blk.V), blk.scale))

    return ad.broadcast_add(ad.matmul(h, params.w_out), params.b_out)


def blocks_square_weights(params: DenoiserParams) -> list[tuple[Tensor, Tensor]]:
    """Live (W_i, V_i) tensors per block; rectangular parameters never appear."""
    out = []
    for blk in params.blocks:
        mats = tuple(m for m in (blk.W, blk.V) if m.ndim == 2 and m.shape[0] == m.shape[1])
        out.append(mats)
    return out
