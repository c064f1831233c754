"""Binary checkpoint container: text manifest followed by a float32 payload.

Layout (all offsets relative to the payload start)::

    SDCKPT1\n
    <manifest byte length, ASCII decimal>\n
    <manifest: UTF-8 JSON>
    <payload: little-endian float32 tensors, C order, back to back>

The manifest lists ``tensors`` as ``{name, shape, offset, nbytes}`` records
together with the model dimensions, the training step and an echo of the run
config. It is fully validated before any payload byte is interpreted.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..autodiff import Tensor
from ..denoiser import DenoiserParams, init_params

MAGIC = b"SDCKPT1\n"
_DTYPE = np.dtype("<f4")


class CheckpointError(ValueError):
    """Corrupt, truncated or inconsistent checkpoint file."""


@dataclass
class Checkpoint:
    params: DenoiserParams
    config: dict
    step: int


def _model_dims(params: DenoiserParams) -> dict:
    return {"d": params.d, "d_in": params.d_in, "T": params.T, "L_b": params.L_b,
            "cond_kind": params.cond_kind, "C": int(params.meta.get("C", 0)),
            "d_ssl": int(params.ssl_proj.shape[0])}


def save_checkpoint(params: DenoiserParams, config: dict | None, step: int, path) -> Path:
    path = Path(path)
    records, chunks, offset = [], [], 0
    for name, t in params.named_tensors():
        buf = np.ascontiguousarray(t.data, dtype=_DTYPE).tobytes()
        records.append({"name": name, "shape": list(t.shape), "offset": offset, "nbytes": len(buf)})
        chunks.append(buf)
        offset += len(buf)
    manifest = {"format": "stagediff-checkpoint", "version": 1, "dtype": "float32-le",
                "step": int(step), "model": _model_dims(params),
                "config": dict(config or {}), "tensors": records, "payload_bytes": offset}
    text = json.dumps(manifest, sort_keys=True).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(b"%d\n" % len(text))
        fh.write(text)
        for c in chunks:
            fh.write(c)
    os.replace(tmp, path)
    return path


def _validate(manifest: dict, payload_len: int) -> None:
    for key in ("step", "model", "tensors", "payload_bytes"):
        if key not in manifest:
            raise CheckpointError(f"manifest missing {key!r}")
    names, expect = set(), 0
    for rec in manifest["tensors"]:
        try:
            name, shape, off, nb = rec["name"], rec["shape"], rec["offset"], rec["nbytes"]
        except (KeyError, TypeError):
            raise CheckpointError(f"malformed tensor record {rec!r}") from None
        if name in names:
            raise CheckpointError(f"duplicate tensor name {name!r}")
        names.add(name)
        if off != expect or nb != int(np.prod(shape, dtype=np.int64)) * _DTYPE.itemsize:
            raise CheckpointError(f"tensor {name!r}: inconsistent offset/size")
        expect += nb
    if expect != manifest["payload_bytes"]:
        raise CheckpointError("tensor sizes do not add up to payload_bytes")
    if payload_len != expect:
        raise CheckpointError(f"payload is {payload_len} bytes, manifest promises {expect}")


def read_manifest(path) -> tuple[dict, bytes]:
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise CheckpointError(f"{path}: bad magic header")
    rest = raw[len(MAGIC):]
    nl = rest.find(b"\n")
    if nl < 0 or not rest[:nl].isdigit():
        raise CheckpointError(f"{path}: bad manifest length line")
    n = int(rest[:nl])
    body = rest[nl + 1:]
    if len(body) < n:
        raise CheckpointError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(body[:n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: manifest is not valid JSON ({exc})") from None
    if not isinstance(manifest, dict):
        raise CheckpointError(f"{path}: manifest must be an object")
    payload = body[n:]
    _validate(manifest, len(payload))
    return manifest, payload


def load_checkpoint(path) -> Checkpoint:
    manifest, payload = read_manifest(path)
    dims = manifest["model"]
    try:
        params = init_params(0, dims["d"], dims["d_in"], dims["L_b"], max(dims["C"], 1),
                             dims["d_ssl"], T=dims["T"], cond_kind=dims["cond_kind"])
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: bad model dimensions ({exc})") from None
    params.meta["C"] = dims["C"]
    slots = dict(params.named_tensors())
    recs = {r["name"]: r for r in manifest["tensors"]}
    if set(recs) != set(slots):
        raise CheckpointError(f"{path}: tensor names do not match the model layout")
    arrays = {}
    for name, rec in recs.items():
        if tuple(rec["shape"]) != slots[name].shape:
            raise CheckpointError(f"{path}: tensor {name!r} has shape {rec['shape']}, "
                                  f"model expects {list(slots[name].shape)}")
        arr = np.frombuffer(payload, dtype=_DTYPE, count=rec["nbytes"] // 4, offset=rec["offset"])
        arrays[name] = arr.astype(np.float64).reshape(rec["shape"])
    for name, t in slots.items():
        t.data = arrays[name]
        t.zero_grad()
    params.meta["seed"] = manifest.get("config", {}).get("seed")
    return Checkpoint(params=params, config=manifest.get("config", {}), step=int(manifest["step"]))
