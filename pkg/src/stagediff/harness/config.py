"""Flat ``key=value`` run configuration."""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, fields
from pathlib import Path

from ..diffusion import ConfigError

TASKS = ("class_cond", "super_res")

# config-file spelling -> field name, where the two differ
KEY_ALIASES = {"lambda": "lam"}
FIELD_KEYS = {v: k for k, v in KEY_ALIASES.items()}

_TRUE = {"true", "on", "yes", "1"}
_FALSE = {"false", "off", "no", "0"}


@dataclass
class TrainConfig:
    task: str = "class_cond"
    seed: int = 0
    data_seed: int = 0
    encoder_seed: int = 7
    K_tot: int = 5000
    batch_size: int = 32
    frames_per_sample: int = 8
    n_train: int = 4096
    n_val: int = 256
    n_monitor: int = 32
    monitor_mode: str = "fixed"
    F: int = 16
    N: int = 32
    d: int = 64
    L_b: int = 8
    C: int = 8
    d_ssl: int = 16
    d_h: int = 32
    T: int = 100
    beta_min: float = 1e-4
    beta_max: float = 0.02
    delta_k: int = 50
    m: int = 5
    rho_ssl: float = 0.6
    nu: float = 6.0
    s_scale: typing.Optional[float] = None
    lam: float = 1e-3
    s_phi: typing.Optional[float] = None
    rho_sp: float = 0.8
    k_on_frac: float = 0.1
    M_interval: int = 500
    affinity_norm: str = "max_row"
    lr: float = 0.1
    guidance_enabled: bool = False
    adaptive_t_enabled: bool = False
    structure_reg_enabled: bool = False
    s_ref_path: str = ""
    save_steps: str = ""

    def __post_init__(self):
        self.validate()

    @property
    def d_in(self) -> int:
        return self.F

    @property
    def cond_kind(self) -> str:
        return "class_label" if self.task == "class_cond" else "low_band"

    @property
    def checkpoint_steps(self) -> list[int]:
        return sorted({int(s) for s in self.save_steps.split(",") if s.strip()})

    def validate(self) -> None:
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        for key in ("rho_ssl", "rho_sp"):
            v = getattr(self, key)
            if not 0.0 < v <= 1.0:
                raise ConfigError(f"{key} must lie in (0, 1], got {v}")
        for key in ("lr", "lam", "nu", "beta_min", "beta_max"):
            if getattr(self, key) <= 0:
                raise ConfigError(f"{key} must be positive, got {getattr(self, key)}")
        for key in ("s_scale", "s_phi"):
            v = getattr(self, key)
            if v is not None and v <= 0:
                raise ConfigError(f"{key} must be positive or auto, got {v}")
        if not 0 <= self.frames_per_sample <= self.N:
            raise ConfigError(f"frames_per_sample must lie in [0, N], got {self.frames_per_sample}")
        for key in ("K_tot", "batch_size", "n_train", "n_val", "n_monitor", "delta_k",
                    "M_interval", "d", "L_b", "d_ssl", "d_h"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1, got {getattr(self, key)}")
        if self.m < 2:
            raise ConfigError(f"m must be >= 2, got {self.m}")
        if self.nu <= 2:
            raise ConfigError(f"nu must exceed 2, got {self.nu}")
        if not 0.0 <= self.k_on_frac <= 1.0:
            raise ConfigError(f"k_on_frac must lie in [0, 1], got {self.k_on_frac}")
        if self.F % 4 or self.N % 4:
            raise ConfigError(f"F and N must be divisible by 4, got {self.F}x{self.N}")
        if self.monitor_mode not in ("fixed", "resample"):
            raise ConfigError(f"monitor_mode must be fixed or resample, got {self.monitor_mode!r}")
        if self.affinity_norm not in ("max_row", "symmetric"):
            raise ConfigError(f"affinity_norm must be max_row or symmetric, got {self.affinity_norm!r}")
        if self.structure_reg_enabled and not self.s_ref_path:
            raise ConfigError("structure_reg_enabled requires s_ref_path")
        try:
            self.checkpoint_steps
        except ValueError:
            raise ConfigError(f"save_steps must be comma-separated integers, got {self.save_steps!r}") from None

    def to_mapping(self) -> dict[str, str]:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            key = FIELD_KEYS.get(f.name, f.name)
            if v is None:
                out[key] = "auto"
            elif isinstance(v, bool):
                out[key] = "true" if v else "false"
            else:
                out[key] = str(v)
        return out

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


_HINTS = typing.get_type_hints(TrainConfig)


def _convert(key: str, raw: str):
    hint = _HINTS[key]
    raw = raw.strip()
    if hint is bool:
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if typing.get_origin(hint) is typing.Union:
        if raw.lower() in ("auto", "none", ""):
            return None
        hint = next(a for a in typing.get_args(hint) if a is not type(None))
    try:
        if hint is int:
            return int(raw)
        if hint is float:
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {hint.__name__}") from None
    return raw


def parse_pairs(pairs: typing.Iterable[tuple[str, str]]) -> dict:
    known = {f.name for f in fields(TrainConfig)}
    out = {}
    for key, raw in pairs:
        name = KEY_ALIASES.get(key, key)
        if name not in known:
            raise ConfigError(f"unknown config key {key!r}")
        out[name] = _convert(name, raw)
    return out


def split_assignment(text: str, where: str = "") -> tuple[str, str]:
    if "=" not in text:
        raise ConfigError(f"{where}expected key=value, got {text!r}")
    key, _, val = text.partition("=")
    return key.strip(), val.strip()


def read_config_text(text: str, source: str = "<config>") -> dict:
    pairs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        pairs.append(split_assignment(line, f"{source}:{lineno}: "))
    return parse_pairs(pairs)


def load_config(path=None, overrides: typing.Sequence[str] = ()) -> TrainConfig:
    """Parse a config file (optional) then apply ``key=value`` overrides in order."""
    values = {}
    if path is not None:
        p = Path(path)
        values.update(read_config_text(p.read_text(), str(p)))
    values.update(parse_pairs(split_assignment(o, "override: ") for o in overrides))
    return TrainConfig(**values)


def write_config(cfg: TrainConfig, path) -> None:
    Path(path).write_text("".join(f"{k}={v}\n" for k, v in cfg.to_mapping().items()))
