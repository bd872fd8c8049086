"""Run configuration and its plain-text ``key = value`` file format.

Nested fields use dotted keys (``coarse.grid_res = 64``); ``#`` starts a
comment. Unknown keys and malformed values raise ``ConfigError``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import ConfigError
from ..losses_opt import LossWeights


@dataclass
class StageConfig:
    grid_res: int
    n_points: int
    epochs: int


@dataclass
class OptimConfig:
    coarse: StageConfig = field(default_factory=lambda: StageConfig(128, 10000, 150))
    fine: StageConfig = field(default_factory=lambda: StageConfig(256, 60000, 150))
    resample_every: int = 50
    checkpoint_every: int = 50
    tex_res: int = 128
    tex_max_res: int = 512
    lambda_c: float = 5.0
    lambda_s: float = 10.0
    lambda_d: float = 30.0
    lr_points: float = 5e-4
    lr_texture: float = 1e-4
    lr_env: float = 1e-2
    sigma: float = 2.0
    gamma: float = 0.1
    band: float = 3.0
    seed: int = 0
    init_mode: str = "visual_hull"
    hull_res: int = 128
    hull_margin: float = 0.5
    use_mask: bool = True
    depth_loss_type: str = "L1"
    silhouette_loss_type: str = "L2"
    env_height: int = 4
    env_width: int = 8
    env_init: float = 0.3
    texture_position_grad: bool = True

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.lambda_c, self.lambda_s, self.lambda_d)

    def validate(self) -> "OptimConfig":
        def pow2(name, v):
            if v < 2 or v & (v - 1):
                raise ConfigError(f"{name} must be a power of two >= 2, got {v}")

        for name, st in (("coarse", self.coarse), ("fine", self.fine)):
            pow2(f"{name}.grid_res", st.grid_res)
            if st.n_points < 1:
                raise ConfigError(f"{name}.n_points must be >= 1")
            if st.epochs < 0:
                raise ConfigError(f"{name}.epochs must be >= 0")
        pow2("tex_res", self.tex_res)
        pow2("hull_res", self.hull_res)
        if self.hull_res < 8:
            raise ConfigError("hull_res must be >= 8")
        if self.tex_res > self.tex_max_res or (self.fine.epochs > 0 and 2 * self.tex_res > self.tex_max_res):
            raise ConfigError("texture resolution (after the fine-stage upsample) exceeds tex_max_res")
        for name in ("lambda_c", "lambda_s", "lambda_d", "lr_points", "lr_texture", "lr_env"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        for name in ("sigma", "gamma", "band"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        if self.resample_every < 1 or self.checkpoint_every < 1:
            raise ConfigError("resample_every and checkpoint_every must be >= 1")
        if self.init_mode not in ("visual_hull", "sphere"):
            raise ConfigError(f"init_mode must be visual_hull or sphere, got {self.init_mode!r}")
        for name in ("depth_loss_type", "silhouette_loss_type"):
            if getattr(self, name) not in ("L1", "L2"):
                raise ConfigError(f"{name} must be L1 or L2")
        if not (0 <= self.seed < 2**64):
            raise ConfigError("seed must fit in an unsigned 64-bit integer")
        if self.env_height < 1 or self.env_width < 1:
            raise ConfigError("environment map must have at least one texel")
        if self.env_init <= 0:
            raise ConfigError("env_init must be > 0")
        return self


def _convert(raw: str, target_type, key: str):
    try:
        if target_type is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if target_type is int:
            return int(raw, 0)
        if target_type is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


_TYPES = {"int": int, "float": float, "bool": bool, "str": str}


def _field_type(obj, name):
    for f in dataclasses.fields(obj):
        if f.name == name:
            return _TYPES.get(f.type if isinstance(f.type, str) else f.type.__name__, str)
    return None


def apply_overrides(cfg: OptimConfig, items: dict[str, str]) -> OptimConfig:
    for key, raw in items.items():
        target = cfg
        parts = key.split(".")
        for p in parts[:-1]:
            target = getattr(target, p, None)
            if not dataclasses.is_dataclass(target):
                raise ConfigError(f"unknown config key {key!r}")
        ftype = _field_type(target, parts[-1])
        if ftype is None or dataclasses.is_dataclass(getattr(target, parts[-1])):
            raise ConfigError(f"unknown config key {key!r}")
        setattr(target, parts[-1], _convert(raw, ftype, key))
    return cfg


def parse_config(text: str) -> OptimConfig:
    items = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        items[key] = value
    return apply_overrides(OptimConfig(), items).validate()


def load_config(path) -> OptimConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def dump_config(cfg: OptimConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if dataclasses.is_dataclass(v):
            for g in dataclasses.fields(v):
                lines.append(f"{f.name}.{g.name} = {getattr(v, g.name)}")
        else:
            lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
