"""Training configuration and the key=value config file format.

Config files are UTF-8 ``key=value`` lines; ``#`` starts a comment; unknown
keys are rejected.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.99
    batch_size: int = 8
    epochs: int = 50
    seed: int = 0
    num_scenes: int = 16
    lambda_d: float = 0.01
    lambda_v: float = 1.0
    lambda_3d: float = 1.0
    lambda_2d: float = 1.0
    lambda_s: float = 0.1
    depth_stream: bool = True
    distribution: bool = True
    silhouette: bool = True
    masking: bool = True
    mask_ratio: float = 0.15
    height: int = 32
    width: int = 32
    patch_size: int = 4
    d_model: int = 32
    heads: int = 4
    encoder_blocks: int = 1
    v_coarse: int = 20
    v_full: int = 100
    joints: int = 4
    flow_layers: int = 6
    flow_hidden: int = 64
    mesh_scale: float = 30.0
    dropout: float = 0.1

    @property
    def tokens(self) -> int:
        return (self.height // self.patch_size) * (self.width // self.patch_size)

    @property
    def flow_dim(self) -> int:
        return 3 * self.v_coarse

    def validate(self) -> "TrainConfig":
        if self.learning_rate <= 0:
            raise ConfigurationError(f"learning_rate must be > 0, got {self.learning_rate}")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0.0 <= b < 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1), got {b}")
        for name in ("batch_size", "epochs", "num_scenes", "height", "width",
                     "patch_size", "d_model", "heads", "encoder_blocks",
                     "v_coarse", "v_full", "joints", "flow_hidden"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("lambda_d", "lambda_v", "lambda_3d", "lambda_2d", "lambda_s"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ConfigurationError(f"{name} must be finite and >= 0, got {v}")
        if self.height % self.patch_size or self.width % self.patch_size:
            raise ConfigurationError(
                f"grid {self.height}x{self.width} not divisible by patch {self.patch_size}")
        if self.d_model % 2:
            raise ConfigurationError(f"d_model must be even, got {self.d_model}")
        if self.d_model % self.heads:
            raise ConfigurationError(
                f"d_model {self.d_model} not divisible by {self.heads} heads")
        if not 0.0 <= self.mask_ratio <= 1.0:
            raise ConfigurationError(f"mask_ratio must lie in [0, 1], got {self.mask_ratio}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.flow_layers < 0:
            raise ConfigurationError(f"flow_layers must be >= 0, got {self.flow_layers}")
        if self.silhouette and self.patch_size != 4:
            raise ConfigurationError(
                "the silhouette decoder upsamples 4x, so it needs patch_size=4")
        if self.v_coarse < 8:
            raise ConfigurationError(f"v_coarse must be >= 8, got {self.v_coarse}")
        if self.joints != 4:
            raise ConfigurationError(
                f"the synthetic body has 4 joints, got joints={self.joints}")
        if self.mesh_scale <= 0:
            raise ConfigurationError(f"mesh_scale must be > 0, got {self.mesh_scale}")
        return self


_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}


def _parse_value(key: str, raw: str):
    kind = _FIELDS[key].type
    raw = raw.strip()
    try:
        if kind == "bool":
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        return float(raw)
    except ValueError as err:
        raise ConfigurationError(f"bad value for {key}: {raw!r}") from err


def parse_config(text: str) -> TrainConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigurationError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigurationError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _parse_value(key, raw)
    return TrainConfig(**values).validate()


def load_config(path: str | os.PathLike) -> TrainConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def format_config(cfg: TrainConfig) -> str:
    lines = []
    for f in dataclasses.fields(TrainConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{f.name}={value}")
    return "\n".join(lines) + "\n"


def save_config(cfg: TrainConfig, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_config(cfg))
