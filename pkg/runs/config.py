"""
Run configuration.

A config file is a flat dotenv-style `KEY=value` file; keys are the field
names of `RunConfig`, case-insensitive. Every key is optional and unknown keys
are rejected.
"""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from pathlib import Path

from django.conf import settings
from dotenv import dotenv_values
from dotenv.parser import parse_stream

from fusion.pipeline import NetworkSpec
from fusion.selective import FUSION_MODES
from geometry.transforms import MISCALIBRATION_RANGES, miscalibration_range
from matchnet.extractor import STRIDE
from raster.maps import SensorRig, scaled_rig
from supervision.losses import LossWeights

logger = logging.getLogger(__name__)

_TRUE = {'1', 'true', 'yes', 'on'}
_FALSE = {'0', 'false', 'no', 'off'}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # Maps
    fv_height: int = 48
    fv_width: int = 96
    bev_height: int = 96
    bev_width: int = 96

    # Network
    channels: int = 32
    d_f: int = 256
    hidden_size: int = 128
    iterations: int = 3
    normalize_maps: bool = False
    scaled_scores: bool = False
    use_fv: bool = True
    use_bev: bool = True
    use_mca: bool = True
    fusion_mode: str = 'selective'

    # Losses
    lam: float = 0.75
    beta: float = 0.1
    rot_beta: float = 0.05
    trans_beta: float = 0.05

    # Noise-resistant matcher
    noise_resistant: bool = True
    delta: float = 1.0
    delta_s: float = 0.5
    tau: int = 3

    # Optimisation
    learning_rate: float = 1e-3
    epochs: int = 20
    lr_halving_period: int = 7
    batch_size: int = 8
    seed: int = 0
    miscalibration_range: str = 'R1'

    def __post_init__(self):
        for name in ('fv_height', 'fv_width', 'bev_height', 'bev_width'):
            value = getattr(self, name)
            if value <= 0 or value % STRIDE:
                raise ConfigError(f"{name} must be a positive multiple of {STRIDE}, got {value}")
        for name in ('channels', 'd_f', 'hidden_size', 'iterations', 'epochs', 'batch_size', 'tau'):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1, got {getattr(self, name)}")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lam must lie in [0, 1], got {self.lam}")
        for name in ('beta', 'rot_beta', 'trans_beta', 'delta_s'):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative, got {getattr(self, name)}")
        if self.delta <= 0:
            raise ConfigError(f"delta must be positive, got {self.delta}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.lr_halving_period < 0 or self.seed < 0:
            raise ConfigError("lr_halving_period and seed must be non-negative")
        if self.miscalibration_range.upper() not in MISCALIBRATION_RANGES:
            raise ConfigError(f"miscalibration_range must be one of {sorted(MISCALIBRATION_RANGES)}, "
                              f"got {self.miscalibration_range}")
        if self.fusion_mode not in FUSION_MODES:
            raise ConfigError(f"fusion_mode must be one of {list(FUSION_MODES)}, got {self.fusion_mode}")
        if not (self.use_fv or self.use_bev):
            raise ConfigError("at least one of use_fv and use_bev must be true")

    # ─────────────────────────────────────────────────────────────────────
    # Derived objects
    # ─────────────────────────────────────────────────────────────────────

    @property
    def fv_shape(self) -> tuple[int, int]:
        return self.fv_height, self.fv_width

    @property
    def bev_shape(self) -> tuple[int, int]:
        return self.bev_height, self.bev_width

    def rig(self) -> SensorRig:
        return scaled_rig(self.fv_shape, self.bev_shape)

    def network_spec(self) -> NetworkSpec:
        return NetworkSpec(
            channels=self.channels,
            d_f=self.d_f,
            hidden_size=self.hidden_size,
            scaled_scores=self.scaled_scores,
            use_fv=self.use_fv,
            use_bev=self.use_bev,
            use_mca=self.use_mca,
            fusion_mode=self.fusion_mode,
            normalize_maps=self.normalize_maps,
        )

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lam, self.beta)

    def ranges(self) -> tuple[float, float]:
        """(rotation degrees, translation meters) of the miscalibration range."""
        return miscalibration_range(self.miscalibration_range)

    def check_rig(self, rig: SensorRig) -> None:
        """A dataset's maps must have the dimensions the network is built for."""
        if tuple(rig.fv_shape) != self.fv_shape or tuple(rig.bev_shape) != self.bev_shape:
            raise ConfigError(
                f"config maps FV {self.fv_shape} / BEV {self.bev_shape} do not match the dataset's "
                f"FV {tuple(rig.fv_shape)} / BEV {tuple(rig.bev_shape)}"
            )

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> RunConfig:
        return dataclasses.replace(self, **changes)

    # ─────────────────────────────────────────────────────────────────────
    # Parsing
    # ─────────────────────────────────────────────────────────────────────

    @classmethod
    def from_mapping(cls, values: dict) -> RunConfig:
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        parsed = {}
        for raw_key, raw_value in values.items():
            key = raw_key.strip().lower()
            if key not in types:
                raise ConfigError(f"unknown config key: {raw_key}")
            if key in parsed:
                raise ConfigError(f"duplicate config key: {raw_key}")
            parsed[key] = _coerce(key, types[key], raw_value)
        return cls(**parsed)

    @classmethod
    def from_file(cls, path) -> RunConfig:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        # dotenv_values keeps only the last of repeated keys
        with path.open() as fh:
            keys = [binding.key for binding in parse_stream(fh) if binding.key is not None]
        seen = set()
        for key in keys:
            if key.strip().lower() in seen:
                raise ConfigError(f"duplicate config key: {key}")
            seen.add(key.strip().lower())
        config = cls.from_mapping(dotenv_values(path))
        logger.info("loaded run config from %s", path)
        return config


def _coerce(key: str, kind: str, raw):
    if raw is None:
        raise ConfigError(f"{key} has no value")
    text = str(raw).strip()
    try:
        if kind == 'bool':
            lowered = text.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(text)
        if kind == 'int':
            return int(text)
        if kind == 'float':
            return float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {kind}")
    return text


def load_config(path=None) -> RunConfig:
    """Config from `path`, else from CALIBRATION_CONFIG_FILE, else the defaults."""
    path = path or getattr(settings, 'CALIBRATION_CONFIG_FILE', '')
    if not path:
        return RunConfig()
    return RunConfig.from_file(path)
