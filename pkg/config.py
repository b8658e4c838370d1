#!/usr/bin/env python3
"""
Configuration for the blur-aware splatting trainer
"""

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Optional, Tuple

from decouple import Csv
from decouple import config as env

FORMAT_VERSION = 1


class Config:
    """Base configuration class"""
    # Blur model
    SUBFRAMES = env('DEBLUR_SUBFRAMES', default=7, cast=int)
    WARP_SUBFRAMES = env('DEBLUR_WARP_SUBFRAMES', default=True, cast=bool)
    EVAL_SUBFRAME = env('DEBLUR_EVAL_SUBFRAME', default='middle')

    # Schedule; E1/E2 left empty fall back to 0.4 and 0.7 of EPOCHS
    EPOCHS = env('DEBLUR_EPOCHS', default=200, cast=int)
    E1 = env('DEBLUR_E1', default='', cast=lambda v: int(v) if v else None)
    E2 = env('DEBLUR_E2', default='', cast=lambda v: int(v) if v else None)
    SCHEDULE = env('DEBLUR_SCHEDULE', default='stagewise')

    # Adam
    LR_MEANS = 1.6e-3
    LR_LOG_SCALES = 5e-3
    LR_ROTATIONS = 1e-3
    LR_OPACITY = 5e-2
    LR_COLOR = 2.5e-3
    LR_DEFORMATION = 1e-3
    LR_TWISTS = 1e-3
    BETAS = (0.9, 0.999)
    EPS = 1e-8

    # Rasterizer
    BACKGROUND = env('DEBLUR_BACKGROUND', default='0,0,0', cast=Csv(float, post_process=tuple))
    TILE_PIXELS = env('DEBLUR_TILE_PIXELS', default=4096, cast=int)
    DILATION = 0.3
    CULL_SIGMA = 3.0
    TRANSMITTANCE_EPS = 1e-4

    SEED = env('DEBLUR_SEED', default=0, cast=int)
    THREADS = env('DEBLUR_THREADS', default=1, cast=int)

    # Runtime
    LOG_LEVEL = env('DEBLUR_LOG_LEVEL', default='INFO')
    LOG_DIR = env('DEBLUR_LOG_DIR', default='logs')


class DevelopmentConfig(Config):
    """Development configuration"""
    LOG_LEVEL = env('DEBLUR_LOG_LEVEL', default='DEBUG')


class BenchmarkConfig(Config):
    """Full-length runs used for the ablation tables"""
    EPOCHS = 200
    THREADS = env('DEBLUR_THREADS', default=4, cast=int)


class TestingConfig(Config):
    """Testing configuration"""
    EPOCHS = 4
    SUBFRAMES = 3
    LOG_LEVEL = env('DEBLUR_LOG_LEVEL', default='WARNING')


# Configuration dictionary
config = {
    'development': DevelopmentConfig,
    'benchmark': BenchmarkConfig,
    'testing': TestingConfig,
    'default': Config,
}


@dataclass(frozen=True)
class TrainingConfig:
    """Resolved training settings, one field per documented key"""
    subframes: int = 7
    epochs: int = 200
    e1: Optional[int] = None
    e2: Optional[int] = None
    schedule: str = 'stagewise'
    warp_subframes: bool = True
    lr_means: float = 1.6e-3
    lr_log_scales: float = 5e-3
    lr_rotations: float = 1e-3
    lr_opacity: float = 5e-2
    lr_color: float = 2.5e-3
    lr_deformation: float = 1e-3
    lr_twists: float = 1e-3
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    background: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    eval_subframe: str = 'middle'
    threads: int = 1
    tile_pixels: int = 4096
    dilation: float = 0.3
    cull_sigma: float = 3.0
    transmittance_eps: float = 1e-4
    format_version: int = FORMAT_VERSION

    @classmethod
    def from_object(cls, source=Config) -> 'TrainingConfig':
        """Read the upper-case attributes of a configuration class"""
        values = {}
        for f in fields(cls):
            key = f.name.upper()
            if hasattr(source, key):
                values[f.name] = getattr(source, key)
        return _normalize(cls(**values))

    @classmethod
    def from_json(cls, path, base: Optional['TrainingConfig'] = None) -> 'TrainingConfig':
        """Overlay a JSON file on base (or the defaults)"""
        # imported here, config must stay importable without the package
        from deblur.base import DatasetFormatError

        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise DatasetFormatError(f"cannot read training config: {e}", path) from e
        if not isinstance(data, dict):
            raise DatasetFormatError("training config must be a JSON object", path)

        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise DatasetFormatError(f"unknown config keys: {', '.join(unknown)}", path)
        version = data.get('format_version', FORMAT_VERSION)
        if version != FORMAT_VERSION:
            raise DatasetFormatError(f"config format_version {version}, expected {FORMAT_VERSION}", path)
        return _normalize(replace(base or cls(), **data))

    def with_overrides(self, **overrides) -> 'TrainingConfig':
        return _normalize(replace(self, **{k: v for k, v in overrides.items() if v is not None}))

    def to_dict(self) -> dict:
        return asdict(self)


def _normalize(cfg: TrainingConfig) -> TrainingConfig:
    # JSON hands back lists
    return replace(cfg, betas=tuple(float(b) for b in cfg.betas),
                   background=tuple(float(c) for c in cfg.background))
