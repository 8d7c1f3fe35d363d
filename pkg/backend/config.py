"""
Run configuration for SceneForge.
Defaults -> JSON config file -> SCENEFORGE_* environment (.env honoured) -> CLI flags.
Everything is validated before any work starts.
"""

import json
import logging
import os
from typing import Any, Dict, Literal, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from errors import ConfigError

logger = logging.getLogger(__name__)

THREADS_ENV = 'SCENEFORGE_THREADS'


class Config(BaseModel):
    model_config = ConfigDict(extra='forbid', validate_assignment=True)

    # outline
    k: int = Field(16, ge=3, description='outline direction count')
    jitter_fraction: float = Field(0.05, ge=0.0, description='anchor jitter radius as a fraction of the mask bbox diagonal')
    incomplete_iou: float = Field(0.9, gt=0.0, le=1.0, description='outline-vs-mask IoU below which a mask is flagged incomplete')

    # trimap
    trimap_shape: Literal['square', 'disc'] = Field('square', description='structuring element shape')
    erode_radius: int = Field(3, ge=0, description='erosion radius for the FG region')
    dilate_radius: int = Field(3, ge=0, description='dilation radius for the BG region')

    # matting
    window_radius: int = Field(1, ge=1, description='matting window radius')
    epsilon: float = Field(1e-7, gt=0.0, description='matting regularizer')

    # solver
    solver_tol: float = Field(1e-6, gt=0.0, description='CG relative residual tolerance')
    solver_max_iter: Optional[int] = Field(None, ge=1, description='CG iteration cap (default 10*n)')

    # blending
    blend_mode: Literal['mixed_gradients', 'source_gradients'] = Field('mixed_gradients', description='Poisson guidance field')
    blend_alpha_threshold: float = Field(0.05, ge=0.0, lt=1.0, description='alpha above which a pixel joins the blend region')

    # placement
    scale_min: float = Field(0.2, gt=0.0, description='lower placement scale factor')
    scale_max: float = Field(0.7, gt=0.0, description='upper placement scale factor')
    margin: int = Field(2, ge=1, description='pixels kept free between an object and the scene border')
    placement_retries: int = Field(3, ge=0, description='rejection retries per placement')
    objects_min: int = Field(1, ge=1, description='minimum objects per image')
    objects_max: int = Field(3, ge=1, description='maximum objects per image')

    # run
    seed: int = Field(0, ge=0, lt=2 ** 64, description='64-bit run seed')
    workers: Optional[int] = Field(None, ge=1, description='worker processes (default: available cores)')

    @model_validator(mode='after')
    def check_ranges(self):
        if self.scale_min > self.scale_max:
            raise ValueError(f"scale_min {self.scale_min} exceeds scale_max {self.scale_max}")
        if self.objects_min > self.objects_max:
            raise ValueError(f"objects_min {self.objects_min} exceeds objects_max {self.objects_max}")
        return self

    def worker_count(self) -> int:
        return self.workers or os.cpu_count() or 1

    def to_dict(self) -> Dict[str, Any]:
        return self.model_dump()


def defaults() -> Dict[str, Any]:
    return Config().to_dict()


def load_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> Config:
    """Merge the layered sources and validate once"""
    load_dotenv()
    values: Dict[str, Any] = {}

    if path:
        try:
            with open(path, 'r', encoding='utf-8') as f:
                file_values = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"Cannot read config file {path}: {e}")
        if not isinstance(file_values, dict):
            raise ConfigError(f"Config file {path} must hold a JSON object")
        values.update(file_values)
        logger.debug(f"Loaded {len(file_values)} config values from {path}")

    threads = os.getenv(THREADS_ENV)
    if threads:
        try:
            values['workers'] = int(threads)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {threads!r}")

    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value

    try:
        return Config(**values)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration: {e}")
