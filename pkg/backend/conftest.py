"""
Shared fixture builders for the SceneForge tests.
"""

import logging
import os
from typing import Tuple

import numpy as np
import pytest
from PIL import Image

from raster import BinaryMask

FG_COLOR = (200, 40, 30)
BG_COLOR = (20, 120, 60)


def disc_mask(height: int, width: int, cx: float, cy: float, radius: float) -> BinaryMask:
    yy, xx = np.mgrid[0:height, 0:width]
    return BinaryMask((xx - cx) ** 2 + (yy - cy) ** 2 <= radius ** 2)


def ellipse_mask(height: int, width: int, cx: float, cy: float, rx: float, ry: float) -> BinaryMask:
    yy, xx = np.mgrid[0:height, 0:width]
    return BinaryMask(((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0)


def square_mask(height: int, width: int, cx: int, cy: int, half: int) -> BinaryMask:
    data = np.zeros((height, width), dtype=bool)
    data[cy - half:cy + half + 1, cx - half:cx + half + 1] = True
    return BinaryMask(data)


def two_color_image(mask: np.ndarray) -> np.ndarray:
    image = np.empty(mask.shape + (3,), dtype=np.uint8)
    image[...] = BG_COLOR
    image[mask] = FG_COLOR
    return image


def save_png(path, array: np.ndarray) -> str:
    Image.fromarray(array).save(str(path), format='PNG')
    return str(path)


def save_jpeg(path, array: np.ndarray) -> str:
    Image.fromarray(array).save(str(path), format='JPEG', quality=95)
    return str(path)


def write_object_files(directory, name: str = 'obj', size: int = 40, radius: float = 13.0) -> Tuple[str, str]:
    """Two-color disc object with its clean mask"""
    mask = disc_mask(size, size, (size - 1) / 2.0, (size - 1) / 2.0, radius).data
    image_path = save_png(os.path.join(str(directory), f"{name}.png"), two_color_image(mask))
    mask_path = save_png(os.path.join(str(directory), f"{name}_mask.png"), mask.astype(np.uint8) * 255)
    return image_path, mask_path


def write_scene_file(directory, name: str = 'scene', width: int = 96, height: int = 80, seed: int = 0) -> str:
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width]
    base = np.stack([xx * 255.0 / width, yy * 255.0 / height, np.full((height, width), 128.0)], axis=2)
    noisy = np.clip(base + rng.normal(0.0, 4.0, base.shape), 0, 255).astype(np.uint8)
    return save_jpeg(os.path.join(str(directory), f"{name}.jpg"), noisy)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def restore_logging():
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield
    for handler in list(root.handlers):
        if handler not in handlers:
            root.removeHandler(handler)
    for handler in handlers:
        if handler not in root.handlers:
            root.addHandler(handler)
    root.setLevel(level)
