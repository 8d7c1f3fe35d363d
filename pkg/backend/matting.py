"""
Closed-form matting.

Builds the matting Laplacian from local color statistics and solves for
alpha with FG/BG pixels eliminated from the system (alpha fixed to 1/0).
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from errors import DimensionMismatch, NoUnknownPixels
from raster import AlphaMap, RgbImage, Trimap
from solver import DEFAULT_TOL, SparseMatrix, SparseSystem, cg_solve, reduce_system

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MattingParams:
    window_radius: int = 1
    epsilon: float = 1e-7
    tol: float = DEFAULT_TOL
    max_iter: Optional[int] = None

    def __post_init__(self):
        if self.window_radius < 1:
            raise ValueError(f"window_radius must be >= 1, got {self.window_radius}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")


def window_shape(height: int, width: int, radius: int) -> Tuple[int, int]:
    """(2r+1)^2 windows; an axis shorter than that is spanned whole"""
    size = 2 * radius + 1
    return min(size, height), min(size, width)


def _window_indices(height: int, width: int, radius: int, touching: Optional[np.ndarray] = None) -> np.ndarray:
    """Flat pixel indices of every window fully inside the image, one row per window"""
    wy, wx = window_shape(height, width, radius)
    idx = np.arange(height * width).reshape(height, width)
    windows = sliding_window_view(idx, (wy, wx))
    if touching is not None:
        keep = sliding_window_view(touching, (wy, wx)).any(axis=(2, 3))
        return windows[keep].reshape(-1, wy * wx)
    return windows.reshape(-1, wy * wx)


def _window_entries(pixels: np.ndarray, win_idx: np.ndarray, epsilon: float):
    m = win_idx.shape[1]
    colors = pixels[win_idx]                                  # (n_w, m, 3)
    mu = colors.mean(axis=1, keepdims=True)
    centered = colors - mu
    cov = np.einsum('wmi,wmj->wij', centered, centered) / m
    inv = np.linalg.inv(cov + (epsilon / m) * np.eye(3))
    spread = np.einsum('wmi,wij,wnj->wmn', centered, inv, centered)
    values = np.eye(m)[None, :, :] - (1.0 + spread) / m
    rows = np.repeat(win_idx, m, axis=1).ravel()
    cols = np.tile(win_idx, (1, m)).ravel()
    return rows, cols, values.ravel()


def _check_dims(image: RgbImage, trimap: Trimap) -> None:
    if (image.height, image.width) != (trimap.height, trimap.width):
        raise DimensionMismatch(f"Image is {image.width}x{image.height} but trimap is "
                                f"{trimap.width}x{trimap.height}")


def matting_laplacian_full(image: RgbImage, params: MattingParams = MattingParams()) -> SparseMatrix:
    """Unreduced Laplacian over every pixel"""
    pixels = image.to_float().reshape(-1, 3)
    win_idx = _window_indices(image.height, image.width, params.window_radius)
    rows, cols, values = _window_entries(pixels, win_idx, params.epsilon)
    return SparseMatrix.assemble(image.height * image.width, rows, cols, values)


def matting_laplacian(image: RgbImage, trimap: Trimap, params: MattingParams = MattingParams()) -> SparseSystem:
    """Laplacian reduced to UNKNOWN pixels, FG/BG terms moved to the rhs"""
    _check_dims(image, trimap)
    unknown = trimap.unknown
    if not unknown.any():
        raise NoUnknownPixels('Trimap has no UNKNOWN pixel')

    # windows away from the band only couple constrained pixels to each other
    pixels = image.to_float().reshape(-1, 3)
    win_idx = _window_indices(image.height, image.width, params.window_radius, touching=unknown)
    rows, cols, values = _window_entries(pixels, win_idx, params.epsilon)
    laplacian = SparseMatrix.assemble(image.height * image.width, rows, cols, values)
    logger.debug(f"Matting Laplacian: {len(win_idx)} windows, {int(unknown.sum())} unknowns")

    known_alpha = trimap.fg.astype(np.float64).ravel()
    return reduce_system(laplacian, unknown.ravel(), known_alpha)


def solve_alpha(image: RgbImage, trimap: Trimap, params: MattingParams = MattingParams()) -> AlphaMap:
    _check_dims(image, trimap)
    alpha = trimap.fg.astype(np.float64)
    try:
        system = matting_laplacian(image, trimap, params)
    except NoUnknownPixels:
        logger.debug('No unknown pixels, alpha is the FG indicator')
        return AlphaMap(alpha)

    solution, reports = cg_solve(system, tol=params.tol, max_iter=params.max_iter)
    raw = solution[:, 0]
    overshoot = max(0.0, -float(raw.min()), float(raw.max()) - 1.0)
    logger.debug(f"Alpha solve: {len(raw)} unknowns, {reports[0].iterations} iterations, "
                 f"pre-clamp overshoot {overshoot:.4f}")
    alpha[trimap.unknown] = np.clip(raw, 0.0, 1.0)
    return AlphaMap(alpha)
