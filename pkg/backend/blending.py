"""
Poisson (seamless-clone) compositing and plain alpha over-compositing.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np

from errors import DimensionMismatch, OutOfBounds, RegionTouchesBorder
from raster import AlphaMap, BinaryMask, RgbImage, quantize
from solver import DEFAULT_TOL, SparseMatrix, SparseSystem, cg_solve

logger = logging.getLogger(__name__)

# 4-neighbourhood as (dy, dx)
NEIGHBOURS = ((-1, 0), (1, 0), (0, -1), (0, 1))


class GuidanceMode(str, Enum):
    SOURCE_GRADIENTS = 'source_gradients'
    MIXED_GRADIENTS = 'mixed_gradients'


@dataclass(frozen=True, eq=False)
class BlendRegion:
    """Pixels of the target to solve for; source pixel (y - dy, x - dx) lands on target (y, x)"""
    mask: BinaryMask
    offset: Tuple[int, int] = (0, 0)  # (dx, dy)

    def __post_init__(self):
        if not self.mask.data.any():
            raise ValueError('Blend region is empty')
        object.__setattr__(self, 'offset', (int(self.offset[0]), int(self.offset[1])))


def _check_margin(region: BlendRegion) -> None:
    m = region.mask.data
    if m[0, :].any() or m[-1, :].any() or m[:, 0].any() or m[:, -1].any():
        raise RegionTouchesBorder('Blend region must keep a 1-px margin from the target border')


def _source_in_target_frame(source: np.ndarray, offset: Tuple[int, int], shape: Tuple[int, int]) -> np.ndarray:
    """Source values at target coordinates, NaN where the source does not reach"""
    dx, dy = offset
    h, w = shape
    placed = np.full((h, w, 3), np.nan)
    y0, x0 = max(0, dy), max(0, dx)
    y1, x1 = min(h, dy + source.shape[0]), min(w, dx + source.shape[1])
    if y0 < y1 and x0 < x1:
        placed[y0:y1, x0:x1] = source[y0 - dy:y1 - dy, x0 - dx:x1 - dx]
    return placed


def guidance(source_here: np.ndarray, source_there: np.ndarray, target_here: np.ndarray,
             target_there: np.ndarray, mode: GuidanceMode) -> np.ndarray:
    """Guidance component along one neighbour axis.

    Mixed mode takes the target difference only when it is strictly larger
    in magnitude; ties go to the source.
    """
    g = source_here - source_there
    if mode == GuidanceMode.MIXED_GRADIENTS:
        f = target_here - target_there
        g = np.where(np.abs(f) > np.abs(g), f, g)
    return g


def poisson_system(target: RgbImage, source: RgbImage, region: BlendRegion,
                   mode: GuidanceMode = GuidanceMode.MIXED_GRADIENTS) -> Tuple[SparseSystem, np.ndarray]:
    """5-point stencil system over region pixels; returns it with the (row, col) of each unknown"""
    mode = GuidanceMode(mode)
    mask = region.mask.data
    if mask.shape != (target.height, target.width):
        raise DimensionMismatch(f"Region is {mask.shape[1]}x{mask.shape[0]} but target is "
                                f"{target.width}x{target.height}")
    _check_margin(region)

    f_star = target.to_float()
    g = _source_in_target_frame(source.to_float(), region.offset, mask.shape)

    rows, cols = np.nonzero(mask)
    n = len(rows)
    index = np.full(mask.shape, -1, dtype=np.int64)
    index[rows, cols] = np.arange(n)

    if np.isnan(g[rows, cols]).any():
        raise OutOfBounds('Source does not cover the blend region at the given offset')

    tri_rows = [np.arange(n)]
    tri_cols = [np.arange(n)]
    tri_vals = [np.full(n, 4.0)]
    rhs = np.zeros((n, 3))

    for dy, dx in NEIGHBOURS:
        qr, qc = rows + dy, cols + dx
        g_q = g[qr, qc]
        if np.isnan(g_q).any():
            raise OutOfBounds('Source does not cover the neighbours of the blend region')
        rhs += guidance(g[rows, cols], g_q, f_star[rows, cols], f_star[qr, qc], mode)

        inside = mask[qr, qc]
        tri_rows.append(np.nonzero(inside)[0])
        tri_cols.append(index[qr[inside], qc[inside]])
        tri_vals.append(np.full(int(inside.sum()), -1.0))
        # Dirichlet boundary: known target values move to the rhs
        rhs[~inside] += f_star[qr[~inside], qc[~inside]]

    matrix = SparseMatrix.assemble(n, np.concatenate(tri_rows), np.concatenate(tri_cols), np.concatenate(tri_vals))
    return SparseSystem(matrix, rhs), np.stack([rows, cols], axis=1)


def poisson_solve(target: RgbImage, source: RgbImage, region: BlendRegion,
                  mode: GuidanceMode = GuidanceMode.MIXED_GRADIENTS, tol: float = DEFAULT_TOL,
                  max_iter: Optional[int] = None) -> np.ndarray:
    """Real-valued result (HxWx3, unit interval, unclamped); target values outside the region"""
    system, coords = poisson_system(target, source, region, mode)
    solution, reports = cg_solve(system, tol=tol, max_iter=max_iter)
    logger.debug(f"Poisson blend: {system.matrix.n} unknowns, iterations per channel "
                 f"{[r.iterations for r in reports]}")
    out = target.to_float()
    out[coords[:, 0], coords[:, 1]] = solution
    return out


def poisson_blend(target: RgbImage, source: RgbImage, region: BlendRegion,
                  mode: GuidanceMode = GuidanceMode.MIXED_GRADIENTS, tol: float = DEFAULT_TOL,
                  max_iter: Optional[int] = None) -> RgbImage:
    solved = poisson_solve(target, source, region, mode, tol, max_iter)
    out = np.array(target.data)
    mask = region.mask.data
    # only region pixels are rewritten, everything else stays bit-identical
    out[mask] = quantize(solved[mask])
    return RgbImage(out)


def _placed_window(scene: RgbImage, width: int, height: int, offset: Tuple[int, int]) -> Tuple[slice, slice]:
    ox, oy = int(offset[0]), int(offset[1])
    if ox < 0 or oy < 0 or ox + width > scene.width or oy + height > scene.height:
        raise OutOfBounds(f"Object {width}x{height} at ({ox}, {oy}) leaves the "
                          f"{scene.width}x{scene.height} scene")
    return slice(oy, oy + height), slice(ox, ox + width)


def composite_over(scene: RgbImage, obj: RgbImage, alpha: AlphaMap, offset: Tuple[int, int]) -> RgbImage:
    """out = a * obj + (1 - a) * scene over the placed rectangle"""
    if (alpha.height, alpha.width) != (obj.height, obj.width):
        raise DimensionMismatch(f"Alpha is {alpha.width}x{alpha.height} but object is {obj.width}x{obj.height}")
    rows, cols = _placed_window(scene, obj.width, obj.height, offset)

    a = alpha.data[:, :, None]
    below = scene.data[rows, cols].astype(np.float64) / 255.0
    mixed = a * obj.to_float() + (1.0 - a) * below

    out = np.array(scene.data)
    out[rows, cols] = quantize(mixed)
    return RgbImage(out)


def blend_region_from_alpha(alpha: AlphaMap, offset: Tuple[int, int], scene_height: int, scene_width: int,
                            threshold: float = 0.05) -> BlendRegion:
    """Scene-sized region of placed pixels whose alpha exceeds `threshold`"""
    mask = np.zeros((scene_height, scene_width), dtype=bool)
    ox, oy = int(offset[0]), int(offset[1])
    placed = alpha.data > threshold
    mask[oy:oy + alpha.height, ox:ox + alpha.width] = placed
    return BlendRegion(BinaryMask(mask), (0, 0))
