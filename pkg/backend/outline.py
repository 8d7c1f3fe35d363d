"""
Polar outline representation of an object boundary.

An outline is an anchor point plus K distances measured along evenly spaced
directions; direction k has angle 2*pi*k/K, measured from +x toward +y
(x = column, y = row, so angles turn clockwise on screen).
"""

import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np

from errors import AnchorOutsideMask, DegeneratePolygon, EmptyMask, JitterExhausted
from raster import BinaryMask

logger = logging.getLogger(__name__)

DEFAULT_K = 16
RAY_STEP = 0.25
REFINE_STEP = 0.05
MAX_REJECTIONS = 100


@dataclass(frozen=True)
class Point:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"Point coordinates must be finite, got ({self.x}, {self.y})")

    def to_list(self) -> List[float]:
        return [self.x, self.y]


@dataclass(frozen=True)
class PolarOutline:
    anchor: Point
    distances: Tuple[float, ...]

    def __post_init__(self):
        distances = tuple(float(d) for d in self.distances)
        if len(distances) < 3:
            raise ValueError(f"An outline needs at least 3 directions, got {len(distances)}")
        if any(not (d >= 0.0) or not math.isfinite(d) for d in distances):
            raise ValueError('Outline distances must be finite and >= 0')
        object.__setattr__(self, 'distances', distances)

    @property
    def k(self) -> int:
        return len(self.distances)

    def angles(self) -> np.ndarray:
        return direction_angles(self.k)

    def to_dict(self) -> Dict[str, Any]:
        return {'anchor': self.anchor.to_list(), 'k': self.k, 'd': list(self.distances)}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'PolarOutline':
        distances = tuple(data['d'])
        if int(data['k']) != len(distances):
            raise ValueError(f"Outline declares k={data['k']} but carries {len(distances)} distances")
        x, y = data['anchor']
        return cls(Point(float(x), float(y)), distances)


@dataclass(frozen=True, eq=False)
class Polygon:
    """Closed implicitly; vertices as an (N, 2) array of (x, y)"""
    vertices: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64, copy=True).reshape(-1, 2)
        if len(v) < 3:
            raise ValueError(f"A polygon needs at least 3 vertices, got {len(v)}")
        if not np.isfinite(v).all():
            raise ValueError('Polygon vertices must be finite')
        v.setflags(write=False)
        object.__setattr__(self, 'vertices', v)

    def __len__(self) -> int:
        return len(self.vertices)

    def flatten(self) -> List[float]:
        return [float(c) for c in self.vertices.ravel()]


def direction_angles(k: int) -> np.ndarray:
    return 2.0 * np.pi * np.arange(k) / k


def _nearest_pixel(x: float, y: float) -> Tuple[int, int]:
    return int(math.floor(x + 0.5)), int(math.floor(y + 0.5))


def _anchor_is_inside(mask: BinaryMask, anchor: Point) -> bool:
    col, row = _nearest_pixel(anchor.x, anchor.y)
    if not (0 <= col < mask.width and 0 <= row < mask.height):
        return False
    return bool(mask.data[row, col])


def mass_center(mask: BinaryMask) -> Point:
    rows, cols = np.nonzero(mask.data)
    if len(rows) == 0:
        raise EmptyMask('Mass center of an empty mask is undefined')
    return Point(float(cols.mean()), float(rows.mean()))


def _ray_limit(origin: float, step: float, size: int) -> float:
    # samples stay where floor(v + 0.5) is a valid index, i.e. v in [-0.5, size - 0.5)
    if step > 1e-12:
        return (size - 0.5 - origin) / step
    if step < -1e-12:
        return (origin + 0.5) / -step
    return math.inf


def _cast(mask: BinaryMask, anchor: Point, theta: float) -> float:
    c, s = math.cos(theta), math.sin(theta)
    t_max = min(_ray_limit(anchor.x, c, mask.width), _ray_limit(anchor.y, s, mask.height))

    t = np.arange(0.0, t_max, RAY_STEP)
    cols = np.floor(anchor.x + t * c + 0.5).astype(np.int64)
    rows = np.floor(anchor.y + t * s + 0.5).astype(np.int64)
    valid = (cols >= 0) & (cols < mask.width) & (rows >= 0) & (rows < mask.height)
    t, cols, rows = t[valid], cols[valid], rows[valid]

    hits = np.nonzero(mask.data[rows, cols])[0]
    if len(hits) == 0:
        return 0.0
    # outermost foreground sample, not the first exit
    coarse = float(t[hits[-1]])

    # walk the bracket [coarse, coarse + RAY_STEP) in fine steps
    best = coarse
    for i in range(1, int(round(RAY_STEP / REFINE_STEP))):
        tt = coarse + i * REFINE_STEP
        if tt >= t_max:
            break
        col, row = _nearest_pixel(anchor.x + tt * c, anchor.y + tt * s)
        if not (0 <= col < mask.width and 0 <= row < mask.height) or not mask.data[row, col]:
            break
        best = tt
    return best


def ray_distances(mask: BinaryMask, anchor: Point, k: int = DEFAULT_K) -> PolarOutline:
    if k < 3:
        raise ValueError(f"k must be >= 3, got {k}")
    if not mask.data.any():
        raise EmptyMask('Cannot cast rays in an empty mask')
    if not _anchor_is_inside(mask, anchor):
        raise AnchorOutsideMask(f"Anchor ({anchor.x:.2f}, {anchor.y:.2f}) does not sit on a foreground pixel")

    distances = tuple(_cast(mask, anchor, theta) for theta in direction_angles(k))
    return PolarOutline(anchor, distances)


def default_jitter_radius(mask: BinaryMask, fraction: float = 0.05) -> float:
    rows, cols = np.nonzero(mask.data)
    if len(rows) == 0:
        raise EmptyMask('Jitter radius of an empty mask is undefined')
    w = cols.max() - cols.min() + 1
    h = rows.max() - rows.min() + 1
    return fraction * math.hypot(w, h)


def jittered_samples(mask: BinaryMask, center: Point, jitter_radius: float, n: int,
                     rng: np.random.Generator, k: int = DEFAULT_K) -> List[PolarOutline]:
    """Outlines for anchors drawn uniformly from the disc around `center`.

    Anchors that leave the mask are redrawn; distances are recomputed for
    every accepted anchor.
    """
    if jitter_radius < 0:
        raise ValueError(f"jitter_radius must be >= 0, got {jitter_radius}")
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")

    outlines = []
    rejections = 0
    while len(outlines) < n:
        r = jitter_radius * math.sqrt(rng.random())
        phi = 2.0 * math.pi * rng.random()
        anchor = Point(center.x + r * math.cos(phi), center.y + r * math.sin(phi))
        if not _anchor_is_inside(mask, anchor):
            rejections += 1
            if rejections >= MAX_REJECTIONS:
                raise JitterExhausted(f"{MAX_REJECTIONS} consecutive anchors fell outside the mask "
                                      f"(radius {jitter_radius:.2f} around ({center.x:.2f}, {center.y:.2f}))")
            continue
        rejections = 0
        outlines.append(ray_distances(mask, anchor, k))
    return outlines


def outline_to_polygon(outline: PolarOutline) -> Polygon:
    theta = outline.angles()
    d = np.asarray(outline.distances)
    xs = outline.anchor.x + d * np.cos(theta)
    ys = outline.anchor.y + d * np.sin(theta)
    return Polygon(np.stack([xs, ys], axis=1))


def rasterize_polygon(poly: Polygon, width: int, height: int) -> BinaryMask:
    """Even-odd scanline fill: a pixel is set iff its center is inside.

    Edges use the half-open rule y0 <= y < y1 and a center exactly on a
    crossing counts as inside, so an axis-aligned square covers [x0, x1) x [y0, y1).
    """
    v = poly.vertices
    x0, y0 = v[:, 0], v[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    out = np.zeros((height, width), dtype=bool)
    cols = np.arange(width, dtype=np.float64)

    lo = max(0, int(math.ceil(v[:, 1].min())))
    hi = min(height - 1, int(math.floor(v[:, 1].max())))
    for row in range(lo, hi + 1):
        y = float(row)
        crossing = ((y0 <= y) & (y < y1)) | ((y1 <= y) & (y < y0))
        if not crossing.any():
            continue
        a0, b0, a1, b1 = x0[crossing], y0[crossing], x1[crossing], y1[crossing]
        xs = np.sort(a0 + (y - b0) * (a1 - a0) / (b1 - b0))
        # number of crossings at or left of each center; odd means inside
        count = np.searchsorted(xs, cols, side='right')
        out[row] = (count % 2) == 1
    return BinaryMask(out)


def polygon_metrics(poly: Polygon) -> Tuple[List[float], float]:
    v = poly.vertices
    x, y = v[:, 0], v[:, 1]
    area = abs(float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))) / 2.0
    if area == 0.0:
        raise DegeneratePolygon('Polygon encloses zero area')
    min_x, min_y = float(x.min()), float(y.min())
    bbox = [min_x, min_y, float(x.max()) - min_x, float(y.max()) - min_y]
    return bbox, area


def transform_polygon(poly: Polygon, scale: float, origin: Sequence[float], position: Sequence[float]) -> Polygon:
    """Similarity map v -> (v - origin) * scale + position"""
    v = (poly.vertices - np.asarray(origin, dtype=np.float64)) * scale + np.asarray(position, dtype=np.float64)
    return Polygon(v)


def clip_polygon(poly: Polygon, width: int, height: int) -> Polygon:
    v = np.array(poly.vertices)
    v[:, 0] = np.clip(v[:, 0], 0.0, width - 1)
    v[:, 1] = np.clip(v[:, 1], 0.0, height - 1)
    return Polygon(v)


def outline_mask(outline: PolarOutline, width: int, height: int) -> BinaryMask:
    return rasterize_polygon(outline_to_polygon(outline), width, height)
