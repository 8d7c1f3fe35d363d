"""
Pixel containers, binary morphology and trimap construction.

Coordinate convention shared by every module: x = column, y = row, pixel
centers sit at integer coordinates. Containers are immutable once built.
"""

import logging
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from scipy import ndimage

from errors import DimensionMismatch, EmptyMask

logger = logging.getLogger(__name__)

# Trimap labels double as their PNG gray levels
BG = 0
UNKNOWN = 128
FG = 255


def _frozen(array: np.ndarray, dtype) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class RgbImage:
    """8-bit sRGB image, HxWx3"""
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or data.shape[2] != 3 or data.shape[0] < 1 or data.shape[1] < 1:
            raise DimensionMismatch(f"RGB image must be HxWx3 with H, W >= 1, got {data.shape}")
        object.__setattr__(self, 'data', _frozen(data, np.uint8))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    def to_float(self) -> np.ndarray:
        # v/255, no gamma linearization
        return self.data.astype(np.float64) / 255.0

    @classmethod
    def from_float(cls, values: np.ndarray) -> 'RgbImage':
        return cls(quantize(values))


@dataclass(frozen=True, eq=False)
class BinaryMask:
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise DimensionMismatch(f"Mask must be 2-D and nonempty, got {data.shape}")
        object.__setattr__(self, 'data', _frozen(data, bool))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape

    def count(self) -> int:
        return int(np.count_nonzero(self.data))

    def complement(self) -> 'BinaryMask':
        return BinaryMask(~self.data)


@dataclass(frozen=True, eq=False)
class AlphaMap:
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise DimensionMismatch(f"Alpha map must be 2-D, got {data.shape}")
        if data.size and (np.isnan(data).any() or data.min() < 0.0 or data.max() > 1.0):
            raise ValueError('Alpha values must lie in [0, 1]')
        object.__setattr__(self, 'data', _frozen(data, np.float64))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True, eq=False)
class Trimap:
    """Labels in {BG, UNKNOWN, FG}"""
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise DimensionMismatch(f"Trimap must be 2-D, got {data.shape}")
        if not np.isin(data, (BG, UNKNOWN, FG)).all():
            raise ValueError('Trimap labels must be BG (0), UNKNOWN (128) or FG (255)')
        object.__setattr__(self, 'data', _frozen(data, np.uint8))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def fg(self) -> np.ndarray:
        return self.data == FG

    @property
    def bg(self) -> np.ndarray:
        return self.data == BG

    @property
    def unknown(self) -> np.ndarray:
        return self.data == UNKNOWN

    @classmethod
    def from_sets(cls, fg: np.ndarray, bg: np.ndarray) -> 'Trimap':
        labels = np.full(fg.shape, UNKNOWN, dtype=np.uint8)
        labels[bg] = BG
        labels[fg] = FG
        return cls(labels)


@dataclass(frozen=True)
class StructuringElement:
    shape: str = 'square'
    radius: int = 3

    def __post_init__(self):
        if self.shape not in ('square', 'disc'):
            raise ValueError(f"Unknown structuring element shape: {self.shape}")
        if int(self.radius) != self.radius or self.radius < 0:
            raise ValueError(f"Structuring element radius must be an integer >= 0, got {self.radius}")

    def footprint(self) -> np.ndarray:
        r = self.radius
        dy, dx = np.mgrid[-r:r + 1, -r:r + 1]
        if self.shape == 'disc':
            return dx * dx + dy * dy <= r * r
        return np.ones((2 * r + 1, 2 * r + 1), dtype=bool)

    def offsets(self) -> List[Tuple[int, int]]:
        """(dx, dy) pairs inside the element"""
        r = self.radius
        ys, xs = np.nonzero(self.footprint())
        return [(int(x) - r, int(y) - r) for y, x in zip(ys, xs)]


def erode(mask: BinaryMask, se: StructuringElement, border_value: bool = False) -> BinaryMask:
    """True iff every pixel under the element is true.

    Pixels beyond the border read as `border_value`; the default (False)
    strips a frame from an all-true mask.
    """
    if se.radius == 0:
        return BinaryMask(mask.data)
    out = ndimage.binary_erosion(mask.data, structure=se.footprint(), border_value=int(border_value))
    return BinaryMask(out)


def dilate(mask: BinaryMask, se: StructuringElement) -> BinaryMask:
    """True iff any pixel under the reflected element is true; outside reads False"""
    if se.radius == 0:
        return BinaryMask(mask.data)
    # both element shapes are point-symmetric, so reflection is a no-op
    out = ndimage.binary_dilation(mask.data, structure=se.footprint(), border_value=0)
    return BinaryMask(out)


def make_trimap(mask: BinaryMask, erode_se: StructuringElement, dilate_se: StructuringElement) -> Trimap:
    if not mask.data.any():
        raise EmptyMask('Cannot build a trimap from an all-false mask')
    fg = erode(mask, erode_se).data
    bg = ~dilate(mask, dilate_se).data
    trimap = Trimap.from_sets(fg, bg)
    logger.debug(f"Trimap {mask.width}x{mask.height}: fg={int(fg.sum())} bg={int(bg.sum())} "
                 f"unknown={int(trimap.unknown.sum())}")
    return trimap


def widen_unknown(trimap: Trimap, region: np.ndarray) -> Trimap:
    """Mark `region` UNKNOWN, whatever it was labelled before"""
    labels = np.array(trimap.data)
    labels[np.asarray(region, dtype=bool)] = UNKNOWN
    return Trimap(labels)


def largest_component(mask: BinaryMask) -> BinaryMask:
    """Largest 8-connected component; ties go to the lowest label"""
    if not mask.data.any():
        raise EmptyMask('Mask has no foreground pixel')
    labels, count = ndimage.label(mask.data, structure=np.ones((3, 3), dtype=bool))
    if count == 1:
        return BinaryMask(mask.data)
    sizes = np.bincount(labels.ravel())[1:]
    keep = int(np.argmax(sizes)) + 1
    logger.debug(f"Mask has {count} components, keeping #{keep} with {int(sizes[keep - 1])} pixels")
    return BinaryMask(labels == keep)


def iou(a: BinaryMask, b: BinaryMask) -> float:
    if a.shape != b.shape:
        raise DimensionMismatch(f"IoU of masks with shapes {a.shape} and {b.shape}")
    union = np.count_nonzero(a.data | b.data)
    if union == 0:
        return 1.0
    return np.count_nonzero(a.data & b.data) / union


def quantize(values: np.ndarray) -> np.ndarray:
    """Clamp to [0,1], then round half away from zero to 8 bit"""
    clipped = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    # values are non-negative here, so floor(v + 0.5) rounds half away from zero
    return np.floor(clipped * 255.0 + 0.5).astype(np.uint8)
