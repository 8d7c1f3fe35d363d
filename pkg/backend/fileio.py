"""
File formats: image decode/encode through Pillow, canonical JSON, atomic writes.

  masks    single-channel PNG, 0 / 255
  trimaps  single-channel PNG, BG=0 UNKNOWN=128 FG=255
  alpha    single-channel PNG, 16-bit written, 8- or 16-bit read
"""

import io
import json
import logging
import os
import tempfile
from typing import Any

import numpy as np
from PIL import Image, UnidentifiedImageError

from errors import DecodeError
from raster import AlphaMap, BinaryMask, RgbImage, Trimap

logger = logging.getLogger(__name__)

_DECODE_FAILURES = (OSError, UnidentifiedImageError, SyntaxError, ValueError, Image.DecompressionBombError)


def _open(path: str) -> Image.Image:
    try:
        img = Image.open(path)
        img.load()
        return img
    except _DECODE_FAILURES as e:
        raise DecodeError(f"Cannot decode image {path}: {e}")


def read_rgb(path: str) -> RgbImage:
    return RgbImage(np.asarray(_open(path).convert('RGB')))


def read_mask(path: str) -> BinaryMask:
    gray = np.asarray(_open(path).convert('L'))
    return BinaryMask(gray > 127)


def read_trimap(path: str) -> Trimap:
    gray = np.asarray(_open(path).convert('L'))
    if not np.isin(gray, (0, 128, 255)).all():
        raise DecodeError(f"Trimap {path} holds gray levels other than 0/128/255")
    return Trimap(gray)


def read_alpha(path: str) -> AlphaMap:
    img = _open(path)
    if img.mode in ('I;16', 'I;16B', 'I;16L', 'I'):
        values = np.asarray(img, dtype=np.float64) / 65535.0
    else:
        values = np.asarray(img.convert('L'), dtype=np.float64) / 255.0
    return AlphaMap(np.clip(values, 0.0, 1.0))


def encode_png(array: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(array).save(buf, format='PNG')
    return buf.getvalue()


def alpha_to_uint16(alpha: AlphaMap) -> np.ndarray:
    return np.floor(alpha.data * 65535.0 + 0.5).astype(np.uint16)


def write_rgb(image: RgbImage, path: str) -> None:
    write_atomic(path, encode_png(np.ascontiguousarray(image.data)))


def write_mask(mask: BinaryMask, path: str) -> None:
    write_atomic(path, encode_png(mask.data.astype(np.uint8) * 255))


def write_trimap(trimap: Trimap, path: str) -> None:
    write_atomic(path, encode_png(np.ascontiguousarray(trimap.data)))


def write_alpha(alpha: AlphaMap, path: str) -> None:
    write_atomic(path, encode_png(alpha_to_uint16(alpha)))


def write_atomic(path: str, payload: bytes) -> None:
    """Write to a temp file next to `path`, then rename over it"""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix='.tmp-', suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, 'wb') as f:
            f.write(payload)
        os.replace(tmp_path, path)
    except Exception:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def dump_canonical(obj: Any) -> bytes:
    """Sorted keys, no whitespace, shortest round-trip floats, UTF-8"""
    return json.dumps(obj, sort_keys=True, separators=(',', ':'), ensure_ascii=False,
                      allow_nan=False).encode('utf-8')
