"""
Object pool and scene collection.

Layout under the pool root:
    manifest.json
    objects/<id>/image.png, mask.png, alpha.png
    scenes/<id>.jpg

Paths inside the manifest are relative to the pool root.
"""

import hashlib
import io
import json
import logging
import math
import os
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from PIL import Image

from config import Config
from errors import (DecodeError, DimensionMismatch, DuplicateRecord, EmptyMask,
                    ParseError, VersionUnsupported)
from fileio import dump_canonical, read_alpha, read_mask, read_rgb, write_alpha, write_atomic, write_mask, write_rgb
from matting import MattingParams, solve_alpha
from outline import (Point, PolarOutline, Polygon, mass_center, outline_mask, outline_to_polygon, polygon_metrics,
                     ray_distances, transform_polygon)
from raster import (AlphaMap, BinaryMask, RgbImage, StructuringElement, iou, largest_component, make_trimap,
                    widen_unknown)

logger = logging.getLogger(__name__)

MANIFEST_VERSION = '1'
MANIFEST_NAME = 'manifest.json'
ID_LENGTH = 12

_OBJECT_KEYS = {'id', 'category', 'image_path', 'mask_path', 'derived'}
_DERIVED_KEYS = {'center', 'outline', 'alpha_path', 'flags', 'crop', 'width', 'height'}
_SCENE_KEYS = {'id', 'image_path', 'label', 'width', 'height'}
_MANIFEST_KEYS = {'version', 'objects', 'scenes'}


@dataclass
class ObjectRecord:
    id: str
    category: str
    image_path: str
    mask_path: str
    alpha_path: str
    center: Point
    outline: PolarOutline
    mask_incomplete: bool
    width: int
    height: int
    crop: Tuple[int, int, int, int]  # x0, y0, x1, y1 (exclusive)
    extra: Dict[str, Any] = field(default_factory=dict)
    derived_extra: Dict[str, Any] = field(default_factory=dict)

    @property
    def crop_size(self) -> Tuple[int, int]:
        x0, y0, x1, y1 = self.crop
        return x1 - x0, y1 - y0

    def to_dict(self) -> Dict[str, Any]:
        derived = dict(self.derived_extra)
        derived.update({
            'center': self.center.to_list(),
            'outline': self.outline.to_dict(),
            'alpha_path': self.alpha_path,
            'flags': {'mask_incomplete': self.mask_incomplete},
            'crop': list(self.crop),
            'width': self.width,
            'height': self.height,
        })
        data = dict(self.extra)
        data.update({
            'id': self.id,
            'category': self.category,
            'image_path': self.image_path,
            'mask_path': self.mask_path,
            'derived': derived,
        })
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ObjectRecord':
        derived = data['derived']
        cx, cy = derived['center']
        return cls(
            id=str(data['id']),
            category=str(data['category']),
            image_path=data['image_path'],
            mask_path=data['mask_path'],
            alpha_path=derived['alpha_path'],
            center=Point(float(cx), float(cy)),
            outline=PolarOutline.from_dict(derived['outline']),
            mask_incomplete=bool(derived['flags']['mask_incomplete']),
            width=int(derived['width']),
            height=int(derived['height']),
            crop=tuple(int(v) for v in derived['crop']),
            extra={k: v for k, v in data.items() if k not in _OBJECT_KEYS},
            derived_extra={k: v for k, v in derived.items() if k not in _DERIVED_KEYS},
        )


@dataclass
class SceneRecord:
    id: str
    image_path: str
    label: str
    width: int
    height: int
    extra: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        data = dict(self.extra)
        data.update({
            'id': self.id,
            'image_path': self.image_path,
            'label': self.label,
            'width': self.width,
            'height': self.height,
        })
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'SceneRecord':
        return cls(
            id=str(data['id']),
            image_path=data['image_path'],
            label=str(data['label']),
            width=int(data['width']),
            height=int(data['height']),
            extra={k: v for k, v in data.items() if k not in _SCENE_KEYS},
        )


@dataclass
class Manifest:
    objects: List[ObjectRecord] = field(default_factory=list)
    scenes: List[SceneRecord] = field(default_factory=list)
    version: str = MANIFEST_VERSION
    extra: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        data = dict(self.extra)
        data.update({
            'version': self.version,
            'objects': [o.to_dict() for o in self.objects],
            'scenes': [s.to_dict() for s in self.scenes],
        })
        return data

    def object(self, object_id: str) -> ObjectRecord:
        for record in self.objects:
            if record.id == object_id:
                return record
        raise KeyError(f"No object {object_id} in manifest")

    def scene(self, scene_id: str) -> SceneRecord:
        for record in self.scenes:
            if record.id == scene_id:
                return record
        raise KeyError(f"No scene {scene_id} in manifest")

    def categories(self) -> List[str]:
        """Object categories in order of first appearance"""
        seen = []
        for record in self.objects:
            if record.category not in seen:
                seen.append(record.category)
        return seen


def _check_unique(ids: List[str], kind: str) -> None:
    seen = set()
    for record_id in ids:
        if record_id in seen:
            raise DuplicateRecord(f"Duplicate {kind} id {record_id} in manifest")
        seen.add(record_id)


def manifest_bytes(manifest: Manifest) -> bytes:
    return dump_canonical(manifest.to_dict())


def save_manifest(manifest: Manifest, path: str) -> None:
    _check_unique([o.id for o in manifest.objects], 'object')
    _check_unique([s.id for s in manifest.scenes], 'scene')
    write_atomic(path, manifest_bytes(manifest))
    logger.info(f"Saved manifest with {len(manifest.objects)} objects and {len(manifest.scenes)} scenes to {path}")


def parse_manifest(payload: bytes) -> Manifest:
    try:
        data = json.loads(payload.decode('utf-8'))
    except UnicodeDecodeError as e:
        raise ParseError(f"Manifest is not UTF-8: {e}")
    except json.JSONDecodeError as e:
        raise ParseError(f"Manifest is not valid JSON: {e.msg}", e.lineno, e.colno)
    if not isinstance(data, dict):
        raise ParseError('Manifest must be a JSON object')

    version = str(data.get('version'))
    if version != MANIFEST_VERSION:
        raise VersionUnsupported(f"Manifest version {data.get('version')!r} is not supported "
                                 f"(expected {MANIFEST_VERSION!r})")
    try:
        objects = [ObjectRecord.from_dict(o) for o in data.get('objects', [])]
        scenes = [SceneRecord.from_dict(s) for s in data.get('scenes', [])]
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(f"Malformed manifest record: {e!r}")

    _check_unique([o.id for o in objects], 'object')
    _check_unique([s.id for s in scenes], 'scene')
    extra = {k: v for k, v in data.items() if k not in _MANIFEST_KEYS}
    return Manifest(objects=objects, scenes=scenes, version=version, extra=extra)


def load_manifest(path: str) -> Manifest:
    with open(path, 'rb') as f:
        return parse_manifest(f.read())


# Ingestion

def content_id(*payloads: bytes) -> str:
    digest = hashlib.sha256()
    for payload in payloads:
        digest.update(hashlib.sha256(payload).digest())
    return digest.hexdigest()[:ID_LENGTH]


def _read_bytes(path: str) -> bytes:
    try:
        with open(path, 'rb') as f:
            return f.read()
    except OSError as e:
        raise DecodeError(f"Cannot read {path}: {e}")


def _anchor_for(mask: BinaryMask, center: Point) -> Point:
    """The mass center, or the nearest foreground pixel when it falls outside the mask"""
    col, row = int(math.floor(center.x + 0.5)), int(math.floor(center.y + 0.5))
    if 0 <= col < mask.width and 0 <= row < mask.height and mask.data[row, col]:
        return center
    rows, cols = np.nonzero(mask.data)
    nearest = int(np.argmin((cols - center.x) ** 2 + (rows - center.y) ** 2))
    logger.warning(f"Mass center ({center.x:.1f}, {center.y:.1f}) is off the mask; "
                   f"anchoring at pixel ({cols[nearest]}, {rows[nearest]})")
    return Point(float(cols[nearest]), float(rows[nearest]))


def _crop_box(alpha: AlphaMap, polygon: Polygon) -> Tuple[int, int, int, int]:
    rows, cols = np.nonzero(alpha.data > 0.0)
    xs = [polygon.vertices[:, 0].min(), polygon.vertices[:, 0].max()]
    ys = [polygon.vertices[:, 1].min(), polygon.vertices[:, 1].max()]
    if len(rows):
        xs += [cols.min(), cols.max()]
        ys += [rows.min(), rows.max()]
    x0 = max(0, int(math.floor(min(xs))))
    y0 = max(0, int(math.floor(min(ys))))
    x1 = min(alpha.width, int(math.ceil(max(xs))) + 1)
    y1 = min(alpha.height, int(math.ceil(max(ys))) + 1)
    return x0, y0, x1, y1


def matting_params(config: Config) -> MattingParams:
    return MattingParams(window_radius=config.window_radius, epsilon=config.epsilon,
                         tol=config.solver_tol, max_iter=config.solver_max_iter)


def prepare_object(root: str, image_path: str, mask_path: str, category: str, config: Config) -> ObjectRecord:
    """Derive center, outline and alpha for one object and store its files.

    Touches only objects/<id>/, so distinct objects may be prepared concurrently.
    """
    image_bytes, mask_bytes = _read_bytes(image_path), _read_bytes(mask_path)
    image = read_rgb(image_path)
    raw_mask = read_mask(mask_path)
    if (raw_mask.height, raw_mask.width) != (image.height, image.width):
        raise DimensionMismatch(f"Mask {mask_path} is {raw_mask.width}x{raw_mask.height} but image "
                                f"{image_path} is {image.width}x{image.height}")
    if not raw_mask.data.any():
        raise EmptyMask(f"Mask {mask_path} has no foreground pixel")

    object_id = content_id(image_bytes, mask_bytes)
    mask = largest_component(raw_mask)
    center = mass_center(mask)
    outline = ray_distances(mask, _anchor_for(mask, center), config.k)
    # raises DegeneratePolygon before any file is written
    polygon_metrics(outline_to_polygon(outline))

    from_outline = outline_mask(outline, mask.width, mask.height)
    agreement = iou(from_outline, mask)
    incomplete = agreement < config.incomplete_iou

    trimap = make_trimap(mask,
                         StructuringElement(config.trimap_shape, config.erode_radius),
                         StructuringElement(config.trimap_shape, config.dilate_radius))
    if incomplete:
        # let matting decide where outline and mask disagree
        trimap = widen_unknown(trimap, from_outline.data ^ mask.data)
        logger.warning(f"Object {object_id}: mask looks incomplete (outline IoU {agreement:.3f}), "
                       f"widened the unknown band")
    if not trimap.fg.any():
        raise EmptyMask(f"Object {object_id}: erosion left no confident foreground; "
                        f"lower erode_radius (now {config.erode_radius})")

    alpha = solve_alpha(image, trimap, matting_params(config))

    rel_dir = f"objects/{object_id}"
    write_rgb(image, os.path.join(root, rel_dir, 'image.png'))
    write_mask(mask, os.path.join(root, rel_dir, 'mask.png'))
    write_alpha(alpha, os.path.join(root, rel_dir, 'alpha.png'))

    record = ObjectRecord(
        id=object_id,
        category=category,
        image_path=f"{rel_dir}/image.png",
        mask_path=f"{rel_dir}/mask.png",
        alpha_path=f"{rel_dir}/alpha.png",
        center=center,
        outline=outline,
        mask_incomplete=bool(incomplete),
        width=image.width,
        height=image.height,
        crop=_crop_box(alpha, outline_to_polygon(outline)),
    )
    logger.info(f"Prepared object {object_id} ({category}) from {image_path}: "
                f"outline IoU {agreement:.3f}, incomplete={incomplete}")
    return record


def prepare_scene(root: str, image_path: str, label: str) -> SceneRecord:
    payload = _read_bytes(image_path)
    try:
        img = Image.open(io.BytesIO(payload))
        img.load()
        fmt = img.format
        rgb = img.convert('RGB')
    except (OSError, SyntaxError, ValueError) as e:
        raise DecodeError(f"Cannot decode scene {image_path}: {e}")

    scene_id = content_id(payload)
    rel_path = f"scenes/{scene_id}.jpg"
    if fmt == 'JPEG':
        stored = payload
    else:
        buf = io.BytesIO()
        rgb.save(buf, format='JPEG', quality=95)
        stored = buf.getvalue()
    write_atomic(os.path.join(root, rel_path), stored)
    return SceneRecord(id=scene_id, image_path=rel_path, label=label, width=rgb.width, height=rgb.height)


class Pool:
    """Pool directory plus its manifest; the single writer of manifest.json"""

    def __init__(self, root: str):
        self.root = root
        self.manifest_path = os.path.join(root, MANIFEST_NAME)
        if os.path.exists(self.manifest_path):
            self.manifest = load_manifest(self.manifest_path)
        else:
            self.manifest = Manifest()

    def path(self, rel_path: str) -> str:
        return os.path.join(self.root, rel_path)

    def save(self) -> None:
        save_manifest(self.manifest, self.manifest_path)

    def add_object(self, record: ObjectRecord) -> ObjectRecord:
        for existing in self.manifest.objects:
            if existing.id == record.id:
                logger.info(f"Object {record.id} already pooled, keeping the existing record")
                return existing
        self.manifest.objects.append(record)
        return record

    def add_scene(self, record: SceneRecord) -> SceneRecord:
        for existing in self.manifest.scenes:
            if existing.id == record.id:
                logger.info(f"Scene {record.id} already pooled, keeping the existing record")
                return existing
        self.manifest.scenes.append(record)
        return record

    def ingest_object(self, image_path: str, mask_path: str, category: str,
                      config: Optional[Config] = None) -> ObjectRecord:
        return self.add_object(prepare_object(self.root, image_path, mask_path, category, config or Config()))

    def ingest_scene(self, image_path: str, label: str) -> SceneRecord:
        return self.add_scene(prepare_scene(self.root, image_path, label))

    def load_scene(self, scene_id: str) -> RgbImage:
        return read_rgb(self.path(self.manifest.scene(scene_id).image_path))

    def load_object(self, object_id: str) -> Tuple[RgbImage, AlphaMap, Polygon]:
        """Object image and alpha cropped to the record's crop box, outline polygon in crop coordinates"""
        record = self.manifest.object(object_id)
        return _load_object_crop(self.root, record.image_path, record.alpha_path, record.crop,
                                 json.dumps(record.outline.to_dict()))


@lru_cache(maxsize=64)
def _load_object_crop(root: str, image_path: str, alpha_path: str, crop: Tuple[int, int, int, int],
                      outline_json: str) -> Tuple[RgbImage, AlphaMap, Polygon]:
    x0, y0, x1, y1 = crop
    image = read_rgb(os.path.join(root, image_path))
    alpha = read_alpha(os.path.join(root, alpha_path))
    outline = PolarOutline.from_dict(json.loads(outline_json))
    polygon = transform_polygon(outline_to_polygon(outline), 1.0, (x0, y0), (0.0, 0.0))
    return RgbImage(image.data[y0:y1, x0:x1]), AlphaMap(alpha.data[y0:y1, x0:x1]), polygon
