"""
COCO-style annotation datasets: build from synthesis results, canonical
serialization, parsing and integrity checks.

Only polygon segmentations are supported; RLE and crowd annotations are
rejected on parse.
"""

import json
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

from PIL import Image

from errors import DuplicateCategory, IntegrityError, ParseError
from fileio import dump_canonical, write_atomic
from outline import Polygon, polygon_metrics

logger = logging.getLogger(__name__)

SUPERCATEGORY = 'object'
ANNOTATIONS_NAME = 'annotations.json'
INFO = {
    'description': 'SceneForge synthetic dataset',
    'version': '1.0',
    'year': 2024,
    'contributor': 'SceneForge',
    'url': '',
    'date_created': '',
}
LICENSES = [{'id': 1, 'name': 'unspecified', 'url': ''}]

_IMAGE_KEYS = {'id', 'file_name', 'width', 'height'}
_ANNOTATION_KEYS = {'id', 'image_id', 'category_id', 'segmentation', 'bbox', 'area', 'iscrowd'}
_CATEGORY_KEYS = {'id', 'name', 'supercategory'}
_DATASET_KEYS = {'images', 'annotations', 'categories', 'info', 'licenses'}


@dataclass
class CocoImage:
    id: int
    file_name: str
    width: int
    height: int
    extra: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        data = dict(self.extra)
        data.update({'id': self.id, 'file_name': self.file_name, 'width': self.width, 'height': self.height})
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'CocoImage':
        return cls(id=_int(data['id']), file_name=str(data['file_name']), width=_int(data['width']),
                   height=_int(data['height']), extra={k: v for k, v in data.items() if k not in _IMAGE_KEYS})


@dataclass
class CocoAnnotation:
    id: int
    image_id: int
    category_id: int
    segmentation: List[List[float]]
    bbox: List[float]
    area: float
    iscrowd: int = 0
    extra: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        data = dict(self.extra)
        data.update({
            'id': self.id,
            'image_id': self.image_id,
            'category_id': self.category_id,
            'segmentation': [list(p) for p in self.segmentation],
            'bbox': list(self.bbox),
            'area': self.area,
            'iscrowd': self.iscrowd,
        })
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'CocoAnnotation':
        segmentation = data['segmentation']
        if isinstance(segmentation, dict):
            raise ParseError(f"Annotation {data.get('id')}: RLE segmentation is not supported")
        if _int(data.get('iscrowd', 0)) != 0:
            raise ParseError(f"Annotation {data.get('id')}: crowd annotations are not supported")
        if not isinstance(segmentation, list) or not all(isinstance(p, list) for p in segmentation):
            raise ParseError(f"Annotation {data.get('id')}: segmentation must be a list of polygons")
        bbox = data['bbox']
        if not isinstance(bbox, list) or len(bbox) != 4:
            raise ParseError(f"Annotation {data.get('id')}: bbox must hold 4 numbers")
        return cls(
            id=_int(data['id']),
            image_id=_int(data['image_id']),
            category_id=_int(data['category_id']),
            segmentation=[[_number(v) for v in p] for p in segmentation],
            bbox=[_number(v) for v in bbox],
            area=_number(data['area']),
            iscrowd=0,
            extra={k: v for k, v in data.items() if k not in _ANNOTATION_KEYS},
        )


@dataclass
class CocoCategory:
    id: int
    name: str
    supercategory: str = SUPERCATEGORY
    extra: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        data = dict(self.extra)
        data.update({'id': self.id, 'name': self.name, 'supercategory': self.supercategory})
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'CocoCategory':
        return cls(id=_int(data['id']), name=str(data['name']),
                   supercategory=str(data.get('supercategory', SUPERCATEGORY)),
                   extra={k: v for k, v in data.items() if k not in _CATEGORY_KEYS})


@dataclass
class CocoDataset:
    images: List[CocoImage] = field(default_factory=list)
    annotations: List[CocoAnnotation] = field(default_factory=list)
    categories: List[CocoCategory] = field(default_factory=list)
    info: Optional[Dict[str, Any]] = None
    licenses: Optional[List[Dict[str, Any]]] = None
    extra: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        data = dict(self.extra)
        data.update({
            'images': [i.to_dict() for i in self.images],
            'annotations': [a.to_dict() for a in self.annotations],
            'categories': [c.to_dict() for c in self.categories],
        })
        if self.info is not None:
            data['info'] = self.info
        if self.licenses is not None:
            data['licenses'] = self.licenses
        return data

    def category_names(self) -> List[str]:
        return [c.name for c in self.categories]


def _int(value: Any) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ParseError(f"Expected an integer, got {value!r}")
    return value


def _number(value: Any) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParseError(f"Expected a number, got {value!r}")
    return value


def _bbox_of(segmentation: List[List[float]]) -> List[float]:
    xs = [v for p in segmentation for v in p[0::2]]
    ys = [v for p in segmentation for v in p[1::2]]
    return [min(xs), min(ys), max(xs) - min(xs), max(ys) - min(ys)]


def check_integrity(dataset: CocoDataset, exact_bbox: bool = False) -> None:
    """Unique ids, resolvable references, well-formed polygons.

    With `exact_bbox` every bbox must also equal its polygon's min/max.
    """
    for kind, records in (('image', dataset.images), ('annotation', dataset.annotations),
                          ('category', dataset.categories)):
        seen = set()
        for record in records:
            if record.id in seen:
                raise IntegrityError(f"Duplicate {kind} id {record.id}")
            seen.add(record.id)

    image_ids = {i.id for i in dataset.images}
    category_ids = {c.id for c in dataset.categories}
    for ann in dataset.annotations:
        if ann.image_id not in image_ids:
            raise IntegrityError(f"Annotation {ann.id} references missing image {ann.image_id}")
        if ann.category_id not in category_ids:
            raise IntegrityError(f"Annotation {ann.id} references missing category {ann.category_id}")
        if not ann.segmentation:
            raise IntegrityError(f"Annotation {ann.id} has no polygon")
        for polygon in ann.segmentation:
            if len(polygon) < 6 or len(polygon) % 2:
                raise IntegrityError(f"Annotation {ann.id} has a polygon with {len(polygon)} coordinates; "
                                     f"need an even count of at least 6")
        if exact_bbox and list(ann.bbox) != _bbox_of(ann.segmentation):
            raise IntegrityError(f"Annotation {ann.id}: bbox {ann.bbox} is not the polygon's min/max "
                                 f"{_bbox_of(ann.segmentation)}")


def build_dataset(results: Sequence[Any], category_names: Sequence[str]) -> CocoDataset:
    """One image per SynthResult and one annotation per placed instance, ids from 1 in input order"""
    names = list(category_names)
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise DuplicateCategory(f"Duplicate category names: {dupes}")
    categories = [CocoCategory(i + 1, name) for i, name in enumerate(names)]
    category_ids = {c.name: c.id for c in categories}

    images, annotations = [], []
    for result in results:
        image_id = len(images) + 1
        images.append(CocoImage(image_id, result.image_path, result.width, result.height))
        for instance in result.annotations:
            if instance.category not in category_ids:
                raise IntegrityError(f"Instance of {instance.object_id} has unknown category {instance.category!r}")
            polygon: Polygon = instance.polygon
            bbox, area = polygon_metrics(polygon)
            annotations.append(CocoAnnotation(
                id=len(annotations) + 1,
                image_id=image_id,
                category_id=category_ids[instance.category],
                segmentation=[polygon.flatten()],
                bbox=bbox,
                area=area,
            ))

    dataset = CocoDataset(images, annotations, categories, info=dict(INFO), licenses=[dict(l) for l in LICENSES])
    check_integrity(dataset, exact_bbox=True)
    logger.info(f"Built COCO dataset: {len(images)} images, {len(annotations)} annotations, "
                f"{len(categories)} categories")
    return dataset


def serialize(dataset: CocoDataset) -> bytes:
    return dump_canonical(dataset.to_dict())


def parse(payload: bytes) -> CocoDataset:
    try:
        data = json.loads(payload.decode('utf-8'))
    except UnicodeDecodeError as e:
        raise ParseError(f"Annotation file is not UTF-8: {e}")
    except json.JSONDecodeError as e:
        raise ParseError(f"Annotation file is not valid JSON: {e.msg}", e.lineno, e.colno)
    if not isinstance(data, dict):
        raise ParseError('Annotation file must hold a JSON object')

    try:
        dataset = CocoDataset(
            images=[CocoImage.from_dict(i) for i in data.get('images', [])],
            annotations=[CocoAnnotation.from_dict(a) for a in data.get('annotations', [])],
            categories=[CocoCategory.from_dict(c) for c in data.get('categories', [])],
            info=data.get('info'),
            licenses=data.get('licenses'),
            extra={k: v for k, v in data.items() if k not in _DATASET_KEYS},
        )
    except (KeyError, TypeError, AttributeError) as e:
        raise ParseError(f"Malformed COCO record: {e!r}")

    try:
        check_integrity(dataset)
    except IntegrityError as e:
        raise ParseError(str(e))
    return dataset


def write_dataset(dataset: CocoDataset, path: str) -> None:
    write_atomic(path, serialize(dataset))
    logger.info(f"Wrote {path}")


def load_dataset(path: str) -> CocoDataset:
    with open(path, 'rb') as f:
        return parse(f.read())


def validate_output(out_dir: str, annotations_name: str = ANNOTATIONS_NAME) -> List[str]:
    """Re-check an output directory's annotation file against its images; returns the problems found"""
    path = os.path.join(out_dir, annotations_name)
    try:
        dataset = load_dataset(path)
        check_integrity(dataset, exact_bbox=True)
    except OSError as e:
        return [f"Cannot read {path}: {e}"]
    except (ParseError, IntegrityError) as e:
        return [f"{path}: {e}"]

    problems = []
    sizes = {}
    for image in dataset.images:
        image_path = os.path.join(out_dir, image.file_name)
        if not os.path.exists(image_path):
            problems.append(f"Missing image file {image.file_name}")
            continue
        try:
            with Image.open(image_path) as img:
                width, height = img.size
        except OSError as e:
            problems.append(f"Cannot decode {image.file_name}: {e}")
            continue
        if (width, height) != (image.width, image.height):
            problems.append(f"{image.file_name} is {width}x{height}, annotations say {image.width}x{image.height}")
        sizes[image.id] = (image.width, image.height)

    for ann in dataset.annotations:
        if ann.image_id not in sizes:
            continue
        width, height = sizes[ann.image_id]
        x, y, w, h = ann.bbox
        if x < 0 or y < 0 or x + w > width or y + h > height:
            problems.append(f"Annotation {ann.id} bbox {ann.bbox} leaves its {width}x{height} image")

    for problem in problems:
        logger.warning(problem)
    logger.info(f"Validated {path}: {len(dataset.images)} images, {len(dataset.annotations)} annotations, "
                f"{len(problems)} problems")
    return problems
