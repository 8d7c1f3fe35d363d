import json

import numpy as np
import pytest

from coco import (CocoDataset, build_dataset, check_integrity, load_dataset, parse, serialize, validate_output,
                  write_dataset)
from conftest import save_png
from errors import DuplicateCategory, IntegrityError, ParseError
from outline import Polygon, polygon_metrics
from synth import InstanceAnnotation, SynthResult

CATEGORIES = [
    'haagen dazs cookie dough', 'clif zbar chocolate brownie', 'cheez it bold cheddar', 'cholula chipotle hot sauce',
    'crystal hot sauce', 'hunts sauce', 'mom to mom butternut squash pear', 'nature valley crunchy oats n honey',
    'pringles bbq', 'red bull',
]

MINIMAL_COCO = b"""{
  "images": [{"id": 1, "file_name": "a.png", "width": 20, "height": 10}],
  "annotations": [{"id": 1, "image_id": 1, "category_id": 1, "iscrowd": 0, "area": 12,
                   "bbox": [2, 3, 4, 3], "segmentation": [[2, 3, 6, 3, 6, 6, 2, 6]]}],
  "categories": [{"id": 1, "name": "red bull", "supercategory": "drink"}]
}"""


def instance(vertices, category='red bull', object_id='abc'):
    polygon = Polygon(vertices)
    bbox, area = polygon_metrics(polygon)
    return InstanceAnnotation(object_id, category, polygon, bbox, area)


def result(index, instances, width=64, height=48):
    return SynthResult(index, f"images/{index}_scene.png", width, height, instances)


def random_results(rng, n):
    results = []
    for i in range(n):
        instances = []
        for _ in range(int(rng.integers(1, 4))):
            cx, cy = rng.uniform(10, 50), rng.uniform(10, 38)
            d = rng.uniform(2, 8, size=8)
            theta = 2 * np.pi * np.arange(8) / 8
            vertices = np.stack([cx + d * np.cos(theta), cy + d * np.sin(theta)], axis=1)
            instances.append(instance(vertices, CATEGORIES[int(rng.integers(len(CATEGORIES)))]))
        results.append(result(i, instances))
    return results


def test_empty_results_still_emit_categories():
    dataset = build_dataset([], ['cup', 'bowl'])
    assert dataset.images == [] and dataset.annotations == []
    assert [(c.id, c.name, c.supercategory) for c in dataset.categories] == [(1, 'cup', 'object'),
                                                                            (2, 'bowl', 'object')]


def test_unit_square_annotation():
    dataset = build_dataset([result(0, [instance([[10, 20], [11, 20], [11, 21], [10, 21]])])], ['red bull'])
    ann = dataset.annotations[0]
    assert ann.bbox == [10.0, 20.0, 1.0, 1.0]
    assert ann.area == 1.0
    assert ann.segmentation == [[10.0, 20.0, 11.0, 20.0, 11.0, 21.0, 10.0, 21.0]]
    assert (ann.id, ann.image_id, ann.category_id, ann.iscrowd) == (1, 1, 1, 0)


def test_ten_categories_numbered_in_order():
    dataset = build_dataset([], CATEGORIES)
    assert [c.id for c in dataset.categories] == list(range(1, 11))
    assert dataset.category_names() == CATEGORIES


def test_ids_sequential_in_input_order(rng):
    dataset = build_dataset(random_results(rng, 20), CATEGORIES)
    assert [i.id for i in dataset.images] == list(range(1, 21))
    assert [a.id for a in dataset.annotations] == list(range(1, len(dataset.annotations) + 1))
    assert [a.image_id for a in dataset.annotations] == sorted(a.image_id for a in dataset.annotations)


def test_duplicate_category_rejected():
    with pytest.raises(DuplicateCategory):
        build_dataset([], ['cup', 'bowl', 'cup'])


def test_unknown_category_rejected():
    with pytest.raises(IntegrityError):
        build_dataset([result(0, [instance([[0, 0], [4, 0], [4, 4]], 'spoon')])], ['cup'])


def test_bbox_is_polygon_extent(rng):
    dataset = build_dataset(random_results(rng, 50), CATEGORIES)
    for ann in dataset.annotations:
        xs, ys = ann.segmentation[0][0::2], ann.segmentation[0][1::2]
        assert ann.bbox == [min(xs), min(ys), max(xs) - min(xs), max(ys) - min(ys)]


def test_serialize_round_trip(rng):
    dataset = build_dataset(random_results(rng, 30), CATEGORIES)
    payload = serialize(dataset)
    assert serialize(dataset) == payload
    parsed = parse(payload)
    assert parsed == dataset
    assert serialize(parsed) == payload


def test_serialization_is_canonical():
    payload = serialize(build_dataset([], ['cup']))
    assert b' ' not in payload.replace(b'SceneForge synthetic dataset', b'')
    data = json.loads(payload)
    assert list(data) == sorted(data)
    assert data['info']['version'] == '1.0'
    assert data['licenses'][0]['id'] == 1


def test_minimal_third_party_file():
    dataset = parse(MINIMAL_COCO)
    assert dataset.info is None
    assert dataset.categories[0].supercategory == 'drink'
    again = json.loads(serialize(dataset))
    original = json.loads(MINIMAL_COCO)
    for key in ('images', 'annotations', 'categories'):
        assert again[key] == original[key]


def test_parse_errors():
    with pytest.raises(ParseError) as info:
        parse(b'{\n"images": [\n}')
    assert info.value.line == 3
    data = json.loads(MINIMAL_COCO)
    data['annotations'][0]['segmentation'] = {'counts': [1, 2], 'size': [10, 20]}
    with pytest.raises(ParseError):
        parse(json.dumps(data).encode())
    data = json.loads(MINIMAL_COCO)
    data['annotations'][0]['iscrowd'] = 1
    with pytest.raises(ParseError):
        parse(json.dumps(data).encode())
    for crowd in ('yes', '0', 0.0, True, None):
        data = json.loads(MINIMAL_COCO)
        data['annotations'][0]['iscrowd'] = crowd
        with pytest.raises(ParseError):
            parse(json.dumps(data).encode())
    data = json.loads(MINIMAL_COCO)
    data['annotations'][0]['image_id'] = 7
    with pytest.raises(ParseError):
        parse(json.dumps(data).encode())


def test_check_integrity():
    dataset = parse(MINIMAL_COCO)
    check_integrity(dataset, exact_bbox=True)
    dataset.annotations[0].segmentation = [[0, 0, 1, 1]]
    with pytest.raises(IntegrityError):
        check_integrity(dataset)
    dataset = parse(MINIMAL_COCO)
    dataset.annotations[0].bbox = [2, 3, 4, 4]
    check_integrity(dataset)
    with pytest.raises(IntegrityError):
        check_integrity(dataset, exact_bbox=True)
    dataset = parse(MINIMAL_COCO)
    dataset.categories.append(dataset.categories[0])
    with pytest.raises(IntegrityError):
        check_integrity(dataset)


def test_thousand_image_dataset_is_consistent(rng):
    results = random_results(rng, 1000)
    dataset = build_dataset(results, CATEGORIES)
    check_integrity(dataset, exact_bbox=True)
    assert [i.id for i in dataset.images] == list(range(1, 1001))
    assert len(dataset.annotations) == sum(len(r.annotations) for r in results)
    assert parse(serialize(dataset)) == dataset


def write_output(tmp_path, rng, n=5):
    results = random_results(rng, n)
    (tmp_path / 'images').mkdir()
    for r in results:
        save_png(tmp_path / r.image_path, np.zeros((r.height, r.width, 3), dtype=np.uint8))
    write_dataset(build_dataset(results, CATEGORIES), str(tmp_path / 'annotations.json'))
    return results


def test_validate_output(tmp_path, rng):
    results = write_output(tmp_path, rng)
    assert validate_output(str(tmp_path)) == []
    (tmp_path / results[2].image_path).unlink()
    problems = validate_output(str(tmp_path))
    assert len(problems) == 1
    assert results[2].image_path in problems[0]


def test_validate_output_reports_size_mismatch(tmp_path, rng):
    results = write_output(tmp_path, rng)
    save_png(tmp_path / results[0].image_path, np.zeros((10, 10, 3), dtype=np.uint8))
    problems = validate_output(str(tmp_path))
    assert any('10x10' in p for p in problems)


def test_loads_in_reference_consumer(tmp_path, rng):
    mask_api = pytest.importorskip('pycocotools.coco')
    write_output(tmp_path, rng, n=8)
    coco = mask_api.COCO(str(tmp_path / 'annotations.json'))
    dataset = load_dataset(str(tmp_path / 'annotations.json'))
    assert len(coco.getImgIds()) == 8
    assert len(coco.getAnnIds()) == len(dataset.annotations)
    assert len(coco.getCatIds()) == len(CATEGORIES)
    ann = coco.loadAnns(coco.getAnnIds())[0]
    mask = coco.annToMask(ann)
    assert mask.shape == (48, 64)
    assert mask.sum() > 0


def test_dataset_equality_is_structural():
    assert CocoDataset() == CocoDataset()
