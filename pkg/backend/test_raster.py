import numpy as np
import pytest

from conftest import disc_mask
from errors import EmptyMask
from raster import (BG, FG, UNKNOWN, AlphaMap, BinaryMask, RgbImage, StructuringElement, Trimap, dilate, erode,
                    iou, largest_component, make_trimap, quantize, widen_unknown)


def brute_erode(mask, se, border=False):
    h, w = mask.shape
    out = np.zeros_like(mask)
    for y in range(h):
        for x in range(w):
            ok = True
            for dx, dy in se.offsets():
                yy, xx = y + dy, x + dx
                value = mask[yy, xx] if 0 <= yy < h and 0 <= xx < w else border
                if not value:
                    ok = False
                    break
            out[y, x] = ok
    return out


def brute_dilate(mask, se):
    h, w = mask.shape
    out = np.zeros_like(mask)
    for y in range(h):
        for x in range(w):
            out[y, x] = any(0 <= y - dy < h and 0 <= x - dx < w and mask[y - dy, x - dx]
                            for dx, dy in se.offsets())
    return out


def test_erode_all_true_loses_border():
    out = erode(BinaryMask(np.ones((10, 10), dtype=bool)), StructuringElement('square', 1))
    expected = np.zeros((10, 10), dtype=bool)
    expected[1:-1, 1:-1] = True
    assert np.array_equal(out.data, expected)


def test_radius_zero_is_identity(rng):
    mask = BinaryMask(rng.random((12, 9)) > 0.5)
    se = StructuringElement('disc', 0)
    assert np.array_equal(erode(mask, se).data, mask.data)
    assert np.array_equal(dilate(mask, se).data, mask.data)


def test_dilate_single_pixel_gives_block():
    data = np.zeros((11, 11), dtype=bool)
    data[5, 5] = True
    out = dilate(BinaryMask(data), StructuringElement('square', 1))
    expected = np.zeros((11, 11), dtype=bool)
    expected[4:7, 4:7] = True
    assert np.array_equal(out.data, expected)


def test_disc_footprint():
    fp = StructuringElement('disc', 2).footprint()
    assert fp.shape == (5, 5)
    assert fp[2, 0] and fp[0, 2] and fp[1, 1]
    assert not fp[0, 0] and not fp[0, 1]


def test_morphology_matches_brute_force(rng):
    for trial in range(200):
        shape = 'disc' if trial % 2 else 'square'
        se = StructuringElement(shape, int(rng.integers(1, 4)))
        h, w = int(rng.integers(4, 16)), int(rng.integers(4, 16))
        mask = rng.random((h, w)) > rng.uniform(0.2, 0.8)
        assert np.array_equal(erode(BinaryMask(mask), se).data, brute_erode(mask, se)), trial
        assert np.array_equal(dilate(BinaryMask(mask), se).data, brute_dilate(mask, se)), trial


def test_disc_erosion_on_32x32(rng):
    mask = rng.random((32, 32)) > 0.3
    se = StructuringElement('disc', 2)
    assert np.array_equal(erode(BinaryMask(mask), se).data, brute_erode(mask, se))


def test_duality_with_complementary_border(rng):
    for _ in range(50):
        mask = BinaryMask(rng.random((16, 14)) > 0.5)
        se = StructuringElement('disc', int(rng.integers(1, 4)))
        dual = ~erode(mask.complement(), se, border_value=True).data
        assert np.array_equal(dilate(mask, se).data, dual)


def test_make_trimap_labels():
    mask = disc_mask(40, 40, 20, 20, 10)
    trimap = make_trimap(mask, StructuringElement('square', 3), StructuringElement('square', 3))
    assert set(np.unique(trimap.data)) == {BG, UNKNOWN, FG}
    # FG inside the mask, BG outside its dilation
    assert not (trimap.fg & ~mask.data).any()
    assert not (trimap.bg & mask.data).any()
    assert trimap.data[20, 20] == FG
    assert trimap.data[0, 0] == BG


def test_make_trimap_rejects_empty_mask():
    with pytest.raises(EmptyMask):
        make_trimap(BinaryMask(np.zeros((5, 5), dtype=bool)), StructuringElement(), StructuringElement())


def test_widen_unknown():
    trimap = Trimap.from_sets(np.eye(4, dtype=bool), ~np.eye(4, dtype=bool))
    region = np.zeros((4, 4), dtype=bool)
    region[0, :] = True
    widened = widen_unknown(trimap, region)
    assert (widened.data[0] == UNKNOWN).all()
    assert np.array_equal(widened.data[1:], trimap.data[1:])


def test_largest_component_uses_eight_connectivity():
    data = np.zeros((8, 8), dtype=bool)
    # diagonal chain of 4 pixels is one component under 8-connectivity
    for i in range(4):
        data[i, i] = True
    data[6, 6:8] = True
    data[7, 6] = True
    out = largest_component(BinaryMask(data))
    assert out.count() == 4
    assert out.data[0, 0] and not out.data[6, 6]


def test_largest_component_rejects_empty():
    with pytest.raises(EmptyMask):
        largest_component(BinaryMask(np.zeros((3, 3), dtype=bool)))


def test_iou():
    a = np.zeros((4, 4), dtype=bool)
    b = np.zeros((4, 4), dtype=bool)
    a[:2] = True
    b[1:3] = True
    assert iou(BinaryMask(a), BinaryMask(b)) == pytest.approx(4 / 12)


def test_quantize_rounds_half_up_and_clamps():
    values = np.array([-0.2, 0.0, 0.25, 0.5, 1.0, 1.3])
    assert quantize(values).tolist() == [0, 0, 64, 128, 255, 255]


def test_containers_validate():
    with pytest.raises(ValueError):
        AlphaMap(np.array([[0.5, 1.2]]))
    with pytest.raises(ValueError):
        Trimap(np.array([[0, 7]], dtype=np.uint8))
    image = RgbImage(np.zeros((3, 5, 3), dtype=np.uint8))
    assert (image.width, image.height) == (5, 3)
    with pytest.raises(ValueError):
        image.data[0, 0, 0] = 1
