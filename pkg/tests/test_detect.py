import numpy as np
import pytest

from insectcam.detect import (
    BBox,
    CropConfig,
    Mask,
    bbox_iou,
    connected_components,
    crop,
    crop_insect,
    default_min_area,
    mask_iou,
    mask_to_bbox,
    resize_bilinear,
    square_expand,
    threshold_mask,
)
from insectcam.errors import ConfigError, DataError, NoInsectError, ShapeError
from insectcam.evalkit import render_sample
from insectcam.imaging import Frame

FIVE_BY_FIVE = Mask.from_cells(5, 5, [(1, 1), (1, 2), (2, 1), (2, 2), (4, 4)])


def _gray_row(values):
    px = np.array(values, dtype=np.uint8)[None, :, None].repeat(3, axis=2)
    return Frame(px)


def test_threshold_mask():
    assert not threshold_mask(Frame.filled(4, 4, (0, 0, 0)), 10).bits.any()
    px = np.zeros((3, 3, 3), dtype=np.uint8)
    px[1, 2] = 255
    bits = threshold_mask(Frame(px), 128).bits
    assert bits.sum() == 1 and bits[1, 2]
    row = threshold_mask(_gray_row(range(256)), 127).bits[0]
    assert np.array_equal(np.flatnonzero(row), np.arange(128, 256))


def test_connected_components_examples():
    comps = connected_components(FIVE_BY_FIVE)
    assert [c.area for c in comps] == [4, 1]
    assert comps[0].bbox == BBox(1, 1, 2, 2)
    diagonal = Mask.from_cells(2, 2, [(0, 0), (1, 1)])
    assert len(connected_components(diagonal, 4)) == 2
    assert len(connected_components(diagonal, 8)) == 1
    full = Mask(np.ones((3, 4), dtype=bool))
    assert [c.area for c in connected_components(full)] == [12]
    assert connected_components(Mask(np.zeros((3, 3), dtype=bool))) == []
    with pytest.raises(ConfigError):
        connected_components(full, 6)


def _flood_fill_components(bits: int, connectivity: int):
    """Brute-force components of a 4x4 mask packed row-major into 16 bits."""
    steps = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    if connectivity == 8:
        steps += [(-1, -1), (-1, 1), (1, -1), (1, 1)]
    seen = 0
    out = []
    for start in range(16):
        if not bits >> start & 1 or seen >> start & 1:
            continue
        stack, cells = [start], []
        seen |= 1 << start
        while stack:
            cell = stack.pop()
            cells.append(cell)
            r, c = divmod(cell, 4)
            for dr, dc in steps:
                rr, cc = r + dr, c + dc
                if 0 <= rr < 4 and 0 <= cc < 4:
                    n = rr * 4 + cc
                    if bits >> n & 1 and not seen >> n & 1:
                        seen |= 1 << n
                        stack.append(n)
        rows = [p // 4 for p in cells]
        cols = [p % 4 for p in cells]
        out.append((len(cells), min(cols), min(rows), max(cols) - min(cols) + 1, max(rows) - min(rows) + 1))
    return sorted(out)


def test_connected_components_exhaustive_4x4():
    shifts = np.arange(16).reshape(4, 4)
    for connectivity in (4, 8):
        for bits in range(1 << 16):
            mask = Mask((bits >> shifts) & 1)
            comps = connected_components(mask, connectivity)
            got = sorted((c.area, c.bbox.x, c.bbox.y, c.bbox.w, c.bbox.h) for c in comps)
            assert got == _flood_fill_components(bits, connectivity), (bits, connectivity)
            assert all(a.area >= b.area for a, b in zip(comps, comps[1:]))


def test_mask_to_bbox():
    assert mask_to_bbox(FIVE_BY_FIVE, CropConfig(min_area=2)) == BBox(1, 1, 2, 2)
    with pytest.raises(NoInsectError):
        mask_to_bbox(Mask(np.zeros((5, 5), dtype=bool)), CropConfig(min_area=1))
    bits = np.zeros((10, 10), dtype=bool)
    bits[0:3, 0:3] = True
    bits[6:8, 6:8] = True
    assert mask_to_bbox(Mask(bits), CropConfig(min_area=4)) == BBox(0, 0, 3, 3)


def test_mask_to_bbox_is_tight(rng):
    for _ in range(50):
        bits = rng.random((12, 12)) < 0.3
        if not bits.any():
            continue
        box = mask_to_bbox(Mask(bits), CropConfig(min_area=1))
        region = bits[box.y : box.y + box.h, box.x : box.x + box.w]
        assert region[0].any() and region[-1].any() and region[:, 0].any() and region[:, -1].any()


def test_square_expand_examples():
    assert square_expand(BBox(4, 4, 2, 6), 0.0, 100, 100) == BBox(2, 4, 6, 6)
    assert square_expand(BBox(10, 20, 8, 8), 0.0, 100, 100) == BBox(10, 20, 8, 8)
    corner = square_expand(BBox(0, 0, 10, 10), 0.5, 100, 100)
    assert corner == BBox(0, 0, 20, 20)


@pytest.mark.parametrize(
    "side, expected",
    [(10, 11), (20, 22), (30, 33), (40, 44), (50, 55), (70, 77), (100, 110), (101, 112)],
)
def test_square_expand_side_is_exact_ceiling(side, expected):
    sq = square_expand(BBox(50, 50, side, side), 0.05, 400, 400)
    assert sq.w == sq.h == expected


def test_square_expand_properties(rng):
    for _ in range(1000):
        width, height = (int(v) for v in rng.integers(8, 200, size=2))
        w, h = int(rng.integers(1, width + 1)), int(rng.integers(1, height + 1))
        x, y = int(rng.integers(0, width - w + 1)), int(rng.integers(0, height - h + 1))
        box = BBox(x, y, w, h)
        sq = square_expand(box, float(rng.uniform(0, 0.3)), width, height)
        assert sq.w == sq.h
        assert sq.within(width, height)
        if sq.w >= max(w, h):
            assert sq.contains(box)


def test_crop():
    px = np.arange(4 * 5 * 3, dtype=np.uint8).reshape(4, 5, 3)
    frame = Frame(px)
    assert np.array_equal(crop(frame, BBox(0, 0, 5, 4)).pixels, px)
    assert np.array_equal(crop(frame, BBox(3, 2, 1, 1)).pixels[0, 0], px[2, 3])
    once = crop(frame, BBox(1, 1, 3, 2))
    assert np.array_equal(crop(once, BBox(0, 0, 3, 2)).pixels, once.pixels)
    with pytest.raises(DataError):
        crop(frame, BBox(3, 0, 3, 2))


def test_resize_bilinear():
    frame = Frame(np.random.default_rng(1).integers(0, 256, size=(7, 5, 3), dtype=np.uint8))
    assert np.array_equal(resize_bilinear(frame, 5, 7).pixels, frame.pixels)
    out = resize_bilinear(_gray_row([0, 255]), 4, 1).pixels[0, :, 0]
    assert out.tolist() == [0, 64, 191, 255]
    flat = resize_bilinear(Frame.filled(3, 3, (12, 200, 77)), 11, 6).pixels
    assert (flat == np.array([12, 200, 77], dtype=np.uint8)).all()
    big = resize_bilinear(frame, 13, 3).pixels
    assert big.min() >= frame.pixels.min() and big.max() <= frame.pixels.max()
    with pytest.raises(ShapeError):
        resize_bilinear(frame, 0, 3)


def test_bbox_iou():
    a = BBox(0, 0, 2, 2)
    assert bbox_iou(a, a) == 1.0
    assert bbox_iou(a, BBox(1, 1, 2, 2)) == pytest.approx(1 / 7)
    assert bbox_iou(a, BBox(5, 5, 1, 1)) == 0.0
    assert bbox_iou(BBox(1, 1, 2, 2), a) == bbox_iou(a, BBox(1, 1, 2, 2))


def test_mask_iou():
    m = Mask.from_cells(3, 1, [(0, 0), (0, 1)])
    assert mask_iou(m, m) == 1.0
    assert mask_iou(Mask(np.zeros((1, 3), dtype=bool)), m) == 0.0
    assert mask_iou(m, Mask.from_cells(3, 1, [(0, 1), (0, 2)])) == pytest.approx(1 / 3)
    with pytest.raises(ShapeError):
        mask_iou(m, Mask(np.zeros((2, 3), dtype=bool)))


def test_default_min_area():
    assert default_min_area(1440, 1080) == 50
    assert default_min_area(256, 256) == 2
    assert default_min_area(16, 16) == 2


def test_crop_insect_output_size():
    rng = np.random.Generator(np.random.PCG64(5))
    frame, truth, dust = render_sample(3, rng, 128)
    tight, square, patch = crop_insect(frame, Mask(truth | dust), CropConfig(min_area=2, target_size=32))
    assert (patch.width, patch.height) == (32, 32)
    assert square.contains(tight)
    with pytest.raises(ShapeError):
        crop_insect(frame, Mask(truth[:-1]), CropConfig())


def test_crop_recovery_with_dust():
    size = 256
    cfg = CropConfig(min_area=default_min_area(size, size))
    ious, square_ious = [], []
    for i in range(200):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([99, i])))
        frame, truth, dust = render_sample(i % 16, rng, size)
        rows, cols = np.nonzero(truth)
        true_box = BBox(int(cols.min()), int(rows.min()), int(np.ptp(cols)) + 1, int(np.ptp(rows)) + 1)
        found = mask_to_bbox(threshold_mask(frame, 95), cfg)
        ious.append(bbox_iou(found, true_box))
        square_ious.append(bbox_iou(
            square_expand(found, cfg.margin, size, size),
            square_expand(true_box, cfg.margin, size, size),
        ))
    assert np.mean(ious) >= 0.90 and min(ious) >= 0.75
    assert np.mean(square_ious) >= 0.90 and min(square_ious) >= 0.75
