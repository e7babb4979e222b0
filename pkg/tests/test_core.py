import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from forensic_kit.core import (
    BinaryMask,
    BoundingBox,
    DegenerateBox,
    GrayMap,
    Label,
    RasterImage,
    RawBox,
    ToolId,
    box_iou,
    box_iou_exact,
    clamp_box,
)

from _helpers import pixel_iou


@st.composite
def boxes(draw, hi=32):
    x1 = draw(st.integers(0, hi - 1))
    y1 = draw(st.integers(0, hi - 1))
    x2 = draw(st.integers(x1 + 1, hi))
    y2 = draw(st.integers(y1 + 1, hi))
    return BoundingBox(x1, y1, x2, y2)


def test_iou_examples():
    a = BoundingBox(0, 0, 10, 10)
    assert box_iou(a, a) == 1.0
    assert box_iou(a, BoundingBox(20, 20, 30, 30)) == 0.0
    # pixel oracle on a 20x10 grid: 50 shared cells, 150 covered
    assert pixel_iou((0, 0, 10, 10), (5, 0, 15, 10), 20, 10) == Fraction(1, 3)
    assert box_iou_exact(a, BoundingBox(5, 0, 15, 10)) == Fraction(1, 3)


def test_touching_edges_have_zero_iou():
    assert box_iou(BoundingBox(0, 0, 10, 10), BoundingBox(10, 0, 20, 10)) == 0.0
    assert box_iou(BoundingBox(0, 0, 10, 10), BoundingBox(10, 10, 20, 20)) == 0.0


def test_iou_matches_pixel_count_exhaustively_on_small_grid():
    coords = range(7)
    spans = [(a, b) for a, b in itertools.combinations(coords, 2)]
    all_boxes = [(x1, y1, x2, y2) for (x1, x2) in spans for (y1, y2) in spans]
    rasters = {}
    for b in all_boxes:
        grid = np.zeros((6, 6), dtype=bool)
        grid[b[1] : b[3], b[0] : b[2]] = True
        rasters[b] = grid.ravel()
    flat = np.array([rasters[b] for b in all_boxes])
    inter = flat.astype(np.int64) @ flat.T.astype(np.int64)
    sizes = flat.sum(axis=1)
    union = sizes[:, None] + sizes[None, :] - inter
    built = [BoundingBox(*b) for b in all_boxes]
    for i, a in enumerate(built):
        for j, b in enumerate(built):
            assert box_iou_exact(a, b) == Fraction(int(inter[i, j]), int(union[i, j]))


@settings(max_examples=3000, deadline=None)
@given(boxes(), boxes())
def test_iou_matches_pixel_count(a, b):
    expected = pixel_iou(a.as_list(), b.as_list(), 32, 32)
    assert box_iou_exact(a, b) == expected


@given(boxes(), boxes())
def test_iou_symmetric_and_bounded(a, b):
    v = box_iou(a, b)
    assert v == box_iou(b, a)
    assert 0.0 <= v <= 1.0
    overlap = min(a.x2, b.x2) > max(a.x1, b.x1) and min(a.y2, b.y2) > max(a.y1, b.y1)
    assert (v > 0) == overlap


@given(boxes())
def test_iou_self_is_one(a):
    assert box_iou(a, a) == 1.0


def test_box_invariants():
    with pytest.raises(DegenerateBox):
        BoundingBox(5, 5, 5, 10)
    with pytest.raises(DegenerateBox):
        BoundingBox(5, 5, 10, 4)
    with pytest.raises(DegenerateBox):
        BoundingBox(-1, 0, 10, 10)
    with pytest.raises(TypeError):
        BoundingBox(0, 0, 1.5, 2)
    with pytest.raises(TypeError):
        BoundingBox(True, 0, 2, 2)
    b = BoundingBox(np.int64(1), 2, 4, 8)
    assert type(b.x1) is int
    assert (b.width, b.height, b.area) == (3, 6, 18)


def test_clamp_box():
    assert clamp_box(RawBox(-5, -5, 10, 10), 100, 100) == BoundingBox(0, 0, 10, 10)
    assert clamp_box(BoundingBox(10, 10, 20, 20), 100, 100) == BoundingBox(10, 10, 20, 20)
    assert clamp_box(BoundingBox(90, 90, 120, 130), 100, 100) == BoundingBox(90, 90, 100, 100)
    with pytest.raises(DegenerateBox):
        clamp_box(BoundingBox(150, 150, 200, 200), 100, 100)
    with pytest.raises(DegenerateBox):
        clamp_box(BoundingBox(100, 0, 120, 10), 100, 100)
    with pytest.raises(ValueError):
        clamp_box(BoundingBox(0, 0, 1, 1), 0, 10)


@given(boxes(hi=64), st.integers(1, 48), st.integers(1, 48))
def test_clamp_stays_inside(b, w, h):
    try:
        c = clamp_box(b, w, h)
    except DegenerateBox:
        assert b.x1 >= w or b.y1 >= h
        return
    assert 0 <= c.x1 < c.x2 <= w and 0 <= c.y1 < c.y2 <= h
    assert box_iou(c, b) == c.area / b.area


def test_enums():
    assert Label.parse(" Fake ") is Label.FAKE
    with pytest.raises(ValueError):
        Label.parse("maybe")
    assert [t.value for t in ToolId] == ["ELA", "FFT", "NPP", "zoom_in"]
    for alias in ("zoom_in", "ZoomIn", "zoom-in", "ZOOM_IN"):
        assert ToolId.parse(alias) is ToolId.ZOOM_IN
    with pytest.raises(KeyError):
        ToolId.parse("DCT")


def test_value_types_are_frozen_copies():
    px = np.zeros((4, 5, 3), dtype=np.uint8)
    img = RasterImage(px)
    px[0, 0, 0] = 9
    assert img.pixels[0, 0, 0] == 0
    assert (img.width, img.height) == (5, 4)
    with pytest.raises(ValueError):
        img.pixels[0, 0, 0] = 1
    with pytest.raises(TypeError):
        RasterImage(np.zeros((4, 5, 3), dtype=np.float32))
    with pytest.raises(ValueError):
        RasterImage(np.zeros((4, 5), dtype=np.uint8))
    with pytest.raises(ValueError):
        GrayMap(np.full((2, 2), 1.5))
    with pytest.raises(ValueError):
        GrayMap(np.full((2, 2), np.nan))
    assert GrayMap(np.zeros((2, 3))) == GrayMap(np.zeros((2, 3)))
    m = BinaryMask(np.eye(3))
    assert m.count() == 3 and m.values.dtype == bool
