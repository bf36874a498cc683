import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pitchtrack.core import (
    BBox,
    Detection,
    Measurement,
    bbox_to_measurement,
    cosine_similarity,
    iou,
    iou_matrix,
    measurement_to_bbox,
)
from pitchtrack.errors import ConfigError, InputError

coord = st.floats(-1000, 1000, allow_nan=False)
size = st.floats(0.5, 500, allow_nan=False)
boxes = st.builds(BBox, coord, coord, size, size)


def test_iou_examples():
    a = BBox(0, 0, 10, 10)
    assert iou(a, a) == 1.0
    assert iou(a, BBox(20, 20, 5, 5)) == 0.0
    assert iou(BBox(0, 0, 2, 2), BBox(1, 1, 2, 2)) == pytest.approx(1 / 7, abs=1e-12)


def test_touching_boxes_do_not_overlap():
    assert iou(BBox(0, 0, 10, 10), BBox(10, 0, 10, 10)) == 0.0


@given(boxes, boxes)
def test_iou_symmetric_and_bounded(a, b):
    v = iou(a, b)
    assert v == pytest.approx(iou(b, a), abs=1e-12)
    assert 0.0 <= v <= 1.0 + 1e-12


@given(boxes)
def test_iou_self_is_one(a):
    assert iou(a, a) == pytest.approx(1.0, abs=1e-12)


def test_iou_matrix_matches_scalar(rng):
    xs = rng.uniform(0, 50, (6, 2))
    ws = rng.uniform(5, 30, (6, 2))
    bs = [BBox(*xs[i], *ws[i]) for i in range(6)]
    arr = np.array([b.to_array() for b in bs])
    M = iou_matrix(arr, arr)
    for i in range(6):
        for j in range(6):
            assert M[i, j] == pytest.approx(iou(bs[i], bs[j]), abs=1e-12)


def test_measurement_conversion():
    m = bbox_to_measurement(BBox(0, 0, 10, 20))
    assert m == Measurement(5, 10, 0.5, 20)
    assert measurement_to_bbox(Measurement(5, 10, 0.5, 20)) == BBox(0, 0, 10, 20)


@given(boxes)
def test_measurement_round_trip(b):
    r = measurement_to_bbox(bbox_to_measurement(b))
    for u, v in zip(r.to_array(), b.to_array()):
        assert u == pytest.approx(v, abs=1e-9)


def test_bbox_rejects_bad_sizes():
    with pytest.raises(InputError):
        BBox(0, 0, 0, 10)
    with pytest.raises(InputError):
        BBox(0, 0, 10, -1)
    with pytest.raises(InputError):
        BBox(math.nan, 0, 10, 10)


def test_cosine_examples():
    u = np.array([1.0, 1.0]) / math.sqrt(2)
    assert cosine_similarity(u, u) == pytest.approx(1.0)
    assert cosine_similarity(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0
    assert cosine_similarity(u, np.array([1.0, 0.0])) == pytest.approx(math.sqrt(2) / 2, abs=1e-5)
    with pytest.raises(ConfigError):
        cosine_similarity(u, np.array([1.0, 0.0, 0.0]))


@given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=2, max_size=64))
def test_cosine_self_similarity(vals):
    v = np.array(vals)
    if np.linalg.norm(v) < 1e-3:
        return
    v = v / np.linalg.norm(v)
    assert cosine_similarity(v, v) == pytest.approx(1.0, abs=1e-6)


def test_detection_invariants():
    with pytest.raises(InputError):
        Detection(0, BBox(0, 0, 1, 1), 1.5)
    with pytest.raises(InputError):
        Detection(0, BBox(0, 0, 1, 1), 0.5, embedding=np.array([1.0, 1.0]))
    d = Detection(0, BBox(0, 0, 1, 1), 0.5, embedding=np.array([0.6, 0.8]))
    assert d.embedding.shape == (2,)
