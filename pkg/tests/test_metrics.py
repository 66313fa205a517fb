import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hsille.datacube import LabelMask, ReferenceSet
from hsille.errors import DataError
from hsille.metrics import (
    LabelMap,
    accuracy_report,
    average_accuracy,
    nn_classify,
    overall_accuracy,
)


def _confusion_fixture():
    truth = [1, 1, 1, 2, 2, 2, 3, 3, 3, 3]
    pred = [1, 1, 2, 2, 2, 2, 1, 3, 3, 3]
    return LabelMap(np.array([pred]), 3), LabelMask(np.array([truth]))


def test_report_from_confusion():
    pred, truth = _confusion_fixture()
    rep = accuracy_report(pred, truth)
    np.testing.assert_array_equal(rep.confusion, [[2, 1, 0], [0, 3, 0], [1, 0, 3]])
    assert rep.overall == pytest.approx(80.0, abs=1e-12)
    assert rep.average == pytest.approx((200 / 3 + 100 + 75) / 3, abs=1e-12)
    assert rep.average == pytest.approx(80.56, abs=5e-3)
    assert overall_accuracy(pred, truth) == rep.overall
    assert average_accuracy(pred, truth) == rep.average
    data = json.loads(rep.to_json())
    assert data["per_class"][1] == 100.0


def test_unlabeled_and_reference_pixels_excluded():
    truth = LabelMask(np.array([[0, 1, 1, 2, 2]]))
    pred = LabelMap(np.array([[0, 1, 2, 2, 2]]), 2)
    refs = ReferenceSet([2], [1])
    rep = accuracy_report(pred, truth, refs)
    assert rep.confusion.sum() == 3
    assert rep.overall == 100.0


def test_empty_class_warns_and_is_skipped():
    truth = LabelMask(np.array([[1, 1, 2]]))
    pred = LabelMap(np.array([[1, 2, 2]]), 2)
    with pytest.warns(UserWarning, match=r"\[2\]"):
        rep = accuracy_report(pred, truth, ReferenceSet([2], [2]))
    assert rep.per_class == (50.0, None)
    assert rep.average == 50.0


def test_scored_prediction_must_be_a_class():
    truth = LabelMask(np.array([[1, 2]]))
    with pytest.raises(DataError):
        accuracy_report(LabelMap(np.array([[0, 2]]), 2), truth)
    with pytest.raises(DataError):
        accuracy_report(LabelMap(np.array([[1, 2, 2]]), 2), truth)


def test_nn_classify_example():
    coords = np.array([[0.0], [1.0], [2.0], [10.0]])
    refs = ReferenceSet([0, 3], [1, 2])
    out = nn_classify(coords, refs, (1, 4))
    np.testing.assert_array_equal(out.labels, [[1, 1, 1, 2]])


def test_nn_tie_goes_to_smaller_reference_index():
    coords = np.array([[0.0], [1.0], [2.0]])
    out = nn_classify(coords, ReferenceSet([2, 0], [2, 1]))
    assert out.labels[0, 1] == 1


def test_reference_pixels_keep_their_label():
    coords = np.zeros((4, 2))
    out = nn_classify(coords, ReferenceSet([1, 3], [2, 1]), (2, 2))
    np.testing.assert_array_equal(out.labels, [[2, 2], [2, 1]])


def test_nn_classify_validation():
    with pytest.raises(DataError):
        nn_classify(np.zeros((4, 1)), ReferenceSet([], []))
    with pytest.raises(DataError):
        nn_classify(np.zeros((4, 1)), ReferenceSet([7], [1]))
    with pytest.raises(DataError):
        nn_classify(np.zeros((4, 1)), ReferenceSet([1], [1]), (3, 3))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), scale=st.floats(0.1, 10.0), d=st.integers(1, 4))
def test_nn_invariant_to_rotation_and_scale(seed, scale, d):
    rng = np.random.default_rng(seed)
    pts = rng.standard_normal((60, d))
    refs = ReferenceSet(rng.choice(60, 8, replace=False), rng.integers(1, 4, 8))
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    shift = rng.standard_normal(d)
    a = nn_classify(pts, refs).labels
    b = nn_classify(scale * pts @ q + shift, refs).labels
    np.testing.assert_array_equal(a, b)


def test_nn_matches_brute_force():
    rng = np.random.default_rng(4)
    pts = rng.standard_normal((300, 3))
    refs = ReferenceSet(rng.choice(300, 20, replace=False), rng.integers(1, 6, 20))
    out = nn_classify(pts, refs).flat()
    for j in range(300):
        dist = [float(((pts[j] - pts[i]) ** 2).sum()) for i in refs.indices]
        assert out[j] == refs.labels[int(np.argmin(dist))]


def test_label_map_round_trip(tmp_path):
    lm = LabelMap(np.array([[0, 1], [2, 3]]), 3)
    lm.save(tmp_path / "m.labels")
    back = LabelMap.load(tmp_path / "m.labels", 3)
    np.testing.assert_array_equal(back.labels, lm.labels)
    with pytest.raises(DataError):
        LabelMap(np.array([[4]]), 3)


def test_perfect_prediction():
    labels = np.array([[1, 2], [3, 0]])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        rep = accuracy_report(LabelMap(np.where(labels == 0, 1, labels), 3), LabelMask(labels))
    assert rep.overall == rep.average == 100.0
