import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rfdistill.distillation import (
    DistilledDetector,
    UndistilledDetector,
    build_detector,
    generate_probability_labels,
    load_detector,
    round_detection,
)
from rfdistill.forest import LEAF, ForestModel, SchemaMismatch, TrainConfig, Tree, train

from .oracles import leaf_walk

COND = TrainConfig(n_estimators=7, rng_seed=1)
RECV = TrainConfig(n_estimators=5, criterion="mse", max_features="half", rng_seed=2)


def leaf(v):
    return Tree(np.array([LEAF], np.int32), np.zeros(1), np.array([LEAF], np.int32),
                np.array([LEAF], np.int32), np.array([float(v)]))


def toy_data(seed=0, n=80):
    rng = np.random.default_rng(seed)
    X = rng.random((n, 4))
    y = ((X[:, 0] + 0.4 * rng.random(n)) > 0.8).astype(int)
    return X, y


def test_31_69_label():
    m = ForestModel([leaf(0)] * 31 + [leaf(1)] * 69, TrainConfig(n_estimators=100), 2)
    p = generate_probability_labels(m, [[0.0, 0.0]])
    assert p[0] == 0.69 and 1 - p[0] == pytest.approx(0.31, abs=1e-15)


def test_unanimous_votes():
    m = ForestModel([leaf(0)] * 5, TrainConfig(n_estimators=5), 2)
    assert generate_probability_labels(m, [[1.0, 2.0]])[0] == 0.0


def test_labels_need_trained_classifier():
    with pytest.raises(ValueError):
        generate_probability_labels(ForestModel([], TrainConfig(), 2), [[0.0]])
    r = ForestModel([leaf(0.3)], TrainConfig(n_estimators=1, criterion="mse"), 1)
    with pytest.raises(ValueError):
        generate_probability_labels(r, [[0.0]])


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 8), st.integers(2, 16), st.integers(0, 2**32 - 1))
def test_labels_equal_manual_leaf_walk(n_trees, n, seed):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 4, (n, 2)).astype(float)
    y = rng.integers(0, 2, n)
    m = train(X, y, TrainConfig(n_estimators=n_trees, rng_seed=seed))
    manual = np.array([sum(leaf_walk(t, x) == 1 for t in m.trees) / n_trees for x in X])
    got = generate_probability_labels(m, X)
    assert np.allclose(got, manual, rtol=0, atol=1e-12)
    assert np.all((got * n_trees).round() == got * n_trees)


@pytest.mark.parametrize("score,decision", [(0.49, 0), (0.5, 1), (0.51, 1), (0.0, 0), (1.0, 1)])
def test_rounding(score, decision):
    assert round_detection([score])[0] == decision


def test_receiver_constant_labels():
    X, _ = toy_data()
    r = train(X, np.full(len(X), 0.2), RECV)
    c = ForestModel([leaf(0)], TrainConfig(n_estimators=1), 4)
    d = DistilledDetector(c, r)
    decisions, scores = d.detect(X)
    assert np.all(scores == 0.2) and not decisions.any()


def test_build_detector_end_to_end():
    X, y = toy_data()
    rows = np.arange(60)
    d = build_detector(X, y, COND, RECV, rows, schema_fingerprint="fp", family="Neris")
    assert len(d.condenser.trees) == 7 and len(d.receiver.trees) == 5
    labels = generate_probability_labels(d.condenser, X)
    # receiver fits the condenser's labels at its own (bootstrapped) training rows
    assert np.all((d.score(X) >= 0) & (d.score(X) <= 1))
    assert np.mean(d.predict(X) == (labels >= 0.5)) > 0.9
    assert d.family == "Neris" and d.schema_fingerprint == "fp"


def test_build_detector_errors():
    X, y = toy_data()
    with pytest.raises(ValueError):
        build_detector(X, np.zeros(len(X), int), COND, RECV)
    with pytest.raises(ValueError):
        build_detector(X, y, RECV, RECV)


def test_fingerprints_must_match():
    X, y = toy_data()
    c = train(X, y, COND, "a")
    r = train(X, y.astype(float), RECV, "b")
    with pytest.raises(SchemaMismatch):
        DistilledDetector(c, r)


def test_detector_bundles_roundtrip(tmp_path):
    X, y = toy_data(1)
    d = build_detector(X, y, COND, RECV, schema_fingerprint="fp", family="Rbot")
    d.save(tmp_path / "d.bundle")
    back = load_detector(tmp_path / "d.bundle")
    assert isinstance(back, DistilledDetector) and back.family == "Rbot"
    assert np.array_equal(back.score(X), d.score(X))
    assert back.to_bytes() == d.to_bytes()

    u = UndistilledDetector(train(X, y, COND, "fp"), "Rbot")
    u.save(tmp_path / "u.bundle")
    ub = load_detector(tmp_path / "u.bundle")
    assert isinstance(ub, UndistilledDetector)
    assert np.array_equal(ub.predict(X), u.predict(X))


def test_undistilled_detect_scores():
    X, y = toy_data(2)
    u = UndistilledDetector(train(X, y, COND))
    decisions, scores = u.detect(X)
    assert np.array_equal(decisions, u.predict(X))
    assert np.all((scores > 0.5) <= (decisions == 1))
