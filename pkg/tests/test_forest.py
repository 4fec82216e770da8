import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rfdistill import forest
from rfdistill.forest import (
    CONDENSER,
    LEAF,
    RECEIVER,
    UNDISTILLED,
    ForestModel,
    SchemaMismatch,
    TrainConfig,
    Tree,
    grow_tree,
    split_quality,
    train,
)

from .oracles import exhaustive_tree, oracle_predict

SINGLE = TrainConfig(n_estimators=1, bootstrap=False, max_features="all")


def leaf(v):
    return Tree(np.array([LEAF], np.int32), np.zeros(1), np.array([LEAF], np.int32),
                np.array([LEAF], np.int32), np.array([float(v)]))


def stump(f, thr, lo, hi):
    return Tree(np.array([f, LEAF, LEAF], np.int32), np.array([thr, 0, 0.0]),
                np.array([1, LEAF, LEAF], np.int32), np.array([2, LEAF, LEAF], np.int32),
                np.array([0.0, lo, hi]))


def test_presets():
    assert (UNDISTILLED.n_estimators, UNDISTILLED.criterion, UNDISTILLED.max_features) == (763, "gini", "sqrt")
    assert (CONDENSER.n_estimators, CONDENSER.criterion) == (894, "gini")
    assert (RECEIVER.n_estimators, RECEIVER.criterion, RECEIVER.max_features) == (1352, "mse", "half")
    assert UNDISTILLED.bootstrap and CONDENSER.bootstrap and RECEIVER.bootstrap


@pytest.mark.parametrize("mf,expected", [("sqrt", 5), ("half", 10), ("all", 20), (7, 7), (50, 20)])
def test_split_feature_count(mf, expected):
    assert TrainConfig(max_features=mf).n_split_features(20) == expected


@pytest.mark.parametrize("kw", [dict(n_estimators=0), dict(criterion="entropy"),
                                dict(max_features="log2"), dict(min_samples_split=1),
                                dict(max_depth=0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def test_four_sample_threshold():
    m = train(np.array([[0.0], [1], [10], [11]]), np.array([0, 0, 1, 1]), SINGLE)
    t = m.trees[0]
    assert t.n_nodes == 3 and t.feature[0] == 0
    assert 1 < t.threshold[0] < 10
    assert list(m.predict_class([[0], [1], [10], [11]])) == [0, 0, 1, 1]


def test_four_sample_threshold_is_brute_force_best():
    X, y = [0, 1, 10, 11], [0, 0, 1, 1]
    gains = {t: split_quality([c for x, c in zip(X, y) if x <= t], [c for x, c in zip(X, y) if x > t])
             for t in (0.5, 5.5, 10.5)}
    assert max(gains, key=gains.get) == 5.5 and gains[5.5] == 0.5


def test_split_quality_examples():
    assert split_quality([0, 0], [1, 1]) == 0.5
    assert split_quality([0, 1], [0, 1]) == 0.0
    assert split_quality([0.0, 0.0], [1.0, 1.0], "mse") == 0.25
    with pytest.raises(ValueError):
        split_quality([], [1])


def test_constant_targets_give_single_leaves():
    X = np.random.default_rng(0).random((30, 3))
    m = train(X, np.ones(30, dtype=int), TrainConfig(n_estimators=5))
    assert all(t.n_nodes == 1 for t in m.trees)
    assert set(m.predict_class(X)) == {1}
    r = train(X, np.full(30, 0.25), TrainConfig(n_estimators=3, criterion="mse"))
    assert np.all(r.predict_value(X) == 0.25)


def test_empty_data_rejected():
    with pytest.raises(ValueError):
        train(np.zeros((0, 3)), np.zeros(0, dtype=int), SINGLE)
    with pytest.raises(ValueError):
        train(np.zeros((3, 2)), np.zeros(2, dtype=int), SINGLE)


def test_vote_examples():
    m = ForestModel([leaf(1), leaf(1), leaf(0)], TrainConfig(n_estimators=3), 2)
    assert m.predict_class([[0, 0]])[0] == 1
    m = ForestModel([stump(0, 0.5, 0, 1), stump(0, 0.5, 1, 0)], TrainConfig(n_estimators=2), 1)
    assert m.per_tree_votes([[0.0]])[:, 0].tolist() == [[1, 0], [0, 1]]


def test_31_69_votes():
    m = ForestModel([leaf(0)] * 31 + [leaf(1)] * 69, TrainConfig(n_estimators=100), 2)
    v = m.per_tree_votes([[3, 4]])[:, 0]
    assert (v == [1, 0]).all(axis=1).sum() == 31 and (v == [0, 1]).all(axis=1).sum() == 69
    assert m.predict_class([[3, 4]])[0] == 1
    assert m.predict_proba([[3, 4]])[0].tolist() == [0.31, 0.69]


def test_regressor_mean_of_trees():
    m = ForestModel([leaf(0.2), leaf(0.4)], TrainConfig(n_estimators=2, criterion="mse"), 1)
    assert m.predict_value([[9.0]])[0] == pytest.approx(0.3, abs=1e-15)


def test_mode_checks():
    m = ForestModel([leaf(1)], TrainConfig(n_estimators=1), 2)
    with pytest.raises(ValueError):
        m.predict_value([[0, 0]])
    r = ForestModel([leaf(1)], TrainConfig(n_estimators=1, criterion="mse"), 2)
    with pytest.raises(ValueError):
        r.per_tree_votes([[0, 0]])


def test_schema_fingerprint_checked():
    m = ForestModel([leaf(1)], TrainConfig(n_estimators=1), 2, schema_fingerprint="abc")
    m.predict_class([[0, 0]], "abc")
    with pytest.raises(SchemaMismatch):
        m.predict_class([[0, 0]], "def")
    with pytest.raises(SchemaMismatch):
        m.predict_class([[0, 0, 0]])


def test_exact_fit_at_training_points():
    rng = np.random.default_rng(3)
    X = rng.random((40, 3))
    y = rng.random(40)
    m = train(X, y, SINGLE.replace(criterion="mse"))
    assert np.array_equal(m.predict_value(X), y)


def test_matches_exhaustive_oracle_predictions():
    rng = np.random.default_rng(11)
    for _ in range(40):
        n, f = rng.integers(2, 17), rng.integers(1, 4)
        X = rng.integers(0, 5, (n, f)).astype(float)
        y = rng.integers(0, 2, n)
        ref = exhaustive_tree(X.tolist(), y.tolist())
        t = grow_tree(X, y)
        ours = t.predict(X).astype(int)
        assert ours.tolist() == [oracle_predict(ref, r) for r in X.tolist()]


def test_bootstrap_trees_differ_and_reproduce():
    rng = np.random.default_rng(0)
    X = rng.random((60, 4))
    y = (X[:, 0] + 0.3 * rng.random(60) > 0.6).astype(int)
    cfg = TrainConfig(n_estimators=4, rng_seed=9)
    a, b = train(X, y, cfg), train(X, y, cfg)
    assert a.to_bytes() == b.to_bytes()
    assert a.to_bytes() != train(X, y, cfg.replace(rng_seed=10)).to_bytes()
    assert len({t.threshold.tobytes() for t in a.trees}) > 1


def test_parallel_training_identical():
    rng = np.random.default_rng(1)
    X = rng.random((50, 4))
    y = (X[:, 1] > 0.5).astype(int)
    cfg = TrainConfig(n_estimators=6, rng_seed=2)
    assert train(X, y, cfg, n_jobs=2).to_bytes() == train(X, y, cfg).to_bytes()


def test_serialization_roundtrip(tmp_path):
    rng = np.random.default_rng(5)
    X = rng.random((50, 5))
    y = rng.random(50)
    m = train(X, y, TrainConfig(n_estimators=3, criterion="mse", max_features="half"), "fp1")
    path = tmp_path / "m.forest"
    m.save(path)
    back = ForestModel.load(path)
    assert back.config == m.config and back.schema_fingerprint == "fp1"
    assert np.array_equal(back.predict_value(X), m.predict_value(X))
    assert back.to_bytes() == m.to_bytes()


def test_max_depth_respected():
    rng = np.random.default_rng(2)
    X = rng.random((80, 3))
    y = rng.integers(0, 2, 80)
    m = train(X, y, TrainConfig(n_estimators=2, max_depth=2))
    assert all(t.depth() <= 2 for t in m.trees)


def test_min_samples_split_respected():
    X = np.arange(6.0)[:, None]
    y = np.array([0, 1, 0, 1, 0, 1])
    t = grow_tree(X, y, min_samples_split=7)
    assert t.n_nodes == 1


def test_feature_importances_sum_to_one():
    rng = np.random.default_rng(4)
    X = rng.random((40, 3))
    m = train(X, (X[:, 2] > 0.5).astype(int), TrainConfig(n_estimators=3))
    assert m.feature_importances().sum() == pytest.approx(1.0)


small = st.integers(2, 16).flatmap(lambda n: st.tuples(
    arrays(np.float64, (n, 3), elements=st.integers(0, 6).map(float)),
    arrays(np.int64, n, elements=st.integers(0, 1)),
))


@settings(max_examples=60, deadline=None)
@given(small, st.integers(0, 2**32 - 1))
def test_prediction_is_argmax_of_mean_votes(data, seed):
    X, y = data
    m = train(X, y, TrainConfig(n_estimators=5, rng_seed=seed))
    mean_votes = m.per_tree_votes(X).mean(axis=0)
    assert np.array_equal(m.predict_class(X), np.argmax(mean_votes, axis=1))


@settings(max_examples=60, deadline=None)
@given(small, st.integers(0, 2**32 - 1))
def test_regressor_bounded_by_targets(data, seed):
    X, _ = data
    y = np.random.default_rng(seed).random(len(X))
    m = train(X, y, TrainConfig(n_estimators=4, criterion="mse", max_features="half", rng_seed=seed))
    p = m.predict_value(X)
    assert p.min() >= y.min() - 1e-12 and p.max() <= y.max() + 1e-12


@settings(max_examples=60, deadline=None)
@given(small)
def test_internal_nodes_have_two_children(data):
    X, y = data
    t = grow_tree(X, y)
    inner = t.feature != LEAF
    assert np.all(t.left[inner] > 0) and np.all(t.right[inner] > 0)
    assert np.all(t.left[~inner] == LEAF) and np.all(t.right[~inner] == LEAF)
    children = np.concatenate([t.left[inner], t.right[inner]])
    assert sorted(children.tolist()) == list(range(1, t.n_nodes))


@settings(max_examples=30, deadline=None)
@given(small, st.integers(0, 1000))
def test_training_reproducible(data, seed):
    X, y = data
    cfg = TrainConfig(n_estimators=3, rng_seed=seed)
    assert forest.train(X, y, cfg).to_bytes() == forest.train(X, y, cfg).to_bytes()
