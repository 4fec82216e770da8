"""CART decision trees and random forests, classifier (Gini) and regressor (MSE).

Trees are stored as flat node arrays.  Internal nodes send ``x[feature] <=
threshold`` to the left child; leaves hold a class index (classifier) or a
mean target (regressor).  Bootstrap resampling is expressed as integer sample
weights, so a tree only ever sorts the distinct rows it drew.
"""

from __future__ import annotations

import io
import json
import math
import zipfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

LEAF = -1

CLASSIFIER = "classifier"
REGRESSOR = "regressor"

_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)
FORMAT_VERSION = 1


class SchemaMismatch(ValueError):
    """Input encoded with a different feature schema than the model."""


@dataclass(frozen=True)
class TrainConfig:
    n_estimators: int = 100
    criterion: str = "gini"
    max_features: str | int = "sqrt"
    bootstrap: bool = True
    min_samples_split: int = 2
    max_depth: int | None = None
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be positive")
        if self.criterion not in ("gini", "mse"):
            raise ValueError(f"unknown criterion {self.criterion!r}")
        if isinstance(self.max_features, str):
            if self.max_features not in ("sqrt", "half", "all"):
                raise ValueError(f"unknown max_features {self.max_features!r}")
        elif self.max_features < 1:
            raise ValueError("max_features must be positive")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be at least 2")
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be positive")

    @property
    def mode(self) -> str:
        return CLASSIFIER if self.criterion == "gini" else REGRESSOR

    def n_split_features(self, n_features: int) -> int:
        mf = self.max_features
        if mf == "sqrt":
            return math.ceil(math.sqrt(n_features))
        if mf == "half":
            return math.ceil(n_features / 2)
        if mf == "all":
            return n_features
        return min(int(mf), n_features)

    def replace(self, **changes) -> "TrainConfig":
        return TrainConfig(**{**asdict(self), **changes})


# Parameter sets of the three detectors' forests.
UNDISTILLED = TrainConfig(n_estimators=763, criterion="gini", max_features="sqrt")
CONDENSER = TrainConfig(n_estimators=894, criterion="gini", max_features="sqrt")
RECEIVER = TrainConfig(n_estimators=1352, criterion="mse", max_features="half")


def split_quality(left, right, criterion: str = "gini") -> float:
    """Impurity decrease of splitting ``left + right`` into the two halves.

    Gini impurity is ``1 - sum_k p_k^2``; MSE impurity is the variance.  The
    result is the parent impurity minus the size-weighted child impurities.
    """
    left = np.asarray(left)
    right = np.asarray(right)
    if len(left) == 0 or len(right) == 0:
        raise ValueError("both partitions must be non-empty")
    both = np.concatenate([left, right])

    if criterion == "gini":
        def impurity(t):
            _, counts = np.unique(t, return_counts=True)
            p = counts / len(t)
            return 1.0 - float(np.sum(p * p))
    elif criterion == "mse":
        def impurity(t):
            return float(np.var(np.asarray(t, dtype=np.float64)))
    else:
        raise ValueError(f"unknown criterion {criterion!r}")

    n = len(both)
    return impurity(both) - (len(left) / n * impurity(left) + len(right) / n * impurity(right))


@dataclass
class Tree:
    feature: np.ndarray      # int32, LEAF for leaves
    threshold: np.ndarray    # float64
    left: np.ndarray         # int32
    right: np.ndarray        # int32
    value: np.ndarray        # float64: class index or mean target

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature == LEAF))

    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.feature[i] != LEAF:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by each row of ``X``."""
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        while True:
            f = self.feature[node[rows]]
            inner = f != LEAF
            if not inner.any():
                return node
            rows = rows[inner]
            cur = node[rows]
            go_left = X[rows, self.feature[cur]] <= self.threshold[cur]
            node[rows] = np.where(go_left, self.left[cur], self.right[cur])

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]


def _best_split(Xn, S, w, candidates, rest):
    """Best (feature, threshold) for one node, or None if no feature varies.

    ``S`` holds per-row weighted statistics: class-weight columns for Gini,
    a single ``w*y`` column for MSE.  Both criteria then maximise
    ``|S_left|^2 / w_left + |S_right|^2 / w_right``.
    """
    total = S.sum(axis=0)
    W = w.sum()
    best = None
    best_score = -np.inf

    def scan(features):
        nonlocal best, best_score
        found = False
        for f in sorted(features):
            xf = Xn[:, f]
            order = np.argsort(xf, kind="stable")
            xs = xf[order]
            valid = xs[1:] > xs[:-1]
            if not valid.any():
                continue
            found = True
            pos = np.flatnonzero(valid)
            cl = np.cumsum(S[order], axis=0)[pos]
            wl = np.cumsum(w[order])[pos]
            cr = total - cl
            wr = W - wl
            score = np.einsum("ij,ij->i", cl, cl) / wl + np.einsum("ij,ij->i", cr, cr) / wr
            top = score.max()
            tol = 1e-12 * abs(top)
            if best is not None and top <= best_score + tol:
                continue
            i = pos[np.flatnonzero(score >= top - tol)[0]]
            lo, hi = xs[i], xs[i + 1]
            thr = lo + (hi - lo) / 2.0
            if thr >= hi:
                thr = lo
            best, best_score = (int(f), float(thr)), top
        return found

    if not scan(candidates):
        # none of the drawn features varies: keep drawing one at a time
        for f in rest:
            if scan([f]):
                break
    return best


def grow_tree(X, y, w=None, *, criterion="gini", n_classes=2, max_features=None,
              min_samples_split=2, max_depth=None, rng=None) -> Tree:
    """Grow one CART tree on rows ``X`` with targets ``y`` and weights ``w``."""
    X = np.asarray(X, dtype=np.float64)
    n, n_features = X.shape
    w = np.ones(n) if w is None else np.asarray(w, dtype=np.float64)
    k = n_features if max_features is None else max_features
    rng = np.random.default_rng(0) if rng is None else rng

    if criterion == "gini":
        y = np.asarray(y, dtype=np.int64)
        S = np.zeros((n, n_classes))
        S[np.arange(n), y] = w
    else:
        y = np.asarray(y, dtype=np.float64)
        S = (w * y)[:, None]

    feature, threshold, left, right, value = [], [], [], [], []

    def new_node():
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        value.append(0.0)
        return len(feature) - 1

    stack = [(new_node(), np.arange(n), 0)]
    while stack:
        node, idx, depth = stack.pop()
        Sn, wn = S[idx], w[idx]
        sums = Sn.sum(axis=0)
        W = wn.sum()
        if criterion == "gini":
            value[node] = float(np.argmax(sums))
            pure = np.count_nonzero(sums) <= 1
        else:
            value[node] = float(sums[0] / W)
            yn = y[idx]
            pure = yn.min() == yn.max()
        if pure or W < min_samples_split or (max_depth is not None and depth >= max_depth):
            continue

        perm = rng.permutation(n_features)
        split = _best_split(X[idx], Sn, wn, perm[:k], perm[k:])
        if split is None:
            continue
        f, thr = split
        mask = X[idx, f] <= thr
        feature[node], threshold[node] = f, thr
        left[node], right[node] = new_node(), new_node()
        stack.append((right[node], idx[~mask], depth + 1))
        stack.append((left[node], idx[mask], depth + 1))

    return Tree(
        np.asarray(feature, dtype=np.int32),
        np.asarray(threshold, dtype=np.float64),
        np.asarray(left, dtype=np.int32),
        np.asarray(right, dtype=np.int32),
        np.asarray(value, dtype=np.float64),
    )


def _train_one(args):
    X, y, config, n_classes, j = args
    rng = np.random.default_rng([config.rng_seed, j])
    n = len(X)
    if config.bootstrap:
        w = np.bincount(rng.integers(0, n, n), minlength=n).astype(np.float64)
        rows = np.flatnonzero(w)
        X, y, w = X[rows], y[rows], w[rows]
    else:
        w = np.ones(n)
    return grow_tree(
        X, y, w,
        criterion=config.criterion,
        n_classes=n_classes,
        max_features=config.n_split_features(X.shape[1]),
        min_samples_split=config.min_samples_split,
        max_depth=config.max_depth,
        rng=rng,
    )


@dataclass
class ForestModel:
    trees: list
    config: TrainConfig
    n_features: int
    n_classes: int = 2
    schema_fingerprint: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def mode(self) -> str:
        return self.config.mode

    def _check(self, X, fingerprint, mode):
        if self.mode != mode:
            raise ValueError(f"operation needs a {mode} forest, this one is a {self.mode}")
        if fingerprint is not None and fingerprint != self.schema_fingerprint:
            raise SchemaMismatch(
                f"feature schema {fingerprint} does not match model schema {self.schema_fingerprint}"
            )
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.n_features:
            raise SchemaMismatch(f"expected {self.n_features} features, got {X.shape[1]}")
        return X

    def tree_outputs(self, X) -> np.ndarray:
        """Raw leaf payloads, shape ``(n_trees, n_samples)``."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return np.vstack([t.predict(X) for t in self.trees])

    def per_tree_votes(self, X, fingerprint=None) -> np.ndarray:
        """One-hot vote of every tree, shape ``(n_trees, n_samples, n_classes)``."""
        X = self._check(X, fingerprint, CLASSIFIER)
        cls = self.tree_outputs(X).astype(np.int64)
        return np.eye(self.n_classes)[cls]

    def vote_counts(self, X, fingerprint=None) -> np.ndarray:
        """Number of trees voting each class, shape ``(n_samples, n_classes)``."""
        X = self._check(X, fingerprint, CLASSIFIER)
        cls = self.tree_outputs(X).astype(np.int64)
        counts = np.zeros((X.shape[0], self.n_classes), dtype=np.int64)
        for c in range(self.n_classes):
            counts[:, c] = np.sum(cls == c, axis=0)
        return counts

    def predict_proba(self, X, fingerprint=None) -> np.ndarray:
        return self.vote_counts(X, fingerprint) / len(self.trees)

    def predict_class(self, X, fingerprint=None) -> np.ndarray:
        """Majority vote; ties go to the lower class index."""
        return np.argmax(self.vote_counts(X, fingerprint), axis=1)

    def predict_value(self, X, fingerprint=None) -> np.ndarray:
        X = self._check(X, fingerprint, REGRESSOR)
        return self.tree_outputs(X).mean(axis=0)

    def feature_importances(self) -> np.ndarray:
        """Fraction of splits on each feature (a coarse proxy, logged only)."""
        counts = np.zeros(self.n_features)
        for t in self.trees:
            f = t.feature[t.feature != LEAF]
            counts += np.bincount(f, minlength=self.n_features)
        total = counts.sum()
        return counts / total if total else counts

    # -- serialisation -------------------------------------------------

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    def to_bytes(self) -> bytes:
        header = {
            "format": "rfdistill-forest",
            "version": FORMAT_VERSION,
            "mode": self.mode,
            "config": asdict(self.config),
            "n_features": self.n_features,
            "n_classes": self.n_classes,
            "schema_fingerprint": self.schema_fingerprint,
            "n_trees": len(self.trees),
            "meta": self.meta,
        }
        sizes = np.array([t.n_nodes for t in self.trees], dtype=np.int64)
        arrays = {"node_counts": sizes}
        for name in ("feature", "threshold", "left", "right", "value"):
            arrays[name] = np.concatenate([getattr(t, name) for t in self.trees])
        return write_archive({"forest.json": json_bytes(header)}, arrays)

    @classmethod
    def load(cls, path) -> "ForestModel":
        return cls.from_bytes(Path(path).read_bytes())

    @classmethod
    def from_bytes(cls, data: bytes) -> "ForestModel":
        files, arrays = read_archive(data)
        header = json.loads(files["forest.json"])
        if header.get("format") != "rfdistill-forest":
            raise ValueError("not a forest archive")
        bounds = np.concatenate([[0], np.cumsum(arrays["node_counts"])])
        trees = []
        for a, b in zip(bounds[:-1], bounds[1:]):
            trees.append(Tree(*(arrays[n][a:b].copy()
                                 for n in ("feature", "threshold", "left", "right", "value"))))
        cfg = dict(header["config"])
        return cls(
            trees=trees,
            config=TrainConfig(**cfg),
            n_features=header["n_features"],
            n_classes=header["n_classes"],
            schema_fingerprint=header["schema_fingerprint"],
            meta=header.get("meta", {}),
        )


def train(X, y, config: TrainConfig, schema_fingerprint: str = "", n_jobs: int = 1) -> ForestModel:
    """Fit a forest.  Each tree gets its own RNG stream ``(rng_seed, tree_index)``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("training data must be a non-empty 2-D array")
    if len(y) != len(X):
        raise ValueError(f"{len(X)} samples but {len(y)} targets")
    if config.mode == CLASSIFIER:
        y = np.asarray(y)
        if not np.issubdtype(y.dtype, np.integer):
            if not np.all(np.mod(y, 1) == 0):
                raise ValueError("classifier targets must be integer class labels")
            y = y.astype(np.int64)
        if y.min() < 0:
            raise ValueError("class labels must be non-negative")
        n_classes = max(2, int(y.max()) + 1)
    else:
        y = np.asarray(y, dtype=np.float64)
        n_classes = 0

    jobs = [(X, y, config, n_classes, j) for j in range(config.n_estimators)]
    if n_jobs == 1:
        trees = [_train_one(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            trees = list(pool.map(_train_one, jobs, chunksize=8))
    return ForestModel(trees, config, X.shape[1], n_classes, schema_fingerprint)


# -- deterministic archive helpers ------------------------------------

def json_bytes(obj) -> bytes:
    return (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode()


def write_archive(files: dict, arrays: dict) -> bytes:
    """Zip with fixed timestamps so equal content gives equal bytes."""
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        for name in sorted(files):
            zf.writestr(_zinfo(name), files[name])
        for name in sorted(arrays):
            arr = io.BytesIO()
            np.lib.format.write_array(arr, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            zf.writestr(_zinfo(f"{name}.npy"), arr.getvalue())
    return buf.getvalue()


def read_archive(data: bytes):
    files, arrays = {}, {}
    with zipfile.ZipFile(io.BytesIO(data)) as zf:
        for name in zf.namelist():
            raw = zf.read(name)
            if name.endswith(".npy"):
                arrays[name[:-4]] = np.lib.format.read_array(io.BytesIO(raw), allow_pickle=False)
            else:
                files[name] = raw
    return files, arrays


def _zinfo(name):
    info = zipfile.ZipInfo(name, date_time=_ZIP_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    return info
