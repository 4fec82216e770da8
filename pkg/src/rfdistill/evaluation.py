"""Experiments comparing distilled and undistilled detectors.

Covers the per-family training/test construction (20:1 benign sampling,
80/20 malicious split), precision / detection rate / F1, the normal-traffic
comparison, the adversarial grid and the two reference countermeasures
(adversarial retraining and feature removal).
"""

from __future__ import annotations

import hashlib
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import forest
from .adversarial import GROUPS, STEPS, AdversarialDataset, generate_all
from .distillation import DistilledDetector, UndistilledDetector, build_detector
from .features import DEPENDENT, MUTABLE, N_FEATURES
from .flows import BENIGN, MALICIOUS
from .forest import TrainConfig

logger = logging.getLogger(__name__)

UNDISTILLED = "undistilled"
DISTILLED = "distilled"
RETRAINED = "retrained"
FEATURE_REMOVED = "feature-removed"

REMOVED_SLOTS = tuple(sorted(MUTABLE + DEPENDENT))
KEPT_SLOTS = tuple(i for i in range(N_FEATURES) if i not in REMOVED_SLOTS)


def sub_seed(seed: int, *parts) -> int:
    """Derive an independent 63-bit seed from ``seed`` and string parts.

    ``sha256("seed:part1:part2...")``, first 8 bytes little-endian, top bit
    cleared.
    """
    key = ":".join([str(int(seed)), *map(str, parts)])
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "little") >> 1


# -- metrics -------------------------------------------------------------

@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @classmethod
    def from_predictions(cls, y_true, y_pred) -> "ConfusionCounts":
        t = np.asarray(y_true) == MALICIOUS
        p = np.asarray(y_pred) == MALICIOUS
        return cls(int(np.sum(t & p)), int(np.sum(~t & p)), int(np.sum(t & ~p)), int(np.sum(~t & ~p)))


@dataclass(frozen=True)
class MetricsReport:
    """Precision, detection rate and F1; ``None`` marks an undefined value."""

    precision: float | None
    recall: float | None
    f1: float | None

    def as_row(self) -> dict:
        return {"f1": self.f1, "precision": self.precision, "recall": self.recall}


def _ratio(num, den):
    return None if den == 0 else num / den


def compute_metrics(counts: ConfusionCounts) -> MetricsReport:
    precision = _ratio(counts.tp, counts.tp + counts.fp)
    recall = _ratio(counts.tp, counts.tp + counts.fn)
    if precision is None or recall is None:
        f1 = None
    else:
        f1 = _ratio(2 * precision * recall, precision + recall)
    return MetricsReport(precision, recall, f1)


def mean_defined(values) -> float | None:
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


# -- experiment construction --------------------------------------------

@dataclass(frozen=True)
class ExperimentPlan:
    family: str
    seed: int = 0
    benign_ratio: int = 20
    train_fraction: float = 0.8
    retrain_fraction: float = 0.1
    detectors: tuple = (UNDISTILLED, DISTILLED, RETRAINED, FEATURE_REMOVED)

    def seed_for(self, purpose: str) -> int:
        return sub_seed(self.seed, self.family, purpose)


@dataclass
class TrainingSets:
    """Per-family data.  Rows ``train_rows`` of the Condenser set form the training split."""

    family: str
    X_condenser: np.ndarray
    y_condenser: np.ndarray
    n_train: int

    @property
    def train_rows(self) -> np.ndarray:
        return np.arange(self.n_train)

    @property
    def X_train(self) -> np.ndarray:
        return self.X_condenser[: self.n_train]

    @property
    def y_train(self) -> np.ndarray:
        return self.y_condenser[: self.n_train]

    @property
    def X_test(self) -> np.ndarray:
        return self.X_condenser[self.n_train:]

    @property
    def y_test(self) -> np.ndarray:
        return self.y_condenser[self.n_train:]

    @property
    def X_test_malicious(self) -> np.ndarray:
        return self.X_test[self.y_test == MALICIOUS]

    def counts(self) -> dict:
        return {
            "train_malicious": int(np.sum(self.y_train == MALICIOUS)),
            "train_benign": int(np.sum(self.y_train == BENIGN)),
            "test_malicious": int(np.sum(self.y_test == MALICIOUS)),
            "test_benign": int(np.sum(self.y_test == BENIGN)),
        }

    def arrays(self) -> dict:
        return {"X_condenser": self.X_condenser, "y_condenser": self.y_condenser,
                "n_train": np.array([self.n_train])}

    @classmethod
    def from_arrays(cls, family, arrays) -> "TrainingSets":
        return cls(family, arrays["X_condenser"], arrays["y_condenser"], int(arrays["n_train"][0]))


def build_training_sets(X_benign, X_family, plan: ExperimentPlan) -> TrainingSets:
    """Sample benign flows at ``benign_ratio``:1 and split both classes ``train_fraction``.

    Training split first (malicious then benign), then the test split.  The
    Condenser sees all of it.
    """
    X_benign = np.asarray(X_benign, dtype=np.float64)
    X_family = np.asarray(X_family, dtype=np.float64)
    n_mal = len(X_family)
    if n_mal == 0 or len(X_benign) == 0:
        raise ValueError(f"{plan.family}: need both benign and malicious flows")
    n_mal_train = math.floor(n_mal * plan.train_fraction + 1e-9)
    n_ben_train = plan.benign_ratio * n_mal_train
    n_ben_test = plan.benign_ratio * (n_mal - n_mal_train)
    required = n_ben_train + n_ben_test
    if len(X_benign) < required:
        raise ValueError(
            f"{plan.family}: benign pool has {len(X_benign)} flows, "
            f"{required} needed for {plan.benign_ratio}:1 with {n_mal} malicious"
        )

    rng = np.random.default_rng(plan.seed_for("split"))
    mal = rng.permutation(n_mal)
    ben = rng.choice(len(X_benign), size=required, replace=False)

    X = np.vstack([
        X_family[mal[:n_mal_train]], X_benign[ben[:n_ben_train]],
        X_family[mal[n_mal_train:]], X_benign[ben[n_ben_train:]],
    ])
    y = np.concatenate([
        np.full(n_mal_train, MALICIOUS), np.full(n_ben_train, BENIGN),
        np.full(n_mal - n_mal_train, MALICIOUS), np.full(n_ben_test, BENIGN),
    ]).astype(np.int64)
    return TrainingSets(plan.family, X, y, n_mal_train + n_ben_train)


# -- detectors -------------------------------------------------------------

@dataclass(frozen=True)
class DetectorConfigs:
    undistilled: TrainConfig = forest.UNDISTILLED
    condenser: TrainConfig = forest.CONDENSER
    receiver: TrainConfig = forest.RECEIVER


@dataclass
class FeatureSubsetDetector:
    """Undistilled classifier that only ever looks at ``keep`` slots."""

    model: forest.ForestModel
    keep: tuple = KEPT_SLOTS
    family: str = ""

    def predict(self, X, fingerprint=None):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return self.model.predict_class(X[:, list(self.keep)], fingerprint)

    def to_bytes(self) -> bytes:
        header = {"format": "rfdistill-detector", "kind": "feature-subset",
                  "family": self.family, "keep": list(self.keep),
                  "schema_fingerprint": self.model.schema_fingerprint}
        return forest.write_archive({"detector.json": forest.json_bytes(header),
                                     "classifier.forest": self.model.to_bytes()}, {})


def _timed(fn, *args, **kwargs):
    t0 = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t0


def train_undistilled(sets: TrainingSets, cfg: TrainConfig, plan: ExperimentPlan,
                      fingerprint: str = "") -> UndistilledDetector:
    model = forest.train(sets.X_train, sets.y_train,
                         cfg.replace(rng_seed=plan.seed_for(UNDISTILLED)), fingerprint)
    return UndistilledDetector(model, plan.family)


def train_distilled(sets: TrainingSets, cond_cfg: TrainConfig, recv_cfg: TrainConfig,
                    plan: ExperimentPlan, fingerprint: str = "") -> DistilledDetector:
    return build_detector(
        sets.X_condenser, sets.y_condenser,
        cond_cfg.replace(rng_seed=plan.seed_for("condenser")),
        recv_cfg.replace(rng_seed=plan.seed_for("receiver")),
        receiver_rows=sets.train_rows,
        schema_fingerprint=fingerprint,
        family=plan.family,
    )


def train_feature_removed(sets: TrainingSets, cfg: TrainConfig, plan: ExperimentPlan,
                          fingerprint: str = "") -> FeatureSubsetDetector:
    keep = list(KEPT_SLOTS)
    model = forest.train(sets.X_train[:, keep], sets.y_train,
                         cfg.replace(rng_seed=plan.seed_for(FEATURE_REMOVED)), fingerprint)
    return FeatureSubsetDetector(model, KEPT_SLOTS, plan.family)


def adversarial_pool(datasets: Sequence[AdversarialDataset], family: str) -> np.ndarray:
    parts = [d.samples for d in datasets if d.family == family]
    if not parts:
        raise ValueError(f"no adversarial datasets for {family}")
    return np.vstack(parts)


def retraining_sample(pool: np.ndarray, plan: ExperimentPlan) -> np.ndarray:
    """Uniform draw of ``floor(retrain_fraction * |pool|)`` adversarial samples."""
    n = math.floor(plan.retrain_fraction * len(pool) + 1e-9)
    rng = np.random.default_rng(plan.seed_for("retrain-sample"))
    idx = np.sort(rng.choice(len(pool), size=n, replace=False))
    return pool[idx]


def train_retrained(sets: TrainingSets, adv_pool: np.ndarray, cfg: TrainConfig,
                    plan: ExperimentPlan, fingerprint: str = "") -> UndistilledDetector:
    extra = retraining_sample(adv_pool, plan)
    X = np.vstack([sets.X_train, extra])
    y = np.concatenate([sets.y_train, np.full(len(extra), MALICIOUS)])
    model = forest.train(X, y, cfg.replace(rng_seed=plan.seed_for(RETRAINED)), fingerprint)
    return UndistilledDetector(model, plan.family)


# -- normal scenario ---------------------------------------------------------

@dataclass
class NormalRow:
    family: str
    detector: str
    metrics: MetricsReport
    counts: ConfusionCounts

    def as_row(self) -> dict:
        return {"family": self.family, "detector": self.detector, **self.metrics.as_row()}


def evaluate_normal(detector, sets: TrainingSets, name: str, fingerprint=None) -> NormalRow:
    pred = detector.predict(sets.X_test, fingerprint)
    counts = ConfusionCounts.from_predictions(sets.y_test, pred)
    return NormalRow(sets.family, name, compute_metrics(counts), counts)


def average_rows(rows: Sequence[NormalRow], detector_order: Sequence[str]) -> list[dict]:
    """Unweighted per-detector means over families."""
    out = []
    for det in detector_order:
        sel = [r.metrics for r in rows if r.detector == det]
        if not sel:
            continue
        out.append({
            "family": "Average",
            "detector": det,
            "f1": mean_defined(m.f1 for m in sel),
            "precision": mean_defined(m.precision for m in sel),
            "recall": mean_defined(m.recall for m in sel),
        })
    return out


@dataclass
class NormalResult:
    rows: list
    detectors: dict            # family -> {name: detector}
    times: list = field(default_factory=list)   # (family, detector, seconds)

    def table(self) -> list[dict]:
        order = [UNDISTILLED, DISTILLED]
        rows = [r.as_row() for r in self.rows]
        return rows + average_rows(self.rows, order)


def run_normal_experiment(training_sets: Mapping[str, TrainingSets], configs: DetectorConfigs,
                          seed: int, fingerprint: str = "", plan_args=None) -> NormalResult:
    """Train both detectors per family on the same split and test them on the same rows."""
    rows, detectors, times = [], {}, []
    for family, sets in training_sets.items():
        plan = ExperimentPlan(family, seed, **(plan_args or {}))
        und, t_und = _timed(train_undistilled, sets, configs.undistilled, plan, fingerprint)
        dist, t_dist = _timed(train_distilled, sets, configs.condenser, configs.receiver,
                              plan, fingerprint)
        detectors[family] = {UNDISTILLED: und, DISTILLED: dist}
        times += [(family, UNDISTILLED, t_und), (family, DISTILLED, t_dist)]
        rows.append(evaluate_normal(und, sets, UNDISTILLED))
        rows.append(evaluate_normal(dist, sets, DISTILLED))
        logger.info("%s: trained in %.1fs / %.1fs", family, t_und, t_dist)
    return NormalResult(rows, detectors, times)


# -- adversarial grid ----------------------------------------------------------

@dataclass(frozen=True)
class GridCell:
    family: str
    group: str
    step: str
    detector: str
    detected: int
    n: int

    @property
    def dr(self) -> float:
        return self.detected / self.n

    def as_row(self) -> dict:
        return {"family": self.family, "group": self.group, "step": self.step,
                "detector": self.detector, "detected": self.detected, "n": self.n,
                "detection_rate": self.dr}


class MissingCellError(RuntimeError):
    pass


def run_adversarial_grid(detectors: Mapping[str, Mapping[str, object]],
                         datasets: Sequence[AdversarialDataset],
                         detector_names: Sequence[str] | None = None) -> list[GridCell]:
    """Detection rate of every detector on every adversarial dataset.

    ``detectors`` maps family -> detector name -> detector.  All samples are
    malicious, so only true positives and false negatives exist.
    """
    if detector_names is None:
        detector_names = sorted({n for per in detectors.values() for n in per})
    cells = []
    for ds in datasets:
        per = detectors.get(ds.family, {})
        for name in detector_names:
            det = per.get(name)
            if det is None:
                raise MissingCellError(f"no {name} detector for {ds.family} ({ds.group.id}/{ds.step.id})")
            pred = np.asarray(det.predict(ds.samples))
            cells.append(GridCell(ds.family, ds.group.id, ds.step.id, name,
                                  int(np.sum(pred == MALICIOUS)), len(pred)))
    check_grid(cells, {d.family for d in datasets}, detector_names)
    return cells


def check_grid(cells, families, detector_names, groups=GROUPS, steps=STEPS):
    keys = [(c.family, c.group, c.step, c.detector) for c in cells]
    if len(set(keys)) != len(keys):
        raise MissingCellError("duplicate grid cells")
    expected = {(f, g.id, s.id, d) for f in families for g in groups for s in steps
                for d in detector_names}
    missing = expected - set(keys)
    if missing:
        raise MissingCellError(f"{len(missing)} grid cells missing, e.g. {sorted(missing)[0]}")


def five_number(values) -> dict:
    v = np.asarray(list(values), dtype=np.float64)
    q = np.percentile(v, [0, 25, 50, 75, 100])
    return dict(zip(("min", "q1", "median", "q3", "max"), map(float, q)))


def _mean_by(cells, key, detector):
    groups = {}
    for c in cells:
        if c.detector == detector:
            groups.setdefault(key(c), []).append(c.dr)
    return {k: float(np.mean(v)) for k, v in groups.items()}


def summarize_grid(cells: Sequence[GridCell]) -> dict:
    """Aggregations of the grid: by family, by group, by step, per-group lines."""
    detectors = sorted({c.detector for c in cells})
    families = sorted({c.family for c in cells})
    group_ids = [g.id for g in GROUPS]
    step_ids = [s.id for s in STEPS]
    out = {"detectors": detectors, "families": families, "n_cells": len(cells),
           "overall": {}, "by_family": {}, "by_group": {}, "by_step": {},
           "group_step": {}, "family_step": {}, "family_group_step": {}, "step_spread": {}}
    for det in detectors:
        out["overall"][det] = float(np.mean([c.dr for c in cells if c.detector == det]))
        by_f = _mean_by(cells, lambda c: c.family, det)
        by_g = _mean_by(cells, lambda c: c.group, det)
        by_s = _mean_by(cells, lambda c: c.step, det)
        gs = _mean_by(cells, lambda c: (c.group, c.step), det)
        fs = _mean_by(cells, lambda c: (c.family, c.step), det)
        fgs = _mean_by(cells, lambda c: (c.family, c.group, c.step), det)
        out["by_family"][det] = {f: by_f[f] for f in families}
        out["by_group"][det] = {g: by_g[g] for g in group_ids if g in by_g}
        out["by_step"][det] = {s: by_s[s] for s in step_ids if s in by_s}
        out["group_step"][det] = {
            g: {"line": [gs[(g, s)] for s in step_ids],
                "box": five_number(gs[(g, s)] for s in step_ids)}
            for g in group_ids if (g, step_ids[0]) in gs
        }
        out["family_step"][det] = {
            f: {"line": [fs[(f, s)] for s in step_ids],
                "box": five_number(fs[(f, s)] for s in step_ids)}
            for f in families
        }
        out["family_group_step"][det] = {
            f: {g: {"line": [fgs[(f, g, s)] for s in step_ids],
                    "box": five_number(fgs[(f, g, s)] for s in step_ids)}
                for g in group_ids}
            for f in families
        }
        steps = list(out["by_step"][det].values())
        out["step_spread"][det] = max(steps) - min(steps)
    return out


# -- reference countermeasures -------------------------------------------

def grid_recall(cells, detector) -> float:
    return float(np.mean([c.dr for c in cells if c.detector == detector]))


def adversarial_retraining_baseline(training_sets, datasets, configs: DetectorConfigs, seed,
                                    baseline=None, distilled=None, fingerprint="", plan_args=None):
    """Retrain the undistilled detector with 10% adversarial samples.

    Returns ``(table_rows, retrained_detectors, cells)``; the table holds
    averaged normal and adversarial recall for each detector type present.
    """
    retrained = {}
    for family, sets in training_sets.items():
        plan = ExperimentPlan(family, seed, **(plan_args or {}))
        pool = adversarial_pool(datasets, family)
        retrained[family] = train_retrained(sets, pool, configs.undistilled, plan, fingerprint)

    kinds = [(RETRAINED, retrained)]
    if baseline is not None:
        kinds.append((UNDISTILLED, baseline))
    if distilled is not None:
        kinds.append((DISTILLED, distilled))

    dets = {f: {name: m[f] for name, m in kinds} for f in training_sets}
    cells = run_adversarial_grid(dets, datasets, [name for name, _ in kinds])
    rows = []
    for name, per in kinds:
        normal = [evaluate_normal(per[f], training_sets[f], name).metrics.recall for f in training_sets]
        rows.append({"detector": name, "recall_normal": mean_defined(normal),
                     "recall_adversarial": grid_recall(cells, name)})
    return rows, retrained, cells


def feature_removal_baseline(training_sets, configs: DetectorConfigs, seed,
                             baseline=None, distilled=None, fingerprint="", plan_args=None):
    """Undistilled detector without duration/bytes/packets and their derived slots."""
    removed = {}
    per_family = []
    for family, sets in training_sets.items():
        plan = ExperimentPlan(family, seed, **(plan_args or {}))
        removed[family] = train_feature_removed(sets, configs.undistilled, plan, fingerprint)
        per_family.append(evaluate_normal(removed[family], sets, FEATURE_REMOVED))
    for name, per in ((UNDISTILLED, baseline), (DISTILLED, distilled)):
        if per is not None:
            per_family += [evaluate_normal(per[f], training_sets[f], name) for f in training_sets]
    rows = [{k: v for k, v in r.items() if k != "family"}
            for r in average_rows(per_family, [FEATURE_REMOVED, UNDISTILLED, DISTILLED])]
    return rows, removed, per_family


# -- one-call pipeline ---------------------------------------------------

@dataclass
class ExperimentResult:
    training_sets: dict
    normal: NormalResult
    datasets: list
    cells: list
    summary: dict
    retraining: list
    feature_removal: list
    feature_removal_rows: list


def run_all(X_benign, family_sets: Mapping[str, np.ndarray], configs: DetectorConfigs,
            seed: int = 0, fingerprint: str = "", plan_args=None) -> ExperimentResult:
    """Normal comparison, adversarial grid and both baselines in one go.

    ``plan_args`` overrides ``ExperimentPlan`` fields for every family.
    """
    sets = {f: build_training_sets(X_benign, X, ExperimentPlan(f, seed, **(plan_args or {})))
            for f, X in family_sets.items()}
    normal = run_normal_experiment(sets, configs, seed, fingerprint, plan_args)
    datasets = generate_all({f: s.X_test_malicious for f, s in sets.items()})
    base = {f: d[UNDISTILLED] for f, d in normal.detectors.items()}
    dist = {f: d[DISTILLED] for f, d in normal.detectors.items()}
    cells = run_adversarial_grid(normal.detectors, datasets, [UNDISTILLED, DISTILLED])
    retr_rows, _, _ = adversarial_retraining_baseline(sets, datasets, configs, seed, base, dist,
                                                      fingerprint, plan_args)
    fr_rows, _, fr_family = feature_removal_baseline(sets, configs, seed, base, dist,
                                                     fingerprint, plan_args)
    return ExperimentResult(sets, normal, datasets, cells, summarize_grid(cells),
                            retr_rows, fr_rows, [r.as_row() for r in fr_family])
