"""Random-forest distillation: Condenser votes become soft labels for a Receiver.

The Condenser is a forest classifier trained on hard labels.  The fraction of
its trees that vote "malicious" for a sample is that sample's probability
label.  The Receiver is a forest regressor fitted to those labels, and a
detection is its output rounded to the nearest integer (0.5 counts as
malicious).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import forest
from .flows import MALICIOUS
from .forest import CLASSIFIER, REGRESSOR, ForestModel, SchemaMismatch, TrainConfig

THRESHOLD = 0.5


def generate_probability_labels(condenser: ForestModel, X, fingerprint=None) -> np.ndarray:
    """Share of Condenser trees voting malicious, for every row of ``X``."""
    if condenser is None or not condenser.trees:
        raise ValueError("condenser is not trained")
    if condenser.mode != CLASSIFIER:
        raise ValueError("condenser must be a classifier forest")
    counts = condenser.vote_counts(X, fingerprint)
    return counts[:, MALICIOUS] / len(condenser.trees)


def round_detection(score) -> np.ndarray:
    """Round scores to {0, 1}; exactly 0.5 becomes 1."""
    return (np.asarray(score) >= THRESHOLD).astype(np.int64)


@dataclass
class DistilledDetector:
    condenser: ForestModel
    receiver: ForestModel
    family: str = ""

    def __post_init__(self):
        if self.condenser.schema_fingerprint != self.receiver.schema_fingerprint:
            raise SchemaMismatch("condenser and receiver use different feature schemas")

    @property
    def schema_fingerprint(self) -> str:
        return self.receiver.schema_fingerprint

    def score(self, X, fingerprint=None) -> np.ndarray:
        return self.receiver.predict_value(X, fingerprint)

    def detect(self, X, fingerprint=None):
        """``(decisions, scores)`` for the rows of ``X``."""
        s = self.score(X, fingerprint)
        return round_detection(s), s

    def predict(self, X, fingerprint=None) -> np.ndarray:
        return self.detect(X, fingerprint)[0]

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    def to_bytes(self) -> bytes:
        header = {
            "format": "rfdistill-detector",
            "kind": "distilled",
            "family": self.family,
            "schema_fingerprint": self.schema_fingerprint,
        }
        return forest.write_archive(
            {
                "detector.json": forest.json_bytes(header),
                "condenser.forest": self.condenser.to_bytes(),
                "receiver.forest": self.receiver.to_bytes(),
            },
            {},
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "DistilledDetector":
        files, _ = forest.read_archive(data)
        header = json.loads(files["detector.json"])
        return cls(
            ForestModel.from_bytes(files["condenser.forest"]),
            ForestModel.from_bytes(files["receiver.forest"]),
            header["family"],
        )


@dataclass
class UndistilledDetector:
    """Plain forest classifier, the baseline the distilled detector is compared to."""

    model: ForestModel
    family: str = ""

    @property
    def schema_fingerprint(self) -> str:
        return self.model.schema_fingerprint

    def detect(self, X, fingerprint=None):
        s = self.model.predict_proba(X, fingerprint)[:, MALICIOUS]
        return self.model.predict_class(X, fingerprint), s

    def predict(self, X, fingerprint=None) -> np.ndarray:
        return self.model.predict_class(X, fingerprint)

    def to_bytes(self) -> bytes:
        header = {
            "format": "rfdistill-detector",
            "kind": "undistilled",
            "family": self.family,
            "schema_fingerprint": self.schema_fingerprint,
        }
        return forest.write_archive(
            {"detector.json": forest.json_bytes(header), "classifier.forest": self.model.to_bytes()},
            {},
        )

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())


def load_detector(path):
    """Load either detector kind from a bundle written by ``save``."""
    data = Path(path).read_bytes()
    files, _ = forest.read_archive(data)
    header = json.loads(files["detector.json"])
    if header["kind"] == "distilled":
        return DistilledDetector.from_bytes(data)
    return UndistilledDetector(ForestModel.from_bytes(files["classifier.forest"]), header["family"])


def build_detector(X_condenser, y_condenser, condenser_cfg: TrainConfig,
                   receiver_cfg: TrainConfig, receiver_rows=None, *,
                   schema_fingerprint: str = "", family: str = "") -> DistilledDetector:
    """Train the Condenser on all family data, then the Receiver on its labels.

    The Condenser is fitted and queried on the same ``X_condenser``.
    ``receiver_rows`` selects the subset (the training split) the Receiver is
    fitted on; ``None`` means all rows.
    """
    X_condenser = np.asarray(X_condenser, dtype=np.float64)
    y_condenser = np.asarray(y_condenser)
    if len(np.unique(y_condenser)) < 2:
        raise ValueError("distillation needs both benign and malicious samples")
    if condenser_cfg.mode != CLASSIFIER or receiver_cfg.mode != REGRESSOR:
        raise ValueError("condenser must use gini and receiver mse")

    condenser = forest.train(X_condenser, y_condenser, condenser_cfg, schema_fingerprint)
    labels = generate_probability_labels(condenser, X_condenser)
    if receiver_rows is None:
        receiver_rows = np.arange(len(X_condenser))
    receiver = forest.train(X_condenser[receiver_rows], labels[receiver_rows],
                            receiver_cfg, schema_fingerprint)
    return DistilledDetector(condenser, receiver, family)
