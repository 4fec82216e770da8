"""Evasion datasets built by inflating duration, bytes and packets of malicious flows.

Fifteen feature groups (every non-empty subset of the four alterable
features) are crossed with nine fixed increment steps.  Every altered sample
starts from its original vector; derived slots are recomputed afterwards.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .features import DEPENDS_ON, DURATION, FEATURE_NAMES, IN_BYTES, OUT_BYTES, TOT_PKTS, recompute_derived


@dataclass(frozen=True)
class FeatureGroup:
    id: str
    members: tuple  # subset of ("duration", "src_bytes", "dst_bytes", "tot_pkts")


@dataclass(frozen=True)
class IncrementStep:
    id: str
    duration: float
    src_bytes: float
    dst_bytes: float
    tot_pkts: float

    def amount(self, member: str) -> float:
        return getattr(self, member)


MEMBER_SLOTS = {
    "duration": DURATION,
    "src_bytes": OUT_BYTES,
    "dst_bytes": IN_BYTES,
    "tot_pkts": TOT_PKTS,
}

GROUPS = tuple(FeatureGroup(gid, members) for gid, members in (
    ("1a", ("duration",)),
    ("1b", ("src_bytes",)),
    ("1c", ("dst_bytes",)),
    ("1d", ("tot_pkts",)),
    ("2a", ("duration", "src_bytes")),
    ("2b", ("duration", "dst_bytes")),
    ("2c", ("duration", "tot_pkts")),
    ("2d", ("src_bytes", "tot_pkts")),
    ("2e", ("src_bytes", "dst_bytes")),
    ("2f", ("dst_bytes", "tot_pkts")),
    ("3a", ("duration", "src_bytes", "dst_bytes")),
    ("3b", ("duration", "src_bytes", "tot_pkts")),
    ("3c", ("duration", "dst_bytes", "tot_pkts")),
    ("3d", ("src_bytes", "dst_bytes", "tot_pkts")),
    ("4a", ("duration", "src_bytes", "dst_bytes", "tot_pkts")),
))

#            duration  src_bytes  dst_bytes  tot_pkts
STEPS = tuple(IncrementStep(sid, *inc) for sid, inc in (
    ("I",    (1,    1,    1,    1)),
    ("II",   (2,    2,    2,    2)),
    ("III",  (5,    8,    8,    5)),
    ("IV",   (10,   16,   16,   10)),
    ("V",    (15,   64,   64,   15)),
    ("VI",   (30,   128,  128,  20)),
    ("VII",  (45,   256,  256,  30)),
    ("VIII", (60,   512,  512,  50)),
    ("IX",   (120,  1024, 1024, 100)),
))

GROUP_BY_ID = {g.id: g for g in GROUPS}
STEP_BY_ID = {s.id: s for s in STEPS}


def increment_vector(group: FeatureGroup, step: IncrementStep, n_features: int = len(FEATURE_NAMES)):
    inc = np.zeros(n_features)
    for m in group.members:
        inc[MEMBER_SLOTS[m]] = step.amount(m)
    return inc


def alter_sample(x, group: FeatureGroup, step: IncrementStep) -> np.ndarray:
    """Increment the group's features by the step, then refresh derived slots.

    Only derived slots that read an altered feature are rewritten.  Accepts
    one vector or a matrix of vectors; the input is not modified.
    """
    x = np.asarray(x, dtype=np.float64)
    out = x + increment_vector(group, step, x.shape[-1])
    fresh = recompute_derived(out)
    slots = sorted({d for m in group.members for d in DEPENDS_ON[MEMBER_SLOTS[m]]})
    out[..., slots] = fresh[..., slots]
    return out


@dataclass
class AdversarialDataset:
    family: str
    group: FeatureGroup
    step: IncrementStep
    samples: np.ndarray
    provenance: np.ndarray

    @property
    def key(self) -> tuple:
        return (self.family, self.group.id, self.step.id)

    def stem(self) -> str:
        return f"{_slug(self.family)}__{self.group.id}__{self.step.id}"

    def metadata(self) -> dict:
        return {
            "family": self.family,
            "group": self.group.id,
            "members": list(self.group.members),
            "step": self.step.id,
            "increments": {m: self.step.amount(m) for m in self.group.members},
            "n_samples": int(len(self.samples)),
        }

    def save(self, out_dir) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / f"{self.stem()}.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["source_index", *FEATURE_NAMES])
            for i, row in zip(self.provenance, self.samples):
                w.writerow([int(i), *(repr(float(v)) for v in row)])
        (out_dir / f"{self.stem()}.json").write_text(
            json.dumps(self.metadata(), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, csv_path) -> "AdversarialDataset":
        csv_path = Path(csv_path)
        meta = json.loads(csv_path.with_suffix(".json").read_text())
        data = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
        return cls(meta["family"], GROUP_BY_ID[meta["group"]], STEP_BY_ID[meta["step"]],
                   data[:, 1:], data[:, 0].astype(np.int64))


def _slug(family: str) -> str:
    return family.replace(".", "_")


def create_dataset(X_family, group: FeatureGroup, step: IncrementStep, family: str = "") -> AdversarialDataset:
    """Alter every test-phase malicious sample of one family, keeping order."""
    X_family = np.asarray(X_family, dtype=np.float64)
    if X_family.ndim != 2 or len(X_family) == 0:
        raise ValueError("no malicious samples to alter")
    return AdversarialDataset(family, group, step, alter_sample(X_family, group, step),
                              np.arange(len(X_family)))


def generate_all(test_sets: Mapping[str, np.ndarray], groups: Iterable[FeatureGroup] = GROUPS,
                 steps: Iterable[IncrementStep] = STEPS) -> list[AdversarialDataset]:
    """Every (group, step, family) dataset; 15 x 9 per family with the defaults."""
    groups, steps = list(groups), list(steps)
    out = []
    for g in groups:
        for s in steps:
            for family, X in test_sets.items():
                out.append(create_dataset(X, g, s, family))
    return out
