"""Parsing and labelling of binetflow-style CSV exports.

A binetflow file is the CSV produced by Argus ``ra`` over a packet capture,
with an extra ``Label`` column.  Each row becomes a :class:`RawFlow`; rows
that cannot be parsed are reported with their line number instead of being
dropped.
"""

from __future__ import annotations

import csv
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

logger = logging.getLogger(__name__)

NO_PORT = -1

BENIGN = 0
MALICIOUS = 1

FAMILIES = ("Neris", "Rbot", "Virut", "Menti", "Murlo", "NSIS.ay")
EXCLUDED_FAMILIES = frozenset({"Sogou"})

# CTU-13 scenario number -> botnet family
DEFAULT_SCENARIO_FAMILY = {
    "1": "Neris",
    "2": "Neris",
    "3": "Rbot",
    "4": "Rbot",
    "5": "Virut",
    "6": "Menti",
    "7": "Sogou",
    "8": "Murlo",
    "9": "Neris",
    "10": "Rbot",
    "11": "Rbot",
    "12": "NSIS.ay",
    "13": "Virut",
}

# logical field -> header name in the CTU-13 binetflow export
DEFAULT_SCHEMA = {
    "start_time": "StartTime",
    "duration": "Dur",
    "protocol": "Proto",
    "src_addr": "SrcAddr",
    "src_port": "Sport",
    "direction": "Dir",
    "dst_addr": "DstAddr",
    "dst_port": "Dport",
    "conn_state": "State",
    "src_tos": "sTos",
    "dst_tos": "dTos",
    "tot_pkts": "TotPkts",
    "tot_bytes": "TotBytes",
    "src_bytes": "SrcBytes",
    "label_text": "Label",
}

OPTIONAL_FIELDS = frozenset({"src_tos", "dst_tos", "start_time"})


class SchemaError(ValueError):
    """The CSV header lacks a mandatory column."""


class LabelError(ValueError):
    """A label string matches none of the known categories."""


@dataclass(frozen=True)
class RawFlow:
    start_time: str
    duration: float
    protocol: str
    src_addr: str
    src_port: int
    direction: str
    dst_addr: str
    dst_port: int
    conn_state: str
    src_tos: int
    dst_tos: int
    tot_pkts: int
    tot_bytes: int
    src_bytes: int
    label_text: str

    @property
    def dst_bytes(self) -> int:
        return self.tot_bytes - self.src_bytes


@dataclass(frozen=True)
class FlowLabel:
    cls: int
    family: str | None = None

    def __post_init__(self):
        if (self.cls == MALICIOUS) != (self.family is not None):
            raise ValueError("family must be set iff the flow is malicious")

    @property
    def is_malicious(self) -> bool:
        return self.cls == MALICIOUS


@dataclass
class ParseReport:
    path: str
    rows: int = 0
    errors: list[tuple[int, str]] = field(default_factory=list)

    @property
    def n_errors(self) -> int:
        return len(self.errors)


@dataclass
class Partition:
    """Benign pool plus one malicious pool per botnet family."""

    benign: list[RawFlow] = field(default_factory=list)
    families: dict[str, list[RawFlow]] = field(default_factory=dict)
    excluded: int = 0

    def total(self) -> int:
        return len(self.benign) + sum(map(len, self.families.values())) + self.excluded


def parse_port(text: str) -> int:
    """Parse a port field; hex strings need the ``0x`` prefix.

    Anything unparseable (empty, ICMP type codes, garbage) maps to ``NO_PORT``.
    """
    text = text.strip()
    if not text:
        return NO_PORT
    try:
        if text.lower().startswith("0x"):
            return int(text, 16)
        return int(text)
    except ValueError:
        return NO_PORT


def _parse_count(text: str, name: str) -> int:
    value = float(text)
    if value != int(value) or value < 0:
        raise ValueError(f"{name} is not a non-negative integer: {text!r}")
    return int(value)


def _parse_tos(text: str) -> int:
    text = (text or "").strip()
    if not text:
        return 0
    return int(float(text))


def _row_to_flow(row: Mapping[str, str], schema: Mapping[str, str]) -> RawFlow:
    def get(name):
        col = schema.get(name)
        return (row.get(col) or "") if col is not None else ""

    try:
        duration = float(get("duration"))
    except ValueError:
        raise ValueError(f"bad duration {get('duration')!r}") from None
    if duration < 0:
        raise ValueError(f"negative duration {duration}")
    try:
        tot_pkts = _parse_count(get("tot_pkts"), "TotPkts")
        tot_bytes = _parse_count(get("tot_bytes"), "TotBytes")
        src_bytes = _parse_count(get("src_bytes"), "SrcBytes")
        src_tos = _parse_tos(get("src_tos"))
        dst_tos = _parse_tos(get("dst_tos"))
    except ValueError as exc:
        raise ValueError(f"unparseable numeric field: {exc}") from None
    if tot_pkts < 1:
        raise ValueError("flow without packets")
    if src_bytes > tot_bytes:
        raise ValueError("byte inconsistency: SrcBytes > TotBytes")

    return RawFlow(
        start_time=get("start_time"),
        duration=duration,
        protocol=get("protocol").strip().lower(),
        src_addr=get("src_addr").strip(),
        src_port=parse_port(get("src_port")),
        direction=get("direction").strip(),
        dst_addr=get("dst_addr").strip(),
        dst_port=parse_port(get("dst_port")),
        conn_state=get("conn_state").strip(),
        src_tos=src_tos,
        dst_tos=dst_tos,
        tot_pkts=tot_pkts,
        tot_bytes=tot_bytes,
        src_bytes=src_bytes,
        label_text=get("label_text").strip(),
    )


def parse_flow_file(path, schema: Mapping[str, str] | None = None):
    """Parse one binetflow CSV into ``(flows, report)``.

    ``schema`` maps logical field names to header names and defaults to the
    CTU-13 header.  A missing mandatory column raises :class:`SchemaError`;
    bad rows are collected in ``report.errors`` as ``(line_number, message)``.
    """
    schema = dict(DEFAULT_SCHEMA if schema is None else schema)
    path = Path(path)
    report = ParseReport(str(path))
    flows: list[RawFlow] = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        reader.fieldnames = header
        missing = [
            col for name, col in schema.items()
            if name not in OPTIONAL_FIELDS and col not in header
        ]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
        for row in reader:
            report.rows += 1
            try:
                flows.append(_row_to_flow(row, schema))
            except ValueError as exc:
                report.errors.append((reader.line_num, str(exc)))
    return flows, report


def load_key_value_file(path) -> dict[str, str]:
    """Read ``key=value`` lines, skipping blanks and ``#`` comments."""
    out = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def label_flow(flow: RawFlow, scenario: str | None = None,
               scenario_family: Mapping[str, str] | None = None) -> FlowLabel:
    """Assign the ground-truth class from the CTU-13 label string.

    Botnet and CnC labels are malicious; their family comes from the scenario
    the file belongs to.  Normal and Background labels are benign.
    """
    text = flow.label_text.lower()
    if not text:
        raise LabelError("empty label")
    if "botnet" in text or "cnc" in text:
        mapping = DEFAULT_SCENARIO_FAMILY if scenario_family is None else scenario_family
        family = mapping.get(str(scenario)) if scenario is not None else None
        if family is None:
            raise LabelError(f"no family known for scenario {scenario!r}")
        return FlowLabel(MALICIOUS, family)
    if "normal" in text or "background" in text:
        return FlowLabel(BENIGN)
    raise LabelError(f"unrecognised label {flow.label_text!r}")


def partition_by_family(labeled: Iterable[tuple[RawFlow, FlowLabel]],
                        excluded_families=EXCLUDED_FAMILIES) -> Partition:
    part = Partition()
    for flow, label in labeled:
        if not label.is_malicious:
            part.benign.append(flow)
        elif label.family in excluded_families:
            part.excluded += 1
        else:
            part.families.setdefault(label.family, []).append(flow)
    return part


@dataclass
class IngestResult:
    partition: Partition
    reports: list[ParseReport]
    unlabeled: int = 0
    label_errors: Counter = field(default_factory=Counter)

    @property
    def total_rows(self) -> int:
        return sum(r.rows for r in self.reports)

    @property
    def parse_errors(self) -> int:
        return sum(r.n_errors for r in self.reports)

    def counts(self) -> dict:
        p = self.partition
        return {
            "rows": self.total_rows,
            "benign": len(p.benign),
            "malicious": {fam: len(v) for fam, v in sorted(p.families.items())},
            "excluded": p.excluded,
            "parse_errors": self.parse_errors,
            "unlabeled": self.unlabeled,
        }


def ingest(files: Sequence[tuple[str, object]], schema=None, scenario_family=None) -> IngestResult:
    """Parse, label and partition several ``(scenario, path)`` files."""
    labeled = []
    reports = []
    unlabeled = 0
    reasons: Counter = Counter()
    for scenario, path in files:
        flows, report = parse_flow_file(path, schema)
        reports.append(report)
        for flow in flows:
            try:
                labeled.append((flow, label_flow(flow, scenario, scenario_family)))
            except LabelError as exc:
                unlabeled += 1
                reasons[str(exc)] += 1
        if report.errors:
            logger.warning("%s: %d malformed rows", path, report.n_errors)
    if unlabeled:
        logger.warning("%d flows without a usable label were excluded", unlabeled)
    return IngestResult(partition_by_family(labeled), reports, unlabeled, reasons)
