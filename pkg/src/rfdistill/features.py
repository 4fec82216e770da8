"""The 20-feature numeric encoding of a network flow.

Slot layout (0-based)::

     0  src IP type (1 = RFC1918 private)   10  outgoing bytes
     1  dst IP type                         11  incoming bytes
     2  src port                            12  total packets
     3  dst port                            13  total bytes
     4  direction (1 = rightward)           14  src port type
     5  connection state code              15  dst port type
     6  duration (s)                        16  bytes per second
     7  protocol code                       17  bytes per packet
     8  src ToS                             18  packets per second
     9  dst ToS                             19  outgoing / incoming bytes
"""

from __future__ import annotations

import hashlib
import ipaddress
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .flows import NO_PORT, RawFlow

FEATURE_NAMES = (
    "src_ip_type",
    "dst_ip_type",
    "src_port",
    "dst_port",
    "direction",
    "conn_state",
    "duration",
    "protocol",
    "src_tos",
    "dst_tos",
    "out_bytes",
    "in_bytes",
    "tot_pkts",
    "tot_bytes",
    "src_port_type",
    "dst_port_type",
    "bytes_per_sec",
    "bytes_per_pkt",
    "pkts_per_sec",
    "out_in_ratio",
)
N_FEATURES = len(FEATURE_NAMES)

DURATION, OUT_BYTES, IN_BYTES, TOT_PKTS = 6, 10, 11, 12
TOT_BYTES, BYTES_PER_SEC, BYTES_PER_PKT, PKTS_PER_SEC, RATIO = 13, 16, 17, 18, 19

MUTABLE = (DURATION, OUT_BYTES, IN_BYTES, TOT_PKTS)
DEPENDENT = (TOT_BYTES, BYTES_PER_SEC, BYTES_PER_PKT, PKTS_PER_SEC, RATIO)

# which derived slots read each mutable slot
DEPENDS_ON = {
    DURATION: (BYTES_PER_SEC, PKTS_PER_SEC),
    OUT_BYTES: (TOT_BYTES, BYTES_PER_SEC, BYTES_PER_PKT, RATIO),
    IN_BYTES: (TOT_BYTES, BYTES_PER_SEC, BYTES_PER_PKT, RATIO),
    TOT_PKTS: (BYTES_PER_PKT, PKTS_PER_SEC),
}

PORT_WELL_KNOWN = 0
PORT_REGISTERED = 1
PORT_DYNAMIC = 2
PORT_NONE = 3

OTHER_CODE = 0

_PRIVATE_NETS = tuple(
    ipaddress.ip_network(n) for n in ("10.0.0.0/8", "172.16.0.0/12", "192.168.0.0/16")
)


def classify_port(port: int) -> int:
    """IANA range of a port number; ``NO_PORT`` gets its own code."""
    if port == NO_PORT:
        return PORT_NONE
    if not 0 <= port <= 65535:
        raise ValueError(f"port {port} outside [0, 65535]")
    if port <= 1023:
        return PORT_WELL_KNOWN
    if port <= 49151:
        return PORT_REGISTERED
    return PORT_DYNAMIC


def ip_type(addr: str) -> int:
    try:
        ip = ipaddress.ip_address(addr)
    except ValueError:
        return 0
    return int(ip.version == 4 and any(ip in net for net in _PRIVATE_NETS))


def direction_flag(token: str) -> int:
    return int(">" in token)


@dataclass(frozen=True)
class FeatureSchema:
    """Frozen categorical code tables; code 0 is the catch-all bucket."""

    protocol_codes: Mapping[str, int] = field(default_factory=dict)
    state_codes: Mapping[str, int] = field(default_factory=dict)
    names: tuple = FEATURE_NAMES
    mutable: tuple = MUTABLE
    dependent: tuple = DEPENDENT

    def __post_init__(self):
        if set(self.mutable) & set(self.dependent):
            raise ValueError("mutable and dependent slots overlap")

    @classmethod
    def from_flows(cls, flows: Iterable[RawFlow]) -> "FeatureSchema":
        protocols, states = set(), set()
        for f in flows:
            protocols.add(f.protocol)
            states.add(f.conn_state)
        return cls(_code_table(protocols), _code_table(states))

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "protocol_codes": dict(sorted(self.protocol_codes.items())),
            "state_codes": dict(sorted(self.state_codes.items())),
            "port_type_codes": {
                "well_known": PORT_WELL_KNOWN,
                "registered": PORT_REGISTERED,
                "dynamic": PORT_DYNAMIC,
                "none": PORT_NONE,
            },
            "other_code": OTHER_CODE,
            "mutable": list(self.mutable),
            "dependent": list(self.dependent),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "FeatureSchema":
        return cls(
            dict(d["protocol_codes"]),
            dict(d["state_codes"]),
            tuple(d["names"]),
            tuple(d["mutable"]),
            tuple(d["dependent"]),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "FeatureSchema":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    @property
    def fingerprint(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()[:16]


def _code_table(tokens) -> dict[str, int]:
    return {tok: i for i, tok in enumerate(sorted(tokens), start=1)}


def recompute_derived(X: np.ndarray) -> np.ndarray:
    """Recompute total bytes, the three rates and the byte ratio.

    Works on a single vector or a 2-D matrix and returns a new array.  A zero
    denominator yields a rate of 0; the ratio falls back to outgoing bytes
    when there are no incoming bytes.
    """
    X = np.array(X, dtype=np.float64, copy=True)
    dur = X[..., DURATION]
    out = X[..., OUT_BYTES]
    inc = X[..., IN_BYTES]
    pkts = X[..., TOT_PKTS]
    tot = out + inc
    X[..., TOT_BYTES] = tot
    X[..., BYTES_PER_SEC] = _safe_div(tot, dur)
    X[..., BYTES_PER_PKT] = _safe_div(tot, pkts)
    X[..., PKTS_PER_SEC] = _safe_div(pkts, dur)
    X[..., RATIO] = np.where(inc == 0, out, _safe_div(out, inc))
    return X


def _safe_div(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    out = np.zeros(np.broadcast(num, den).shape)
    np.divide(num, den, out=out, where=den != 0)
    return out


def extract_features(flow: RawFlow, schema: FeatureSchema,
                     unknown: Counter | None = None) -> np.ndarray:
    """Encode one flow; unknown categorical tokens are tallied in ``unknown``."""
    proto = schema.protocol_codes.get(flow.protocol)
    state = schema.state_codes.get(flow.conn_state)
    if unknown is not None:
        if proto is None:
            unknown["protocol"] += 1
        if state is None:
            unknown["conn_state"] += 1

    v = np.zeros(N_FEATURES)
    v[0] = ip_type(flow.src_addr)
    v[1] = ip_type(flow.dst_addr)
    v[2] = flow.src_port
    v[3] = flow.dst_port
    v[4] = direction_flag(flow.direction)
    v[5] = OTHER_CODE if state is None else state
    v[DURATION] = flow.duration
    v[7] = OTHER_CODE if proto is None else proto
    v[8] = flow.src_tos
    v[9] = flow.dst_tos
    v[OUT_BYTES] = flow.src_bytes
    v[IN_BYTES] = flow.dst_bytes
    v[TOT_PKTS] = flow.tot_pkts
    v[14] = _port_type_or_none(flow.src_port)
    v[15] = _port_type_or_none(flow.dst_port)
    return recompute_derived(v)


def _port_type_or_none(port: int) -> int:
    try:
        return classify_port(port)
    except ValueError:
        return PORT_NONE


def extract_matrix(flows: Iterable[RawFlow], schema: FeatureSchema):
    """Stack feature vectors for many flows; returns ``(X, unknown_counts)``."""
    unknown: Counter = Counter()
    rows = [extract_features(f, schema, unknown) for f in flows]
    if not rows:
        return np.zeros((0, N_FEATURES)), unknown
    return np.vstack(rows), unknown
