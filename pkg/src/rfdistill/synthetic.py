"""Synthetic binetflow traffic for offline runs.

Produces CTU-13-shaped CSV files: a benign population made of common
services, and per-family botnet behaviour (spam, IRC/HTTP command channels,
scanning, ICMP floods, P2P).  Each family also emits a share of flows drawn
from benign profiles, so the classes overlap instead of being perfectly
separable.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .flows import DEFAULT_SCENARIO_FAMILY, FAMILIES, RawFlow

HEADER = ["StartTime", "Dur", "Proto", "SrcAddr", "Sport", "Dir", "DstAddr", "Dport",
          "State", "sTos", "dTos", "TotPkts", "TotBytes", "SrcBytes", "Label"]

# first CTU-13 scenario of each family
FAMILY_SCENARIO = {}
for _sc, _fam in sorted(DEFAULT_SCENARIO_FAMILY.items(), key=lambda kv: int(kv[0])):
    FAMILY_SCENARIO.setdefault(_fam, _sc)


@dataclass(frozen=True)
class Profile:
    """Distribution of one kind of flow.

    Durations and per-packet sizes are log-normal; ``pkts`` is ``(low, high)``
    for a uniform integer draw.
    """

    proto: str
    dports: tuple
    states: tuple
    dur: tuple          # (median seconds, sigma); median 0 means always 0
    pkts: tuple
    src_pp: tuple       # (median bytes per packet sent, sigma)
    dst_pp: tuple       # (median bytes per packet received, sigma); None = one-way
    out_share: float = 0.5
    sport: str = "dynamic"
    dst_net: str = "public"
    direction: str = "<->"
    tos: int = 0


BENIGN_PROFILES = {
    "https": (0.26, Profile("tcp", (443,), ("FSPA_FSPA", "SRPA_FSPA", "FSRPA_FSPA"),
                            (2.0, 1.6), (6, 300), (90, 0.4), (900, 0.5), 0.4)),
    "http": (0.14, Profile("tcp", (80, 8080), ("FSPA_FSPA", "SRPA_SPA", "FSA_FSA"),
                           (1.0, 1.5), (4, 120), (120, 0.5), (700, 0.6), 0.45)),
    "dns": (0.22, Profile("udp", (53,), ("CON", "INT"), (0.02, 1.2), (1, 2),
                          (70, 0.2), (160, 0.4), 0.5, dst_net="local")),
    "ntp": (0.04, Profile("udp", (123,), ("CON",), (0.01, 1.0), (2, 2),
                          (90, 0.01), (90, 0.01), 0.5)),
    "icmp": (0.05, Profile("icmp", (8,), ("ECO", "ECR", "URP"), (0.0, 0.0), (1, 4),
                           (80, 0.3), None, 1.0, sport="icmp", direction="->")),
    "smtp": (0.03, Profile("tcp", (25, 587), ("FSPA_FSPA", "SRPA_FSPA"), (1.5, 1.0),
                           (10, 60), (400, 0.6), (120, 0.4), 0.7)),
    "ssh": (0.03, Profile("tcp", (22,), ("SRPA_SPA", "FSPA_FSPA"), (30.0, 1.5),
                          (20, 2000), (110, 0.4), (130, 0.4), 0.5, tos=16)),
    "p2p": (0.13, Profile("udp", (-1,), ("CON", "INT"), (0.5, 2.0), (1, 40),
                          (200, 0.8), (200, 0.8), 0.5, sport="registered")),
    "netbios": (0.05, Profile("udp", (137, 138), ("INT", "CON"), (0.5, 1.5), (1, 6),
                              (90, 0.2), None, 1.0, sport="same", dst_net="local", direction="->")),
    "tcp_fail": (0.05, Profile("tcp", (443, 80, 993), ("S_", "S_RA", "SR_SA"), (1.5, 1.5),
                               (1, 4), (62, 0.05), (60, 0.05), 0.7)),
}

FAMILY_PROFILES = {
    "Neris": (
        (0.45, Profile("tcp", (25,), ("SRPA_SPA", "FSPA_FSPA", "SPA_SPA"), (3.0, 0.6),
                       (14, 30), (150, 0.25), (80, 0.2), 0.75)),
        (0.25, Profile("tcp", (80,), ("FSPA_FSPA", "SRPA_SPA"), (0.4, 0.5), (5, 9),
                       (95, 0.2), (160, 0.3), 0.55)),
        (0.15, Profile("tcp", (25,), ("S_", "S_RA"), (2.9, 0.2), (2, 3), (62, 0.02),
                       (60, 0.02), 0.7)),
    ),
    "Rbot": (
        (0.40, Profile("icmp", (8,), ("ECO",), (0.0, 0.0), (1, 1), (1066, 0.02), None,
                       1.0, sport="icmp", direction="->")),
        (0.30, Profile("tcp", (445, 139), ("S_", "S_RA", "REJ"), (0.0, 0.0), (1, 2),
                       (62, 0.02), (60, 0.02), 0.9)),
        (0.15, Profile("tcp", (6667,), ("SRPA_SPA", "PA_PA"), (60.0, 0.4), (4, 12),
                       (70, 0.2), (110, 0.2), 0.5)),
    ),
    "Virut": (
        (0.40, Profile("tcp", (65520,), ("SRPA_SPA", "FSPA_FSPA"), (8.0, 0.5), (6, 14),
                       (80, 0.2), (140, 0.3), 0.5)),
        (0.30, Profile("tcp", (25,), ("FSPA_FSPA", "SRPA_SPA"), (2.0, 0.5), (12, 24),
                       (140, 0.3), (70, 0.2), 0.75)),
        (0.15, Profile("tcp", (80,), ("SRPA_SPA",), (0.6, 0.4), (4, 7), (110, 0.2),
                       (300, 0.3), 0.5)),
    ),
    "Menti": (
        (0.55, Profile("tcp", (80, 8080), ("S_RA", "SR_SA", "FSPA_FSPA"), (0.25, 0.3),
                       (3, 6), (75, 0.15), (65, 0.15), 0.6)),
        (0.30, Profile("tcp", (7000, 9000), ("SRPA_SPA",), (5.0, 0.3), (4, 8),
                       (85, 0.15), (95, 0.15), 0.5)),
    ),
    "Murlo": (
        (0.60, Profile("tcp", (445, 139, 135), ("REJ", "S_", "S_RA"), (0.0, 0.0), (1, 2),
                       (62, 0.02), (60, 0.02), 0.95)),
        (0.25, Profile("tcp", (81,), ("FSPA_FSPA",), (1.0, 0.3), (6, 10), (130, 0.2),
                       (520, 0.2), 0.5)),
    ),
    "NSIS.ay": (
        (0.45, Profile("tcp", (80,), ("FSPA_FSPA", "SRPA_FSPA"), (1.2, 0.5), (8, 40),
                       (95, 0.3), (1000, 0.2), 0.35)),
        (0.35, Profile("udp", (-1,), ("CON", "INT"), (0.3, 0.8), (2, 6), (120, 0.3),
                       (120, 0.3), 0.5, sport="registered")),
    ),
}

START = "2011/08/10 09:46:53.047277"
INTERNAL_NET = "147.32.84."
LOCAL_NET = "192.168.1."


def _ip(rng, kind: str) -> str:
    if kind == "local":
        return LOCAL_NET + str(int(rng.integers(1, 255)))
    first = int(rng.choice([23, 46, 66, 74, 89, 104, 151, 173, 195, 212]))
    return f"{first}.{rng.integers(0, 256)}.{rng.integers(0, 256)}.{rng.integers(1, 255)}"


def _lognormal(rng, median: float, sigma: float) -> float:
    if median == 0:
        return 0.0
    return float(median * np.exp(sigma * rng.standard_normal()))


def sample_flow(rng, profile: Profile, src_host: str, label: str, legacy_os: bool = False) -> RawFlow:
    """Draw one flow.  ``legacy_os`` hosts pick ephemeral ports in 1025-5000."""
    pkts = int(rng.integers(profile.pkts[0], profile.pkts[1] + 1))
    state = rng.choice(profile.states).item()
    dst = _ip(rng, profile.dst_net)

    if profile.proto == "icmp":
        # ICMP type/code travel in the port columns as hex
        size = max(40, int(round(pkts * _lognormal(rng, *profile.src_pp))))
        return RawFlow(START, 0.0, "icmp", src_host, 0x0008, profile.direction, dst,
                       int(rng.integers(0, 0xFFFF)), state, 0, 0, pkts, size, size, label)

    dport = int(rng.choice(profile.dports))
    if dport < 0:
        dport = int(rng.integers(1024, 65536))
    if profile.sport == "dynamic":
        if legacy_os or rng.random() < 0.3:
            sport = int(rng.integers(1025, 5001))
        else:
            sport = int(rng.integers(49152, 65536))
    elif profile.sport == "registered":
        sport = int(rng.integers(1024, 49152))
    else:
        sport = dport

    dur = 0.0 if pkts == 1 and profile.proto != "tcp" else round(_lognormal(rng, *profile.dur), 6)
    if profile.dst_pp is None or pkts == 1:
        out_pkts = pkts
    else:
        out_pkts = max(1, min(pkts - 1, int(round(pkts * profile.out_share))))
    in_pkts = pkts - out_pkts
    src_bytes = max(40, int(round(out_pkts * _lognormal(rng, *profile.src_pp))))
    dst_bytes = 0
    if in_pkts and profile.dst_pp is not None:
        dst_bytes = max(40, int(round(in_pkts * _lognormal(rng, *profile.dst_pp))))

    return RawFlow(START, dur, profile.proto, src_host, sport, profile.direction, dst, dport,
                   state, profile.tos, 0, pkts, src_bytes + dst_bytes, src_bytes, label)


def _pick(rng, table):
    weights = np.array([w for w, _ in table], dtype=float)
    return table[int(rng.choice(len(table), p=weights / weights.sum()))][1]


_BENIGN_TABLE = tuple(BENIGN_PROFILES.values())
_BENIGN_LABELS = ("flow=Background-TCP-Established", "flow=Background-UDP-Established",
                  "flow=From-Normal-V42-Stribrka", "flow=To-Background-CVUT-Proxy")


def benign_flows(rng, n: int) -> list[RawFlow]:
    out = []
    for _ in range(n):
        prof = _pick(rng, _BENIGN_TABLE)
        host = INTERNAL_NET + str(int(rng.integers(2, 254)))
        if rng.random() < 0.2:
            host = LOCAL_NET + str(int(rng.integers(2, 254)))
        out.append(sample_flow(rng, prof, host, str(rng.choice(_BENIGN_LABELS))))
    return out


def malicious_flows(rng, family: str, n: int, noise: float = 0.04) -> list[RawFlow]:
    """Botnet flows of one family; a ``noise`` share copies benign behaviour."""
    table = FAMILY_PROFILES[family]
    hosts = [INTERNAL_NET + str(191 + i) for i in range(3)]
    out = []
    for _ in range(n):
        host = str(rng.choice(hosts))
        if rng.random() < noise:
            prof = _pick(rng, _BENIGN_TABLE)
        else:
            prof = _pick(rng, table)
        label = f"flow=From-Botnet-V{rng.integers(40, 55)}-{prof.proto.upper()}-CC"
        out.append(sample_flow(rng, prof, host, label, legacy_os=True))
    return out


def write_binetflow(flows, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        for f in flows:
            w.writerow([
                f.start_time, f"{f.duration:.6f}", f.protocol, f.src_addr,
                _port_text(f.src_port, f.protocol), f.direction, f.dst_addr,
                _port_text(f.dst_port, f.protocol), f.conn_state, f.src_tos, f.dst_tos,
                f.tot_pkts, f.tot_bytes, f.src_bytes, f.label_text,
            ])
    return path


def _port_text(port: int, proto: str) -> str:
    if port < 0:
        return ""
    if proto == "icmp":
        return "0x" + format(port, "04x")
    return str(port)


def generate_corpus(out_dir, n_benign: int = 20000, n_malicious: int = 500,
                    families=FAMILIES, seed: int = 0, noise: float = 0.04):
    """Write one binetflow file per family scenario and return ``[(scenario, path)]``.

    Benign flows are spread evenly over the files, as in real captures.
    """
    rng = np.random.default_rng(seed)
    out_dir = Path(out_dir)
    families = list(families)
    per_file = np.full(len(families), n_benign // len(families))
    per_file[: n_benign % len(families)] += 1
    files = []
    for fam, nb in zip(families, per_file):
        flows = benign_flows(rng, int(nb)) + malicious_flows(rng, fam, n_malicious, noise)
        order = rng.permutation(len(flows))
        scenario = FAMILY_SCENARIO[fam]
        path = write_binetflow([flows[i] for i in order], out_dir / f"capture{scenario}.binetflow")
        files.append((scenario, path))
    return files
