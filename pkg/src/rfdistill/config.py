"""Run configuration: one YAML file, overridable from the command line.

Example::

    seed: 0
    out_dir: runs/demo
    data:
      - {scenario: "1", path: captures/capture20110810.binetflow}
      - {scenario: "3", path: captures/capture20110812.binetflow}
    schema: null              # column map (mapping or key=value file)
    scenario_family: null     # scenario -> family (mapping or key=value file)
    families: [Neris, Rbot, Virut, Menti, Murlo, NSIS.ay]
    plan: {benign_ratio: 20, train_fraction: 0.8, retrain_fraction: 0.1, max_malicious: null}
    undistilled: {n_estimators: 763}
    condenser: {n_estimators: 894}
    receiver: {n_estimators: 1352}

Relative paths resolve against the directory holding the config file.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from . import forest
from .evaluation import DetectorConfigs
from .flows import EXCLUDED_FAMILIES, FAMILIES, load_key_value_file


class ConfigError(ValueError):
    """Invalid configuration; ``missing`` lists unresolvable paths."""

    def __init__(self, msg, missing=()):
        super().__init__(msg)
        self.missing = list(missing)


PLAN_KEYS = ("benign_ratio", "train_fraction", "retrain_fraction")


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: Path = Path("rfdistill-out")
    data: list = field(default_factory=list)       # [(scenario, Path)]
    schema: dict | None = None
    scenario_family: dict | None = None
    families: tuple = FAMILIES
    plan: dict = field(default_factory=dict)
    max_malicious: int | None = None
    detectors: DetectorConfigs = field(default_factory=DetectorConfigs)

    def plan_args(self) -> dict:
        return {k: self.plan[k] for k in PLAN_KEYS if k in self.plan}


def parse_families(value) -> tuple:
    if value is None:
        return FAMILIES
    items = value.split(",") if isinstance(value, str) else list(value)
    items = [str(f).strip() for f in items if str(f).strip()]
    for f in items:
        if f in EXCLUDED_FAMILIES:
            raise ConfigError(f"family {f} is excluded from all experiments")
        if f not in FAMILIES:
            raise ConfigError(f"unknown family {f!r}; choose from {', '.join(FAMILIES)}")
    if not items:
        raise ConfigError("no families selected")
    return tuple(f for f in FAMILIES if f in items)


def _mapping(value, base: Path, what: str):
    """A mapping given inline or as a key=value file path."""
    if value is None or isinstance(value, dict):
        return None if value is None else {str(k): str(v) for k, v in value.items()}
    path = _resolve(value, base)
    if not path.is_file():
        raise ConfigError(f"{what} file not found: {path}", [path])
    return load_key_value_file(path)


def _resolve(p, base: Path) -> Path:
    p = Path(p)
    return p if p.is_absolute() else base / p


def _train_config(block, default: forest.TrainConfig, name: str) -> forest.TrainConfig:
    if not block:
        return default
    known = {f.name for f in fields(forest.TrainConfig)}
    unknown = set(block) - known
    if unknown:
        raise ConfigError(f"{name}: unknown keys {sorted(unknown)}")
    try:
        return default.replace(**block)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from None


def load_config(path=None, *, seed=None, out_dir=None, families=None, schema=None,
                scenario_family=None, data=None) -> RunConfig:
    """Read ``path`` (optional) and apply command-line overrides."""
    raw, base = {}, Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}", [path])
        raw = yaml.safe_load(path.read_text()) or {}
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        base = path.resolve().parent

    cfg = RunConfig()
    cfg.seed = int(seed if seed is not None else raw.get("seed", 0))
    if out_dir is not None:
        cfg.out_dir = Path(out_dir)
    elif "out_dir" in raw:
        cfg.out_dir = _resolve(raw["out_dir"], base)
    cfg.families = parse_families(families if families is not None else raw.get("families"))

    if data is not None:
        entries = [(s, Path(p)) for s, p in data]
    else:
        entries = []
        for item in raw.get("data", []) or []:
            if not isinstance(item, dict) or "path" not in item or "scenario" not in item:
                raise ConfigError("each data entry needs 'scenario' and 'path'")
            entries.append((str(item["scenario"]), _resolve(item["path"], base)))
    cfg.data = entries

    cfg.schema = _mapping(schema if schema is not None else raw.get("schema"), base, "schema")
    cfg.scenario_family = _mapping(
        scenario_family if scenario_family is not None else raw.get("scenario_family"),
        base, "scenario map")

    plan = dict(raw.get("plan") or {})
    cfg.max_malicious = plan.pop("max_malicious", None)
    unknown = set(plan) - set(PLAN_KEYS)
    if unknown:
        raise ConfigError(f"plan: unknown keys {sorted(unknown)}")
    cfg.plan = plan

    cfg.detectors = DetectorConfigs(
        undistilled=_train_config(raw.get("undistilled"), forest.UNDISTILLED, "undistilled"),
        condenser=_train_config(raw.get("condenser"), forest.CONDENSER, "condenser"),
        receiver=_train_config(raw.get("receiver"), forest.RECEIVER, "receiver"),
    )
    if cfg.detectors.undistilled.criterion != "gini" or cfg.detectors.condenser.criterion != "gini":
        raise ConfigError("undistilled and condenser forests must use criterion gini")
    if cfg.detectors.receiver.criterion != "mse":
        raise ConfigError("receiver forest must use criterion mse")
    return cfg


def check_data_paths(cfg: RunConfig) -> None:
    missing = [p for _, p in cfg.data if not Path(p).is_file()]
    if missing:
        raise ConfigError("flow file not found: " + ", ".join(map(str, missing)), missing)
