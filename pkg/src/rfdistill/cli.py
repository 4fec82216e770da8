"""rfdistill command line: ingest -> train -> adv-gen -> evaluate -> report.

Everything lands under ``--out-dir`` with stable names::

    store/flows.zip            feature columns per partition
    store/schema.json          categorical code tables
    store/ingest_report.json   row accounting
    splits/<family>.zip        per-family training/test split
    models/<family>__<detector>.bundle
    adversarial/<family>__<group>__<step>.{csv,json}
    reports/*.csv, reports/*.json
    timings/<detector>.csv     wall-clock training times (not deterministic)
    figures/*.png

Exit codes: 0 success, 1 processing error, 2 bad usage or missing input.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import evaluation as ev
from . import forest
from .adversarial import GROUP_BY_ID, GROUPS, STEP_BY_ID, STEPS, AdversarialDataset, generate_all
from .config import ConfigError, RunConfig, check_data_paths, load_config
from .distillation import DistilledDetector, UndistilledDetector, load_detector
from .features import FEATURE_NAMES, FeatureSchema, extract_matrix
from .flows import SchemaError, ingest

logger = logging.getLogger("rfdistill")

REPORTS = ("normal", "adversarial", "retraining", "feature-removal")
REPORT_FILES = {
    "normal": ("normal.csv",),
    "adversarial": ("adversarial_grid.csv", "adversarial_summary.json"),
    "retraining": ("retraining.csv",),
    "feature-removal": ("feature_removal.csv", "feature_removal_by_family.csv"),
}


class CliError(Exception):
    def __init__(self, msg, code=1):
        super().__init__(msg)
        self.code = code


def slug(family: str) -> str:
    return family.replace(".", "_")


# -- small io helpers ----------------------------------------------------

def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def write_csv(path, rows, columns) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in columns])
    path.write_text(buf.getvalue())
    return path


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def _require(paths):
    missing = [p for p in paths if not Path(p).exists()]
    if missing:
        shown = "\n  ".join(map(str, missing[:20]))
        more = f"\n  ... and {len(missing) - 20} more" if len(missing) > 20 else ""
        raise CliError(f"missing inputs ({len(missing)}):\n  {shown}{more}", 2)


# -- flow store ----------------------------------------------------------

def store_paths(out: Path):
    d = out / "store"
    return d / "flows.zip", d / "schema.json", d / "ingest_report.json"


def write_store(path, partitions: dict) -> None:
    """One array per (partition, feature column)."""
    arrays = {}
    for part, X in partitions.items():
        X = np.asarray(X, dtype=np.float64).reshape(-1, len(FEATURE_NAMES))
        for j, name in enumerate(FEATURE_NAMES):
            arrays[f"{part}/{name}"] = X[:, j]
    header = {"format": "rfdistill-store", "partitions": sorted(partitions),
              "columns": list(FEATURE_NAMES)}
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(forest.write_archive({"store.json": forest.json_bytes(header)}, arrays))


def read_store(path) -> dict:
    files, arrays = forest.read_archive(Path(path).read_bytes())
    header = json.loads(files["store.json"])
    return {part: np.column_stack([arrays[f"{part}/{c}"] for c in header["columns"]])
            for part in header["partitions"]}


def load_store(cfg: RunConfig):
    flows_zip, schema_json, _ = store_paths(cfg.out_dir)
    _require([flows_zip, schema_json])
    parts = read_store(flows_zip)
    return FeatureSchema.load(schema_json), parts


# -- shared steps ------------------------------------------------------------

def plan_for(cfg: RunConfig, family: str) -> ev.ExperimentPlan:
    return ev.ExperimentPlan(family, cfg.seed, **cfg.plan_args())


def cap_family(cfg: RunConfig, family: str, X):
    if cfg.max_malicious is None or len(X) <= cfg.max_malicious:
        return X
    rng = np.random.default_rng(ev.sub_seed(cfg.seed, family, "cap"))
    return X[np.sort(rng.choice(len(X), size=cfg.max_malicious, replace=False))]


def training_sets(cfg: RunConfig, parts: dict) -> dict:
    """Rebuild (deterministically) and persist each selected family's split."""
    out = {}
    for family in cfg.families:
        X = parts.get(family)
        if X is None or len(X) == 0:
            logger.warning("%s: no malicious flows in the store, skipped", family)
            continue
        try:
            sets = ev.build_training_sets(parts["benign"], cap_family(cfg, family, X),
                                          plan_for(cfg, family))
        except ValueError as exc:
            raise CliError(str(exc)) from None
        data = forest.write_archive({}, sets.arrays())
        path = cfg.out_dir / "splits" / f"{slug(family)}.zip"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
        out[family] = sets
    if not out:
        raise CliError("none of the selected families has malicious flows")
    return out


def model_path(cfg, family, detector) -> Path:
    return cfg.out_dir / "models" / f"{slug(family)}__{detector}.bundle"


def adv_path(cfg, family, group, step) -> Path:
    return cfg.out_dir / "adversarial" / f"{slug(family)}__{group}__{step}.csv"


# -- commands ------------------------------------------------------------

def cmd_ingest(cfg: RunConfig, args) -> int:
    if not cfg.data:
        raise CliError("no flow files given (config 'data' or --data)", 2)
    try:
        check_data_paths(cfg)
    except ConfigError as exc:
        raise CliError(str(exc), 2) from None
    try:
        res = ingest(cfg.data, cfg.schema, cfg.scenario_family)
    except SchemaError as exc:
        raise CliError(f"schema error: {exc}") from None
    except OSError as exc:
        raise CliError(f"cannot read flows: {exc}") from None

    p = res.partition
    everything = list(p.benign) + [f for flows in p.families.values() for f in flows]
    schema = FeatureSchema.from_flows(everything)
    parts = {name: extract_matrix(flows, schema)[0]
             for name, flows in [("benign", p.benign), *sorted(p.families.items())]}

    flows_zip, schema_json, report_json = store_paths(cfg.out_dir)
    write_store(flows_zip, parts)
    schema.save(schema_json)
    report = {
        "counts": res.counts(),
        "files": [{"scenario": s, "path": str(path), "rows": r.rows, "errors": r.n_errors,
                   "first_errors": [f"line {ln}: {msg}" for ln, msg in r.errors[:10]]}
                  for (s, path), r in zip(cfg.data, res.reports)],
        "label_errors": dict(sorted(res.label_errors.items())),
        "schema_fingerprint": schema.fingerprint,
    }
    write_json(report_json, report)
    c = res.counts()
    print(f"rows\t{c['rows']}")
    print(f"benign\t{c['benign']}")
    for fam, n in c["malicious"].items():
        print(f"malicious:{fam}\t{n}")
    print(f"excluded\t{c['excluded']}")
    print(f"parse_errors\t{c['parse_errors']}")
    print(f"unlabeled\t{c['unlabeled']}")
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    schema, parts = load_store(cfg)
    fp = schema.fingerprint
    sets = training_sets(cfg, parts)
    kinds = [ev.UNDISTILLED, ev.DISTILLED] if args.mode == "all" else [args.mode]
    d = cfg.detectors
    for kind in kinds:
        timing_rows = []
        for family, s in sets.items():
            plan = plan_for(cfg, family)
            t0 = time.perf_counter()
            if kind == ev.UNDISTILLED:
                det = ev.train_undistilled(s, d.undistilled, plan, fp)
            else:
                det = ev.train_distilled(s, d.condenser, d.receiver, plan, fp)
            seconds = time.perf_counter() - t0
            path = model_path(cfg, family, kind)
            path.parent.mkdir(parents=True, exist_ok=True)
            det.save(path)
            timing_rows.append({"family": family, "detector": kind, "seconds": round(seconds, 3)})
            logger.info("%s %s trained in %.1fs -> %s", family, kind, seconds, path)
            print(f"{family}\t{kind}\t{path}")
        write_csv(cfg.out_dir / "timings" / f"{kind}.csv", timing_rows,
                  ["family", "detector", "seconds"])
    return 0


def _select(ids, table, what):
    if ids is None:
        return list(table.values())
    out = []
    for i in ids.split(","):
        i = i.strip()
        if i not in table:
            raise CliError(f"unknown {what} {i!r}; choose from {', '.join(table)}", 2)
        out.append(table[i])
    return out


def cmd_adv_gen(cfg: RunConfig, args) -> int:
    _, parts = load_store(cfg)
    sets = training_sets(cfg, parts)
    groups = _select(args.groups, GROUP_BY_ID, "group")
    steps = _select(args.steps, STEP_BY_ID, "step")
    datasets = generate_all({f: s.X_test_malicious for f, s in sets.items()}, groups, steps)
    index = []
    for ds in datasets:
        path = ds.save(cfg.out_dir / "adversarial")
        index.append({"family": ds.family, "group": ds.group.id, "step": ds.step.id,
                      "n_samples": len(ds.samples), "file": path.name})
    write_csv(cfg.out_dir / "adversarial" / "index.csv", index,
              ["family", "group", "step", "n_samples", "file"])
    print(f"datasets\t{len(datasets)}")
    for f in sets:
        print(f"{f}\t{sum(ds.family == f for ds in datasets)}")
    return 0


def _load_datasets(cfg, families):
    return [AdversarialDataset.load(adv_path(cfg, f, g.id, s.id))
            for g in GROUPS for s in STEPS for f in families]


def cmd_evaluate(cfg: RunConfig, args) -> int:
    reports = parse_reports(args.reports)
    schema, parts = load_store(cfg)
    fp = schema.fingerprint
    families = [f for f in cfg.families if len(parts.get(f, ())) > 0]

    # enumerate every missing input before doing any work
    needed = []
    for f in families:
        needed += [model_path(cfg, f, ev.UNDISTILLED), model_path(cfg, f, ev.DISTILLED)]
    if {"adversarial", "retraining"} & set(reports):
        needed += [adv_path(cfg, f, g.id, s.id) for g in GROUPS for s in STEPS for f in families]
    _require(needed)

    sets = training_sets(cfg, parts)
    base = {f: load_detector(model_path(cfg, f, ev.UNDISTILLED)) for f in sets}
    dist = {f: load_detector(model_path(cfg, f, ev.DISTILLED)) for f in sets}
    for f in sets:
        if not isinstance(base[f], UndistilledDetector) or not isinstance(dist[f], DistilledDetector):
            raise CliError(f"{f}: model bundles have the wrong detector kind")
        if base[f].schema_fingerprint != fp or dist[f].schema_fingerprint != fp:
            raise CliError(f"{f}: models were trained on a different feature schema; retrain")
    datasets = _load_datasets(cfg, list(sets)) if {"adversarial", "retraining"} & set(reports) else []
    rdir = cfg.out_dir / "reports"
    written = []

    if "normal" in reports:
        rows = []
        for f, s in sets.items():
            rows.append(ev.evaluate_normal(base[f], s, ev.UNDISTILLED, fp))
            rows.append(ev.evaluate_normal(dist[f], s, ev.DISTILLED, fp))
        table = [r.as_row() for r in rows] + ev.average_rows(rows, [ev.UNDISTILLED, ev.DISTILLED])
        written.append(write_csv(rdir / "normal.csv", table,
                                 ["family", "detector", "f1", "precision", "recall"]))

    if "adversarial" in reports:
        dets = {f: {ev.UNDISTILLED: base[f], ev.DISTILLED: dist[f]} for f in sets}
        try:
            cells = ev.run_adversarial_grid(dets, datasets, [ev.UNDISTILLED, ev.DISTILLED])
        except ev.MissingCellError as exc:
            raise CliError(str(exc)) from None
        written.append(write_csv(rdir / "adversarial_grid.csv", [c.as_row() for c in cells],
                                 ["family", "group", "step", "detector", "detected", "n",
                                  "detection_rate"]))
        written.append(write_json(rdir / "adversarial_summary.json", ev.summarize_grid(cells)))

    if "retraining" in reports:
        rows, retrained, _ = ev.adversarial_retraining_baseline(
            sets, datasets, cfg.detectors, cfg.seed, base, dist, fp, cfg.plan_args())
        for f, det in retrained.items():
            det.save(model_path(cfg, f, ev.RETRAINED))
        written.append(write_csv(rdir / "retraining.csv", rows,
                                 ["detector", "recall_normal", "recall_adversarial"]))

    if "feature-removal" in reports:
        rows, removed, per_family = ev.feature_removal_baseline(
            sets, cfg.detectors, cfg.seed, base, dist, fp, cfg.plan_args())
        for f, det in removed.items():
            model_path(cfg, f, ev.FEATURE_REMOVED).write_bytes(det.to_bytes())
        written.append(write_csv(rdir / "feature_removal.csv", rows,
                                 ["detector", "f1", "precision", "recall"]))
        written.append(write_csv(rdir / "feature_removal_by_family.csv",
                                 [r.as_row() for r in per_family],
                                 ["family", "detector", "f1", "precision", "recall"]))
    for p in written:
        print(p)
    return 0


def parse_reports(value) -> list[str]:
    if value is None:
        return list(REPORTS)
    out = [r.strip() for r in value.split(",") if r.strip()]
    bad = [r for r in out if r not in REPORTS]
    if bad or not out:
        raise CliError(f"unknown report(s) {bad}; choose from {', '.join(REPORTS)}", 2)
    return [r for r in REPORTS if r in out]


LABEL_COLUMNS = ("family", "detector", "group", "step")


def _fmt(column, v):
    if column in LABEL_COLUMNS or v in ("", None):
        return "" if v is None else str(v)
    return f"{float(v):.4f}"


def _print_table(title, rows, columns, out):
    """Tab-delimited table preceded by a ``# title`` line."""
    out.write(f"# {title}\n")
    out.write("\t".join(columns) + "\n")
    for r in rows:
        out.write("\t".join(_fmt(c, r.get(c)) for c in columns) + "\n")
    out.write("\n")


def cmd_report(cfg: RunConfig, args) -> int:
    from . import plotting

    rdir = cfg.out_dir / "reports"
    fdir = cfg.out_dir / "figures"
    present = [r for r in REPORTS if all((rdir / f).exists() for f in REPORT_FILES[r])]
    wanted = parse_reports(args.reports) if args.reports else present
    _require([rdir / f for r in wanted for f in REPORT_FILES[r]])
    if not wanted:
        raise CliError(f"no reports found under {rdir}; run evaluate first", 2)
    out = sys.stdout
    figures = []
    if "normal" in wanted:
        rows = read_csv(rdir / "normal.csv")
        _print_table("normal traffic", rows, ["family", "detector", "f1", "precision", "recall"], out)
        figures.append(plotting.normal_chart(rows, fdir / "normal_metrics.png"))
    if "adversarial" in wanted:
        summary = json.loads((rdir / "adversarial_summary.json").read_text())
        dets = plotting.detector_order(summary)
        order = {"by_family": summary["families"], "by_group": [g.id for g in GROUPS],
                 "by_step": [s.id for s in STEPS]}
        for key, label in (("by_family", "family"), ("by_group", "group"), ("by_step", "step")):
            cats = [c for c in order[key] if c in summary[key][dets[0]]]
            rows = [{label: c, **{d: summary[key][d][c] for d in dets}} for c in cats]
            _print_table(f"adversarial detection rate by {label}", rows, [label, *dets], out)
        rows = [{"detector": d, "overall": summary["overall"][d],
                 "step_spread": summary["step_spread"][d]} for d in dets]
        _print_table("adversarial overall", rows, ["detector", "overall", "step_spread"], out)
        figures += plotting.render_all(summary, fdir)
    if "retraining" in wanted:
        _print_table("adversarial retraining", read_csv(rdir / "retraining.csv"),
                     ["detector", "recall_normal", "recall_adversarial"], out)
    if "feature-removal" in wanted:
        _print_table("feature removal", read_csv(rdir / "feature_removal.csv"),
                     ["detector", "f1", "precision", "recall"], out)
    for p in figures:
        out.write(f"figure\t{p}\n")
    return 0


def cmd_synth(cfg: RunConfig, args) -> int:
    """Write a synthetic flow corpus plus a config that points at it."""
    from .synthetic import generate_corpus

    out = Path(args.out_dir or "synthetic")
    files = generate_corpus(out / "flows", n_benign=args.n_benign, n_malicious=args.n_malicious,
                            families=cfg.families, seed=cfg.seed, noise=args.noise)
    conf = {
        "seed": cfg.seed,
        "out_dir": "run",
        "families": list(cfg.families),
        "data": [{"scenario": s, "path": str(Path(p).relative_to(out))} for s, p in files],
        "undistilled": {"n_estimators": args.trees[0]},
        "condenser": {"n_estimators": args.trees[1]},
        "receiver": {"n_estimators": args.trees[2]},
    }
    (out / "config.yaml").write_text(yaml.safe_dump(conf, sort_keys=False))
    print(out / "config.yaml")
    return 0


# -- argument parsing ------------------------------------------------------

def _trees(text):
    parts = [int(x) for x in text.split(",")]
    if len(parts) != 3 or min(parts) < 1:
        raise argparse.ArgumentTypeError("expected three positive integers U,C,R")
    return parts


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int, help="global seed (overrides config)")
    common.add_argument("--families", help="comma-separated botnet families")
    common.add_argument("--out-dir", help="output directory (overrides config)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="rfdistill",
                                description="Distilled random-forest botnet detection experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", parents=[common], help="parse and label flow files")
    s.add_argument("--data", action="append", metavar="SCENARIO=PATH",
                   help="flow file with its scenario id (repeatable, overrides config)")
    s.add_argument("--schema", help="key=value file mapping fields to column headers")
    s.add_argument("--scenario-family", help="key=value file mapping scenarios to families")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("train", parents=[common], help="train detectors per family")
    s.add_argument("--mode", choices=["distilled", "undistilled", "all"], default="all")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("adv-gen", parents=[common], help="generate adversarial datasets")
    s.add_argument("--groups", help="comma-separated feature groups (default all 15)")
    s.add_argument("--steps", help="comma-separated increment steps (default I..IX)")
    s.set_defaults(func=cmd_adv_gen)

    s = sub.add_parser("evaluate", parents=[common], help="compute report tables")
    s.add_argument("--reports", help=f"comma-separated subset of {','.join(REPORTS)}")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("report", parents=[common], help="print tables and render figures")
    s.add_argument("--reports", help=f"comma-separated subset of {','.join(REPORTS)}")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic flow corpus")
    s.add_argument("--n-benign", type=int, default=40000)
    s.add_argument("--n-malicious", type=int, default=300)
    s.add_argument("--noise", type=float, default=0.04)
    s.add_argument("--trees", type=_trees, default=[100, 100, 100], metavar="U,C,R",
                   help="estimator counts written to the config")
    s.set_defaults(func=cmd_synth)
    return p


def _parse_data(items):
    if items is None:
        return None
    out = []
    for item in items:
        scenario, sep, path = item.partition("=")
        if not sep or not scenario or not path:
            raise CliError(f"--data expects SCENARIO=PATH, got {item!r}", 2)
        out.append((scenario, Path(path)))
    return out


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(
            args.config, seed=args.seed, out_dir=args.out_dir if args.command != "synth" else None,
            families=args.families,
            schema=getattr(args, "schema", None),
            scenario_family=getattr(args, "scenario_family", None),
            data=_parse_data(getattr(args, "data", None)),
        )
        return args.func(cfg, args)
    except ConfigError as exc:
        print(f"rfdistill: error: {exc}", file=sys.stderr)
        return 2
    except CliError as exc:
        print(f"rfdistill: error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
