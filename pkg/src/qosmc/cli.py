"""Command-line harness: ``qosmc train``, ``qosmc run`` and ``qosmc report``.

Exit codes: 0 success, 2 usage, 3 infeasible input, 4 missing artifact.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .bler.dataset import TrainingSet, generate_training_set
from .bler.estimator import BlerModel, OracleEstimator, train_estimator
from .channel import NotReadyError
from .config import ConfigError, ScenarioConfig
from .config import load as load_config
from .selector import NoFeasibleClusterError
from .sim import POLICIES, RunMetrics, Simulation

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_MISSING = 0, 2, 3, 4

CSV_COLUMNS = ("policy", "seed", "avg_rate_bps", "avg_latency_s", "reliability", "resource_hz",
               "se_bps_per_hz", "qos_rate_score", "qos_lat_score", "qos_rel_score")
_METRIC_OF_COLUMN = {
    "avg_rate_bps": "avg_rate", "avg_latency_s": "avg_latency", "reliability": "reliability",
    "resource_hz": "resource_hz", "se_bps_per_hz": "spectrum_efficiency",
    "qos_rate_score": "qos_rate_score", "qos_lat_score": "qos_lat_score", "qos_rel_score": "qos_rel_score",
}

log = logging.getLogger("qosmc")


class InfeasibleInput(Exception):
    pass


class MissingArtifact(Exception):
    pass


def fmt(x: float) -> str:
    """Six significant digits, the format used by every numeric output."""
    return f"{float(x):.6g}"


def _round6(x: float) -> float:
    return float(fmt(x)) if math.isfinite(x) else x


# --- train --------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = _config(args.config)
    tc = cfg.training
    seed = tc.seed if args.seed is None else args.seed
    rng = np.random.default_rng(seed)
    if args.dataset:
        path = Path(args.dataset)
        if not path.exists():
            raise MissingArtifact(f"dataset not found: {path}")
        try:
            ts = TrainingSet.read_csv(path)
        except ValueError as exc:
            raise InfeasibleInput(str(exc)) from exc
    else:
        ts = generate_training_set(cfg, rng, positions_per_setting=args.positions)
    if args.save_dataset:
        ts.write_csv(args.save_dataset)
    try:
        result = train_estimator(ts, tc, rng, oracle=cfg.oracle, cqi_thresholds=cfg.cqi_thresholds,
                                 fading=cfg.fading)
    except ValueError as exc:
        raise InfeasibleInput(str(exc)) from exc
    report = result.to_json()
    report["rows"] = len(ts)
    report["seed"] = seed
    result.model.save(args.out, report)
    print(f"trained on {len(ts)} rows; artifacts in {args.out}")
    for k, ev in sorted(result.clusters.items()):
        print(f"  clusters={k:<3d} classifier accuracy {fmt(ev.accuracy)}")
    print(f"  regressor test MAE {fmt(result.report.test_mae)}"
          f" (within 0.05: {fmt(result.report.test_within_005)})")
    return EXIT_OK


# --- run ----------------------------------------------------------------------

def _load_estimator(kind: str, models: str | None, cfg: ScenarioConfig):
    if kind == "oracle":
        return OracleEstimator(cfg.oracle, cfg.fading)
    if models is None:
        raise MissingArtifact("--models is required with the learned estimator")
    try:
        return BlerModel.load(models)
    except NotReadyError as exc:
        raise MissingArtifact(str(exc)) from exc


def _run_one(job) -> tuple[str, int, RunMetrics, list, list]:
    cfg, policy, seed, est_kind, models, audit, events = job
    est = _load_estimator(est_kind, models, cfg)
    sim = Simulation(cfg, policy, seed, estimator=est, audit=audit, record_events=events)
    m = sim.run()
    return policy, seed, m, sim.audit_log, sim.events


def metrics_row(policy: str, seed: int, m: RunMetrics) -> list[str]:
    vals = m.values()
    return [policy, str(seed)] + [fmt(vals[_METRIC_OF_COLUMN[c]]) for c in CSV_COLUMNS[2:]]


def write_metrics_csv(rows: Sequence[Sequence[str]], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    w.writerows(rows)


def _jsonl(records, path: Path) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def cmd_run(args) -> int:
    cfg = _config(args.config)
    if args.fast:
        cfg = cfg.fast()
    if args.duration is not None:
        if not args.duration > 0:
            raise InfeasibleInput("--duration must be positive")
        cfg = replace(cfg, duration_s=args.duration)
    seeds = tuple(args.seeds) if args.seeds else cfg.seeds
    policies = args.policy or list(POLICIES)
    # fail before any work if the estimator cannot be loaded
    _load_estimator(args.estimator, args.models, cfg)
    jobs = [(cfg, p, s, args.estimator, args.models, bool(args.audit_dir), bool(args.events_dir))
            for p in policies for s in seeds]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]

    # single writer: outputs are produced here, in manifest order
    rows = [metrics_row(p, s, m) for p, s, m, _, _ in results]
    if args.out == "-":
        write_metrics_csv(rows, sys.stdout)
    else:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", newline="") as fh:
            write_metrics_csv(rows, fh)
        print(f"wrote {len(rows)} rows to {out}", file=sys.stderr)
    for attr, key in (("audit_dir", 3), ("events_dir", 4)):
        directory = getattr(args, attr)
        if directory:
            d = Path(directory)
            d.mkdir(parents=True, exist_ok=True)
            for res in results:
                _jsonl(res[key], d / f"{res[0]}_seed{res[1]}.jsonl")
    return EXIT_OK


# --- report -------------------------------------------------------------------

def read_metrics_csv(path: str | Path) -> dict[str, list[dict[str, float]]]:
    p = Path(path)
    if not p.exists():
        raise MissingArtifact(f"metrics file not found: {p}")
    with open(p, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise InfeasibleInput(f"{p}: empty input, no header and no rows")
        missing = [c for c in CSV_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise InfeasibleInput(f"{p}: missing columns {missing}")
        by_policy: dict[str, list[dict[str, float]]] = {}
        for row in reader:
            try:
                rec = {c: float(row[c]) for c in CSV_COLUMNS[2:]}
            except (TypeError, ValueError) as exc:
                raise InfeasibleInput(f"{p}: bad numeric value ({exc})") from exc
            by_policy.setdefault(row["policy"], []).append(rec)
    if not by_policy:
        raise InfeasibleInput(f"{p}: empty input, no metric rows")
    return by_policy


def summarize(by_policy: dict[str, list[dict[str, float]]], cfg: ScenarioConfig) -> dict:
    q = cfg.qos
    summary = {}
    for policy in sorted(by_policy):
        rows = by_policy[policy]
        stats = {}
        for c in CSV_COLUMNS[2:]:
            v = np.array([r[c] for r in rows])
            std = float(v.std(ddof=1)) if len(v) > 1 and np.all(np.isfinite(v)) else 0.0
            stats[c] = {"mean": _round6(float(v.mean())), "std": _round6(std)}
        qos_all = [r["qos_rate_score"] == 1 and r["qos_lat_score"] == 1 and r["qos_rel_score"] == 1 for r in rows]
        summary[policy] = {
            "runs": len(rows),
            "metrics": stats,
            "requirements_met": {
                "rate": stats["avg_rate_bps"]["mean"] >= q.rate_req,
                "latency": stats["avg_latency_s"]["mean"] <= q.lat_req,
                "reliability": stats["reliability"]["mean"] >= q.rel_req,
            },
            "qos_success_rate": _round6(float(np.mean(qos_all))),
        }
    if "proposed" in summary:
        summary["_orderings"] = orderings(summary)
    return summary


def orderings(summary: dict) -> dict[str, bool]:
    """The proposed-vs-baseline comparisons on seed-averaged means."""
    mean = lambda p, c: summary[p]["metrics"][c]["mean"]  # noqa: E731
    out = {}
    if "snr" in summary:
        out["proposed_rate_ge_snr"] = mean("proposed", "avg_rate_bps") >= mean("snr", "avg_rate_bps")
        out["proposed_latency_le_snr"] = mean("proposed", "avg_latency_s") <= mean("snr", "avg_latency_s")
    if "lbmc" in summary:
        out["proposed_se_ge_lbmc"] = mean("proposed", "se_bps_per_hz") >= mean("lbmc", "se_bps_per_hz")
        out["proposed_resource_le_lbmc"] = mean("proposed", "resource_hz") <= mean("lbmc", "resource_hz")
    return out


def render_text(summary: dict) -> str:
    buf = io.StringIO()
    for policy, s in summary.items():
        if policy.startswith("_"):
            continue
        label = "lbmc (DRLMC proxy)" if policy == "lbmc" else policy
        buf.write(f"{label}  [{s['runs']} runs]\n")
        for c, st in s["metrics"].items():
            buf.write(f"  {c:<16s} {fmt(st['mean']):>12s} ± {fmt(st['std'])}\n")
        met = s["requirements_met"]
        flags = " ".join(f"{k}={'met' if v else 'NOT met'}" for k, v in met.items())
        buf.write(f"  requirements     {flags}\n")
        buf.write(f"  qos success rate {fmt(s['qos_success_rate'])}\n")
    for name, ok in summary.get("_orderings", {}).items():
        buf.write(f"ordering {name}: {'PASS' if ok else 'FAIL'}\n")
    return buf.getvalue()


def cmd_report(args) -> int:
    cfg = _config(args.config)
    summary = summarize(read_metrics_csv(args.csv), cfg)
    text = json.dumps(summary, indent=1, sort_keys=True)
    if args.format in ("text", "both"):
        sys.stdout.write(render_text(summary))
    if args.format in ("json", "both"):
        sys.stdout.write(text + "\n")
    if args.json:
        Path(args.json).write_text(text + "\n")
    return EXIT_OK


# --- plumbing -----------------------------------------------------------------

def _config(path: str | None) -> ScenarioConfig:
    if path is not None and not Path(path).exists():
        raise MissingArtifact(f"scenario file not found: {path}")
    try:
        return load_config(path)
    except ConfigError as exc:
        raise InfeasibleInput(str(exc)) from exc


def _seed(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("seeds must be non-negative")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qosmc", description="QoS-aware multi-connectivity simulator")
    ap.add_argument("--version", action="version", version=f"qosmc {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    tr = sub.add_parser("train", help="generate oracle data and train the BLER estimator")
    tr.add_argument("--config", help="scenario JSON (default: shipped scenario)")
    tr.add_argument("--out", default="models", help="artifact directory")
    tr.add_argument("--seed", type=_seed)
    tr.add_argument("--positions", type=int, help="trajectories per (numerology, power level)")
    tr.add_argument("--dataset", help="train from this CSV instead of generating data")
    tr.add_argument("--save-dataset", help="also write the training rows to this CSV")
    tr.set_defaults(func=cmd_train)

    rn = sub.add_parser("run", help="simulate policies over seeds and write a metrics CSV")
    rn.add_argument("--config")
    rn.add_argument("--policy", action="append", choices=POLICIES,
                    help="repeatable; default: all policies")
    rn.add_argument("--seeds", type=_seed, nargs="+")
    rn.add_argument("--fast", action="store_true", help="use the short (CI) duration")
    rn.add_argument("--duration", type=float, help="override run length in seconds")
    rn.add_argument("--models", default="models", help="trained estimator directory")
    rn.add_argument("--estimator", choices=("learned", "oracle"), default="learned")
    rn.add_argument("--out", default="metrics.csv", help="CSV path, or - for stdout")
    rn.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    rn.add_argument("--audit-dir", help="write per-epoch decision records (JSON lines) here")
    rn.add_argument("--events-dir", help="write per-TB event logs (JSON lines) here")
    rn.set_defaults(func=cmd_run)

    rp = sub.add_parser("report", help="summarise a metrics CSV")
    rp.add_argument("csv")
    rp.add_argument("--config", help="scenario whose QoS requirements are checked")
    rp.add_argument("--format", choices=("text", "json", "both"), default="text")
    rp.add_argument("--json", help="also write the JSON summary to this path")
    rp.set_defaults(func=cmd_report)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with code 2
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if getattr(args, "jobs", 1) < 1:
        parser.print_usage(sys.stderr)
        print("qosmc: error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except MissingArtifact as exc:
        print(f"qosmc: missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (InfeasibleInput, NoFeasibleClusterError, ConfigError) as exc:
        print(f"qosmc: infeasible input: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
