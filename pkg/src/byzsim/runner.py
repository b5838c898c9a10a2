"""Execute an experiment plan and write the CSV artifacts.

Files written to the plan's output directory:

* ``run_<id>.csv`` per run: iteration, epoch, worst_acc, mean_acc, train_ms, agg_ms
* ``summary.csv``: one row per run with its final worst accuracy
* ``timing.csv``: mean per-node, per-iteration training/aggregation time by rule
"""
from __future__ import annotations

import csv
import io
import logging
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .config import ExperimentPlan, RunSpec
from .errors import ByzSimError
from .simulator import RunRecord, Simulation

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
RUN_COLUMNS = ("iteration", "epoch", "worst_acc", "mean_acc", "train_ms", "agg_ms")
SUMMARY_COLUMNS = ("run_id", "n_benign", "conn_ratio", "byz_ratio", "rule", "attack", "seed",
                   "final_worst_acc")
TIMING_COLUMNS = ("rule", "mean_train_ms", "mean_agg_ms")


def fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    return buf.getvalue()


def write_atomic(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


@dataclass
class RunResult:
    spec: RunSpec
    record: RunRecord | None
    byz_ratio: float
    error: str | None = None


def run_csv(record: RunRecord) -> str:
    rows = [(p.iteration, p.epoch, p.worst, p.mean, p.train_ms, p.agg_ms) for p in record.points]
    return _csv_text(RUN_COLUMNS, rows)


def execute_one(spec: RunSpec, out: Path, save_topology: bool = False) -> RunResult:
    cfg = spec.config
    if cfg.n_byzantine is not None:
        byz_ratio = cfg.n_byzantine / (cfg.n_benign + cfg.n_byzantine)
    else:
        byz_ratio = cfg.byzantine_ratio
    try:
        sim = Simulation(cfg)
        if save_topology:
            sim.topology.save_edgelist(out / f"topology_{spec.run_id}.txt")
        record = sim.run()
    except ByzSimError as exc:
        return RunResult(spec, None, byz_ratio, f"{type(exc).__name__}: {exc}")
    write_atomic(out / f"run_{spec.run_id}.csv", run_csv(record))
    return RunResult(spec, record, byz_ratio)


def _threads() -> int:
    raw = os.environ.get("BYZSIM_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        log.warning("ignoring non-integer BYZSIM_THREADS=%r", raw)
        return 1


def execute(plan: ExperimentPlan, save_topology: bool = False) -> list[RunResult]:
    """Run every point of ``plan``; failed runs are reported, not raised."""
    out = Path(plan.out)
    out.mkdir(parents=True, exist_ok=True)
    specs = plan.runs()
    workers = min(_threads(), len(specs)) or 1
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(execute_one, specs, [out] * len(specs),
                                    [save_topology] * len(specs)))
    else:
        results = [execute_one(s, out, save_topology) for s in specs]

    summary = []
    for r in results:
        cfg = r.spec.config
        final = r.record.final.worst if r.record else "error"
        summary.append((r.spec.run_id, cfg.n_benign, cfg.connection_ratio, r.byz_ratio,
                        cfg.rule, cfg.attack, cfg.seed, final))
    write_atomic(out / "summary.csv", _csv_text(SUMMARY_COLUMNS, summary))

    totals: dict[str, list[float]] = {}
    for r in results:
        acc = totals.setdefault(r.spec.config.rule, [0.0, 0.0, 0])
        if r.record is not None:
            acc[0] += r.record.total_train_ms
            acc[1] += r.record.total_agg_ms
            acc[2] += r.record.node_iterations
    timing = [(rule, t / n if n else 0.0, a / n if n else 0.0)
              for rule, (t, a, n) in totals.items()]
    write_atomic(out / "timing.csv", _csv_text(TIMING_COLUMNS, timing))
    return results
