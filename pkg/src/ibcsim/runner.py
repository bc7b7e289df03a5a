"""Run orchestration: execute scenarios, write run directories, build
reports and aggregate sweeps."""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional

from ibcsim import analysis as A
from ibcsim.chain import TRANSFER
from ibcsim.config import SweepSpec, scenario_document, scenario_from_dict
from ibcsim.relayer import REDUNDANT_PACKET, RelayLog
from ibcsim.scenario import RunResult, Scenario, run_scenario

logger = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "IBCSIM_OUTPUT_ROOT"

SWEEP_METRICS = ("throughput_tfps", "committed_tps", "submitted_pct", "completion_latency_s",
                 "completed", "redundant_errors")


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def lifecycles_of(result: RunResult) -> dict[int, A.TransferLifecycle]:
    events = A.ingest(result.relay_log.records,
                      {result.source.chain_id: result.source.packet_log,
                       result.dest.chain_id: result.dest.packet_log},
                      result.driver.records)
    return A.build_lifecycles(events, result.source.chain_id)


def window_end_ms(result: RunResult) -> int:
    """End of the measurement window: commit of the last workload block, or
    the last block produced if the run stopped earlier."""
    blocks = result.source.blocks
    n = min(result.scenario.workload.duration_blocks, len(blocks))
    if result.scenario.workload.rate_driven and n:
        return blocks[n - 1].timestamp
    return blocks[-1].timestamp if blocks else result.engine.now


def build_report(result: RunResult) -> dict:
    sc = result.scenario
    lcs = lifecycles_of(result)
    events = A.ingest(result.relay_log.records)
    end = window_end_ms(result)
    tfps = A.throughput(lcs, 0, end) if end > 0 else 0.0
    hist = A.classify(lcs, result.driver.requested, result.dest.height)
    src_ibc = result.source.ibc
    acked = src_ibc.acknowledged[sc.source_channel]
    errors = A.error_counts(events)
    n_win = min(sc.workload.duration_blocks, len(result.source.blocks))
    win_blocks = result.source.blocks[:n_win]
    committed = sum(b.msg_counts[TRANSFER] for b in win_blocks)
    committed_tps = committed / (win_blocks[-1].timestamp / 1000.0) if win_blocks else 0.0
    doc = {
        "scenario": sc.name,
        "scenario_digest": sc.digest(),
        "seed": sc.seed,
        "trace_hash": result.trace_hash,
        "sim_end_ms": result.engine.now,
        "window_end_ms": end,
        "requested": result.driver.requested,
        "submitted": result.driver.accepted,
        "submitted_pct": 100.0 * result.driver.accepted / result.driver.requested
        if result.driver.requested else 0.0,
        "committed_in_window": committed,
        "committed_tps": committed_tps,
        "throughput_tfps": tfps,
        "status": hist,
        "errors": errors,
        "redundant_errors": sum(e.get(REDUNDANT_PACKET, 0) for e in errors.values()),
        "conservation_ok": result.conservation_ok(),
        "completed": hist[A.COMPLETED],
        "acknowledged_on_chain": acked,
        "timed_out_on_chain": src_ibc.timed_out[sc.source_channel],
        "block_intervals_ms": {c.chain_id: [b.interval_ms for b in c.blocks]
                               for c in (result.source, result.dest)},
    }
    try:
        bd = A.latency_breakdown(lcs)
        doc["breakdown"] = bd.to_dict()
        doc["completion_latency_s"] = bd.last_completion_ms / 1000.0
    except A.AnalysisError:
        doc["breakdown"] = None
        doc["completion_latency_s"] = None
    return doc


def write_run(result: RunResult, out_dir: Path) -> dict:
    """Write logs, the scenario echo and the report into ``out_dir``."""
    out_dir.mkdir(parents=True, exist_ok=True)
    sc = result.scenario
    A.write_json(out_dir / "scenario.json", scenario_document(sc))
    result.relay_log.write(out_dir / "relay_log.tsv")
    result.driver.write_log(out_dir / "workload_log.tsv")
    for chain in (result.source, result.dest):
        with open(out_dir / f"blocks-{chain.chain_id}.jsonl", "w") as fh:
            for rec in chain.block_log():
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        A.write_csv(out_dir / f"packets-{chain.chain_id}.csv",
                    ("time_ms", "height", "kind", "packet_seq", "timeout_height", "origin",
                     "tx_hash"), chain.packet_log)
    if sc.record_trace:
        result.engine.write_trace(out_dir / "trace.tsv")
    report = build_report(result)
    A.write_json(out_dir / "report.json", report)
    lcs = lifecycles_of(result)
    A.write_csv(out_dir / "completion_curve.csv", ("time_ms", "completed"),
                A.completion_curve(lcs))
    A.write_csv(out_dir / "block_intervals.csv",
                ("chain_id", "height", "timestamp_ms", "interval_ms", "tx_count", "msgs"),
                [(c.chain_id, b.height, b.timestamp, b.interval_ms, len(b.txs), b.n_msgs)
                 for c in (result.source, result.dest) for b in c.blocks])
    if report["breakdown"]:
        bd = report["breakdown"]
        A.write_csv(out_dir / "step_breakdown.csv", ("step", "duration_ms", "percent"),
                    [(s, bd["step_ms"][s], bd["step_pct"][s]) for s in bd["step_ms"]])
    return report


def run_to_dir(sc: Scenario, out_dir: Optional[Path] = None) -> dict:
    out_dir = out_dir or output_root() / sc.name
    return write_run(run_scenario(sc), Path(out_dir))


def reload_report(run_dir) -> dict:
    """Recompute headline log metrics from a finished run directory."""
    run_dir = Path(run_dir)
    with open(run_dir / "report.json") as fh:
        report = json.load(fh)
    log = RelayLog.read(run_dir / "relay_log.tsv")
    report["errors_from_log"] = A.error_counts(A.ingest(log.records))
    return report


def _sweep_point(args) -> tuple:
    doc, out_dir, value, seed = args
    sc = scenario_from_dict(doc)
    report = run_to_dir(sc, Path(out_dir)) if out_dir else build_report(run_scenario(sc))
    return value, seed, {m: report.get(m) for m in SWEEP_METRICS}


def run_sweep(spec: SweepSpec, out_dir: Optional[Path] = None) -> dict:
    """Run every (value, seed) pair independently and aggregate."""
    jobs = []
    for value in spec.values:
        for rep in range(spec.repetitions):
            seed = spec.seed + rep
            doc = spec.point(value, seed)
            sub = str(Path(out_dir) / f"{spec.axis}-{value}" / f"seed-{seed}") if out_dir else ""
            jobs.append((doc, sub, value, seed))
    if spec.workers > 1:
        with ProcessPoolExecutor(spec.workers) as pool:
            rows = list(pool.map(_sweep_point, jobs))
    else:
        rows = [_sweep_point(j) for j in jobs]
    table = []
    for value in spec.values:
        entry = {"value": value}
        for m in SWEEP_METRICS:
            vals = [r[2][m] for r in rows if r[0] == value and r[2][m] is not None]
            entry[m] = A.summarize(vals)
        table.append(entry)
    result = {"name": spec.name, "axis": spec.axis, "repetitions": spec.repetitions,
              "table": table, "runs": [{"value": v, "seed": s, **m} for v, s, m in rows]}
    if out_dir:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        A.write_json(out_dir / "sweep.json", result)
        A.write_csv(out_dir / "sweep_runs.csv", ("value", "seed") + SWEEP_METRICS,
                    [(v, s) + tuple(m[k] for k in SWEEP_METRICS) for v, s, m in rows])
        A.write_csv(out_dir / "sweep_summary.csv",
                    ("value",) + tuple(f"{m}_{stat}" for m in SWEEP_METRICS
                                       for stat in ("mean", "median", "q1", "q3")),
                    [(e["value"],) + tuple(e[m].get(stat) for m in SWEEP_METRICS
                                           for stat in ("mean", "median", "q1", "q3"))
                     for e in table])
    return result
