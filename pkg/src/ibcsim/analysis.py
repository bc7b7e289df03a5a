"""Post-processing: merge the relayer, chain and workload logs, rebuild
per-transfer lifecycles and derive throughput, latency breakdowns, status
histograms and relayer-count comparisons."""

from __future__ import annotations

import csv
import json
import statistics
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from ibcsim.relayer import (
    ACK_CONFIRMATION, OK, PIPELINE_STEPS, RECV_DATA_PULL, STEP_INDEX, TRANSFER_BROADCAST,
    TRANSFER_DATA_PULL, RelayRecord,
)
from ibcsim.chain import ACK, RECV, TIMEOUT, TRANSFER

COMPLETED = "Completed"
PARTIALLY_COMPLETED = "PartiallyCompleted"
INITIATED = "Initiated"
NOT_COMMITTED = "NotCommitted"
STATUS_CLASSES = (COMPLETED, PARTIALLY_COMPLETED, INITIATED, NOT_COMMITTED)
# subdivisions of Initiated
TIMED_OUT = "TimedOut"
STUCK = "Stuck"
PENDING = "Pending"

PHASES = {
    "transfer": PIPELINE_STEPS[0:4],
    "recv": PIPELINE_STEPS[4:9],
    "ack": PIPELINE_STEPS[9:13],
}
PULL_STEPS = (TRANSFER_DATA_PULL, RECV_DATA_PULL)
WORKLOAD_SOURCE = "workload"


class AnalysisError(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class EventRecord:
    time_ms: int
    source: str
    step: str
    packet_seq: int
    outcome: str
    tx_hash: str = ""
    error_kind: str = ""
    extra: int = 0


def chain_step(kind: str) -> str:
    return f"Commit{kind.capitalize()}"


def ingest(relay_records: Iterable[RelayRecord] = (),
           packet_logs: Optional[dict[str, Iterable[tuple]]] = None,
           workload_records: Iterable = ()) -> list[EventRecord]:
    """Merge the three log streams into one list ordered by (time, ingestion index)."""
    events: list[EventRecord] = []
    for r in relay_records:
        events.append(EventRecord(r.time_ms, r.relayer_id, r.step, r.packet_seq, r.outcome,
                                  r.tx_hash, r.error_kind))
    for chain_id, log in (packet_logs or {}).items():
        for t, height, kind, seq, timeout_height, _origin, tx_hash in log:
            events.append(EventRecord(t, chain_id, chain_step(kind), seq, OK, tx_hash,
                                      extra=timeout_height if kind == TRANSFER else height))
    for w in workload_records:
        events.append(EventRecord(w.time_ms, WORKLOAD_SOURCE, w.outcome, -1, w.outcome,
                                  w.tx_hash, extra=w.tx_size_msgs))
    order = sorted(range(len(events)), key=lambda i: (events[i].time_ms, i))
    return [events[i] for i in order]


@dataclass
class TransferLifecycle:
    packet_seq: int
    steps: dict[str, int] = field(default_factory=dict)
    # on-chain commit time per message kind
    commits: dict[str, int] = field(default_factory=dict)
    timeout_height: int = 0
    status: str = INITIATED

    def ordered(self) -> bool:
        """Present step timestamps respect the pipeline order."""
        last = -1
        for step in PIPELINE_STEPS:
            t = self.steps.get(step)
            if t is None:
                continue
            if t < last:
                return False
            last = t
        return True

    @property
    def completed_at(self) -> Optional[int]:
        return self.steps.get(ACK_CONFIRMATION)


def build_lifecycles(events: Sequence[EventRecord], source_chain: str) -> dict[int, TransferLifecycle]:
    """One lifecycle per packet committed on ``source_chain``; a step's
    timestamp is its earliest successful record."""
    lifecycles: dict[int, TransferLifecycle] = {}
    seqs_by_tx: dict[str, list[int]] = {}
    for ev in events:
        if ev.source == source_chain and ev.step == chain_step(TRANSFER):
            lc = lifecycles.setdefault(ev.packet_seq, TransferLifecycle(ev.packet_seq))
            lc.commits[TRANSFER] = ev.time_ms
            lc.timeout_height = ev.extra
            seqs_by_tx.setdefault(ev.tx_hash, []).append(ev.packet_seq)
    for ev in events:
        if ev.source == WORKLOAD_SOURCE:
            continue
        if ev.step.startswith("Commit"):
            kind = ev.step[len("Commit"):].lower()
            if kind != TRANSFER:
                lc = lifecycles.get(ev.packet_seq)
                if lc is not None:
                    lc.commits.setdefault(kind, ev.time_ms)
            continue
        if ev.outcome != OK or ev.step not in STEP_INDEX and not ev.step.startswith("Timeout"):
            continue
        if ev.step == TRANSFER_BROADCAST and ev.packet_seq < 0:
            targets = seqs_by_tx.get(ev.tx_hash, ())
        else:
            targets = (ev.packet_seq,)
        for seq in targets:
            lc = lifecycles.get(seq)
            if lc is not None and ev.step not in lc.steps:
                lc.steps[ev.step] = ev.time_ms
    return lifecycles


def classify(lifecycles: dict[int, TransferLifecycle], requested: int,
             horizon_dest_height: int, horizon_ms: Optional[int] = None) -> dict[str, int]:
    """Assign every requested transfer one class as of the horizon.

    Initiated transfers are further split into TimedOut (refunded), Stuck
    (past their timeout, never refunded) and Pending.
    """
    hist = {c: 0 for c in STATUS_CLASSES}
    sub = {TIMED_OUT: 0, STUCK: 0, PENDING: 0}
    for lc in lifecycles.values():
        c = {k: t for k, t in lc.commits.items() if horizon_ms is None or t <= horizon_ms}
        if ACK in c:
            lc.status = COMPLETED
        elif RECV in c:
            lc.status = PARTIALLY_COMPLETED
        elif TIMEOUT in c:
            lc.status = TIMED_OUT
        elif lc.timeout_height and horizon_dest_height > lc.timeout_height:
            lc.status = STUCK
        else:
            lc.status = PENDING
        if lc.status in sub:
            sub[lc.status] += 1
            hist[INITIATED] += 1
        else:
            hist[lc.status] += 1
    hist[NOT_COMMITTED] = max(0, requested - len(lifecycles))
    hist.update(sub)
    return hist


def throughput(lifecycles: dict[int, TransferLifecycle], window_start_ms: int,
               window_end_ms: int) -> float:
    """Completed transfers per simulated second inside the window."""
    if window_end_ms <= window_start_ms:
        raise AnalysisError("throughput window must have positive length")
    done = sum(1 for lc in lifecycles.values()
               if lc.completed_at is not None and window_start_ms <= lc.completed_at <= window_end_ms)
    return done / ((window_end_ms - window_start_ms) / 1000.0)


def completion_curve(lifecycles: dict[int, TransferLifecycle], start_ms: int = 0) -> list[tuple[int, int]]:
    times = sorted(lc.completed_at for lc in lifecycles.values() if lc.completed_at is not None)
    return [(t - start_ms, i + 1) for i, t in enumerate(times)]


@dataclass
class Breakdown:
    total_ms: int
    first_completion_ms: int
    last_completion_ms: int
    step_ms: dict[str, int]
    step_pct: dict[str, float]
    phase_pct: dict[str, float]
    pull_pct: float
    curve: list[tuple[int, int]]

    def to_dict(self) -> dict:
        return {
            "total_ms": self.total_ms,
            "first_completion_ms": self.first_completion_ms,
            "last_completion_ms": self.last_completion_ms,
            "step_ms": self.step_ms,
            "step_pct": self.step_pct,
            "phase_pct": self.phase_pct,
            "pull_pct": self.pull_pct,
        }


def latency_breakdown(lifecycles: dict[int, TransferLifecycle]) -> Breakdown:
    """Split the span from the first broadcast to the last completion into
    the 13 steps: each step is charged the time between the last record of
    the previous step and its own last record, so the shares add to 100%."""
    done = [lc for lc in lifecycles.values() if lc.completed_at is not None]
    if not done:
        raise AnalysisError("no completed transfers to break down")
    start = min(lc.steps.get(TRANSFER_BROADCAST, lc.commits[TRANSFER]) for lc in done)
    ends = {}
    for step in PIPELINE_STEPS:
        ts = [lc.steps[step] for lc in done if step in lc.steps]
        ends[step] = max(ts) if ts else None
    step_ms = {}
    prev = start
    for step in PIPELINE_STEPS:
        end = ends[step] if ends[step] is not None else prev
        end = max(end, prev)
        step_ms[step] = end - prev
        prev = end
    total = prev - start
    pct = {s: (100.0 * v / total if total else 0.0) for s, v in step_ms.items()}
    phase_pct = {p: sum(pct[s] for s in steps) for p, steps in PHASES.items()}
    completions = sorted(lc.completed_at for lc in done)
    return Breakdown(total, completions[0] - start, completions[-1] - start, step_ms, pct,
                     phase_pct, sum(pct[s] for s in PULL_STEPS),
                     completion_curve(lifecycles, start))


def error_counts(events: Iterable[EventRecord]) -> dict[str, dict[str, int]]:
    out: dict[str, dict[str, int]] = {}
    for ev in events:
        if ev.error_kind:
            per = out.setdefault(ev.source, {})
            per[ev.error_kind] = per.get(ev.error_kind, 0) + 1
    return out


def summarize(values: Sequence[float]) -> dict[str, float]:
    vals = sorted(values)
    if not vals:
        return {"n": 0}
    if len(vals) >= 2:
        q1, med, q3 = statistics.quantiles(vals, n=4, method="inclusive")
    else:
        q1 = med = q3 = vals[0]
    return {"n": len(vals), "mean": statistics.fmean(vals), "median": med, "q1": q1, "q3": q3,
            "min": vals[0], "max": vals[-1],
            "stdev": statistics.stdev(vals) if len(vals) > 1 else 0.0}


def scalability_report(runs: Sequence[tuple[int, dict]]) -> dict:
    """Compare runs that differ only in relayer count.

    Each run is (relayer_count, metrics) with metrics holding ``peak_tfps``,
    ``redundant_errors`` and a ``config_digest`` of everything but the
    relayer count.
    """
    if len(runs) < 2:
        raise AnalysisError("need at least two runs to compare")
    digests = {m.get("config_digest") for _, m in runs}
    if len(digests) != 1:
        raise AnalysisError("runs differ in more than the relayer count")
    base_count, base = min(runs, key=lambda r: r[0])
    rows = []
    for count, m in sorted(runs, key=lambda r: r[0]):
        delta = 0.0
        if base["peak_tfps"]:
            delta = 100.0 * (m["peak_tfps"] - base["peak_tfps"]) / base["peak_tfps"]
        rows.append({"relayers": count, "peak_tfps": m["peak_tfps"], "peak_delta_pct": delta,
                     "redundant_errors": m.get("redundant_errors", 0)})
    return {"baseline_relayers": base_count, "runs": rows}


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow(row)


def write_json(path, doc: dict) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
