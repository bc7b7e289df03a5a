"""Measurements behind the shipped calibration, and a small refit.

Each ``measure_*`` function runs the shipped defaults (optionally patched
with an override document) through one experiment and returns plain
numbers. ``main`` prints them next to the reference values; with ``fit``
it searches the broadcast cost that sets the node's per-window admission
capacity, the one parameter the commit-path collapse is sensitive to.
"""

from __future__ import annotations

import logging
import statistics
from typing import Optional, Sequence

from ibcsim import analysis as A
from ibcsim.chain import TRANSFER
from ibcsim.config import defaults, merge, scenario_from_dict
from ibcsim.runner import build_report, lifecycles_of
from ibcsim.scenario import Scenario, run_scenario

logger = logging.getLogger(__name__)

# reference values the defaults were fitted against
REFERENCE = {
    "burst_latency_s": 455.0,
    "burst_pull_pct": 69.0,
    "spread_latency_s": {1: 455, 2: 286, 4: 219, 8: 143, 16: 138, 32: 240, 64: 441},
    "peak_rate_rps": 140,
    "peak_tfps_200ms": 80.0,
    "peak_tfps_0ms": 90.0,
    "tfps_300_200ms": 50.0,
    "redundant_at_100": 23020,
    "commit_peak_rate": 3000,
    "commit_peak_tfps": 961.0,
    "submitted_pct": {10000: 80.17, 11000: 38.6, 12000: 17.8, 13000: 10.3, 14000: 8.5},
}

SPREADS = (1, 2, 4, 8, 16, 32, 64)
RELAY_RATES = tuple(range(20, 301, 20))
COMMIT_RATES = (250, 500, 1000, 2000, 3000, 4000, 5000, 6000, 7000, 8000, 9000,
                10000, 11000, 12000, 13000, 14000)


def scenario(over: Optional[dict] = None, patch: Optional[dict] = None) -> Scenario:
    """Shipped defaults, then ``over`` (calibration candidates), then ``patch``
    (the experiment's own shape)."""
    doc = defaults()
    for layer in (over, patch):
        if layer:
            doc = merge(doc, layer)
    return scenario_from_dict(doc)


def measure_burst(over: Optional[dict] = None, spread: int = 1, transfers: int = 5000) -> dict:
    """All transfers submitted over ``spread`` blocks; completion breakdown."""
    sc = scenario(over, {"scenario": {"name": f"burst-{spread}", "horizon_blocks": 600},
                         "workload": {"total_transfers": transfers, "spread_blocks": spread,
                                      "input_rate_rps": 0}})
    bd = A.latency_breakdown(lifecycles_of(run_scenario(sc)))
    return {"latency_s": bd.total_ms / 1000.0, "pull_pct": bd.pull_pct,
            "phase_pct": dict(bd.phase_pct)}


def measure_spread_curve(over: Optional[dict] = None, spreads: Sequence[int] = SPREADS) -> dict:
    return {k: measure_burst(over, spread=k)["latency_s"] for k in spreads}


def measure_relay_curve(over: Optional[dict] = None, rates: Sequence[int] = RELAY_RATES,
                        rtt_ms: int = 200, relayers: int = 1, seed: int = 0) -> dict:
    """Rate-driven relaying over 50 blocks: throughput and redundant errors per rate."""
    out = {}
    for rate in rates:
        sc = scenario(over, {"scenario": {"name": f"relay-{rate}", "rtt_ms": rtt_ms, "seed": seed,
                                          "relayer_count": relayers, "horizon_blocks": 50,
                                          "stop_when_settled": False},
                             "workload": {"input_rate_rps": rate, "duration_blocks": 50}})
        rep = build_report(run_scenario(sc))
        out[rate] = {"tfps": rep["throughput_tfps"], "redundant": rep["redundant_errors"],
                     "completed": rep["completed"]}
    return out


def measure_commit_path(over: Optional[dict] = None, rates: Sequence[int] = COMMIT_RATES,
                        seeds: int = 1, blocks: int = 15) -> dict:
    """Transfer commits only (no relayer) at each request rate; committed
    throughput and the share of requests admitted, averaged over seeds."""
    out = {}
    for rate in rates:
        tps, pct = [], []
        for seed in range(seeds):
            sc = scenario(over, {"scenario": {"name": f"commit-{rate}", "seed": seed,
                                              "relayer_count": 0,
                                              "horizon_blocks": blocks + 1,
                                              "stop_when_settled": False},
                                 "workload": {"input_rate_rps": rate,
                                              "duration_blocks": blocks}})
            res = run_scenario(sc)
            window = res.source.blocks[:blocks]
            committed = sum(b.msg_counts[TRANSFER] for b in window)
            tps.append(committed / (window[-1].timestamp / 1000.0))
            pct.append(100.0 * res.driver.accepted / res.driver.requested)
        out[rate] = {"committed_tps": statistics.mean(tps), "submitted_pct": statistics.mean(pct)}
    return out


def collapse_error(commit: dict) -> float:
    """Largest distance (percentage points) from the reference submitted shares."""
    return max(abs(commit[r]["submitted_pct"] - ref)
               for r, ref in REFERENCE["submitted_pct"].items() if r in commit)


def fit_broadcast_cost(candidates: Sequence[float], seeds: int = 2) -> tuple[float, dict]:
    """Pick the per-message broadcast cost closest to the reference collapse."""
    best = None
    for per_item in candidates:
        over = {"chain": {"rpc": {"broadcast_tx": {"per_item_ms": per_item}}}}
        commit = measure_commit_path(over, tuple(REFERENCE["submitted_pct"]), seeds=seeds)
        err = collapse_error(commit)
        logger.info("per_item_ms=%s error=%.1f", per_item, err)
        if best is None or err < best[0]:
            best = (err, per_item, commit)
    return best[1], best[2]


def main(fit: bool = False, out: Optional[str] = None) -> int:
    if fit:
        per_item, commit = fit_broadcast_cost([0.0790, 0.0793, 0.0795, 0.0798, 0.0800])
        text = f"[chain.rpc.broadcast_tx]\nper_item_ms = {per_item}\n"
        print(text, end="")
        for rate, row in commit.items():
            print(f"{rate} RPS: {row['submitted_pct']:.1f}% submitted")
        if out:
            with open(out, "w") as fh:
                fh.write(text)
        return 0
    burst = measure_burst()
    print(f"burst 5000: {burst['latency_s']:.0f} s (ref {REFERENCE['burst_latency_s']:.0f}), "
          f"pulls {burst['pull_pct']:.1f}% (ref {REFERENCE['burst_pull_pct']:.0f}%)")
    relay = measure_relay_curve(rates=(100, 140, 300))
    for rate, row in relay.items():
        print(f"relay {rate} RPS: {row['tfps']:.1f} TFPS")
    commit = measure_commit_path(rates=(3000, 9000) + tuple(REFERENCE["submitted_pct"]))
    for rate, row in commit.items():
        print(f"commit {rate} RPS: {row['committed_tps']:.0f} TPS, "
              f"{row['submitted_pct']:.1f}% submitted")
    return 0
