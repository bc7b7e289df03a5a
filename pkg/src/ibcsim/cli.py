"""Command line entry point: ``ibcsim run|sweep|report|calibrate``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ibcsim.config import load_scenario, load_sweep
from ibcsim.runner import output_root, reload_report, run_sweep, run_to_dir
from ibcsim.scenario import ConfigError


def _overrides(args) -> dict:
    sc = {}
    if getattr(args, "seed", None) is not None:
        sc["seed"] = args.seed
    if getattr(args, "horizon_blocks", None) is not None:
        sc["horizon_blocks"] = args.horizon_blocks
    return {"scenario": sc} if sc else {}


def cmd_run(args) -> int:
    sc = load_scenario(args.scenario, _overrides(args))
    out = Path(args.out) if args.out else output_root() / sc.name
    report = run_to_dir(sc, out)
    summary = {k: report[k] for k in ("scenario", "requested", "submitted", "throughput_tfps",
                                      "completion_latency_s", "status", "conservation_ok")}
    print(json.dumps(summary, indent=2, sort_keys=True))
    print(f"run directory: {out}")
    return 0


def cmd_sweep(args) -> int:
    spec = load_sweep(args.sweep, _overrides(args))
    if args.repetitions is not None:
        spec.repetitions = args.repetitions
    if args.seed is not None:
        spec.seed = args.seed
    errors = spec.validate()
    if errors:
        raise ConfigError(errors)
    out = Path(args.out) if args.out else output_root() / spec.name
    result = run_sweep(spec, out)
    for row in result["table"]:
        cells = []
        for m in ("throughput_tfps", "completion_latency_s", "submitted_pct"):
            stats = row[m]
            if stats.get("n"):
                cells.append(f"{m}={stats['median']:.1f}")
        print(f"{spec.axis}={row['value']}: " + " ".join(cells))
    print(f"sweep directory: {out}")
    return 0


def cmd_report(args) -> int:
    print(json.dumps(reload_report(args.run_dir), indent=2, sort_keys=True))
    return 0


def cmd_calibrate(args) -> int:
    from ibcsim import calibrate
    return calibrate.main(fit=args.fit, out=args.out)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ibcsim", description="Cross-chain relaying simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one scenario")
    r.add_argument("scenario")
    r.add_argument("--seed", type=int)
    r.add_argument("--out")
    r.add_argument("--horizon-blocks", type=int, dest="horizon_blocks")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run a parameter sweep")
    s.add_argument("sweep")
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.add_argument("--repetitions", type=int)
    s.add_argument("--horizon-blocks", type=int, dest="horizon_blocks")
    s.set_defaults(func=cmd_sweep)

    rep = sub.add_parser("report", help="print the report of a run directory")
    rep.add_argument("run_dir")
    rep.set_defaults(func=cmd_report)

    c = sub.add_parser("calibrate", help="evaluate (or refit) the shipped calibration")
    c.add_argument("--fit", action="store_true", help="search for better parameters")
    c.add_argument("--out", help="write the fitted values as TOML here")
    c.set_defaults(func=cmd_calibrate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except ConfigError as err:
        for e in err.errors:
            print(f"config error: {e}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"io error: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
