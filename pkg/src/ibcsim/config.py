"""TOML scenario files: loading, merging over the shipped defaults, and
conversion into :class:`Scenario` objects with field-path validation."""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from ibcsim.chain import ChainConfig, RpcCost
from ibcsim.relayer import RelayerConfig
from ibcsim.scenario import ConfigError, Scenario
from ibcsim.workload import WorkloadSpec

SWEEP_AXES = ("input_rate", "relayer_count", "spread_blocks", "rtt")
_SCENARIO_KEYS = {"name", "seed", "horizon_blocks", "rtt_ms", "stop_when_settled",
                  "cli_confirm_poll_ms", "cli_confirm_timeout_ms", "cli_broadcast_timeout_ms",
                  "record_trace", "source_channel", "dest_channel"}


def load_toml(path) -> dict:
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def defaults() -> dict:
    """The calibrated defaults shipped with the package."""
    text = resources.files("ibcsim").joinpath("defaults.toml").read_text()
    return tomllib.loads(text)


def merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _fill(cls, data: dict, path: str, errors: list[str], **fixed):
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = dict(fixed)
    for k, v in data.items():
        if k not in names:
            errors.append(f"{path}.{k}: unknown field")
            continue
        kwargs[k] = v
    try:
        return cls(**kwargs)
    except TypeError as err:
        errors.append(f"{path}: {err}")
        return cls(**fixed)


def _chain(data: dict, path: str, errors: list[str]) -> ChainConfig:
    data = dict(data)
    rpc_data = data.pop("rpc", {})
    cfg = _fill(ChainConfig, data, path, errors)
    for kind, cost in rpc_data.items():
        if kind not in cfg.rpc:
            errors.append(f"{path}.rpc.{kind}: unknown query kind")
            continue
        base = cfg.rpc[kind]
        unknown = set(cost) - {"base_ms", "per_item_ms", "jitter"}
        for k in sorted(unknown):
            errors.append(f"{path}.rpc.{kind}.{k}: unknown field")
        cfg.rpc[kind] = RpcCost(float(cost.get("base_ms", base.base_ms)),
                                float(cost.get("per_item_ms", base.per_item_ms)),
                                float(cost.get("jitter", base.jitter)))
    for name in ("gas", "pull_per_msg_ms", "bytes_per_event"):
        merged = dict(getattr(ChainConfig(), name))
        merged.update(getattr(cfg, name))
        setattr(cfg, name, merged)
    return cfg


def scenario_from_dict(doc: dict) -> Scenario:
    """Build a scenario from a document already merged over the defaults."""
    errors: list[str] = []
    chain_common = doc.get("chain", {})
    source = _chain(merge(chain_common, doc.get("source", {})), "source", errors)
    dest = _chain(merge(chain_common, doc.get("dest", {})), "dest", errors)
    relayer_common = doc.get("relayer", {})
    entries = doc.get("relayers")
    if entries is None:
        count = int(doc.get("scenario", {}).get("relayer_count", 1))
        entries = [{"relayer_id": f"relayer-{i + 1}"} for i in range(count)]
    relayers = [_fill(RelayerConfig, merge(relayer_common, e), f"relayers[{i}]", errors)
                for i, e in enumerate(entries)]
    wl = dict(doc.get("workload", {}))
    if "extra" in wl:
        wl["extra"] = [tuple(x) for x in wl["extra"]]
    workload = _fill(WorkloadSpec, wl, "workload", errors)
    top = {k: v for k, v in doc.get("scenario", {}).items() if k != "relayer_count"}
    for k in top:
        if k not in _SCENARIO_KEYS:
            errors.append(f"scenario.{k}: unknown field")
    top = {k: v for k, v in top.items() if k in _SCENARIO_KEYS}
    sc = Scenario(source=source, dest=dest, relayers=relayers, workload=workload, **top)
    errors += sc.validate()
    if errors:
        raise ConfigError(errors)
    return sc


def load_scenario(path, overrides: Optional[dict] = None) -> Scenario:
    doc = merge(defaults(), load_toml(path))
    if overrides:
        doc = merge(doc, overrides)
    return scenario_from_dict(doc)


@dataclass
class SweepSpec:
    base: dict
    axis: str
    values: list
    repetitions: int = 20
    seed: int = 0
    name: str = "sweep"
    workers: int = 1

    def validate(self) -> list[str]:
        errors = []
        if self.axis not in SWEEP_AXES:
            errors.append(f"sweep.axis: must be one of {', '.join(SWEEP_AXES)}")
        if not self.values:
            errors.append("sweep.values: must be non-empty")
        if self.repetitions < 1:
            errors.append("sweep.repetitions: must be >= 1")
        return errors

    def point(self, value, seed: int) -> dict:
        """Scenario document for one (value, seed) pair."""
        doc = copy.deepcopy(self.base)
        sc = doc.setdefault("scenario", {})
        sc["seed"] = seed
        sc["name"] = f"{self.name}-{self.axis}-{value}-seed{seed}"
        if self.axis == "input_rate":
            doc.setdefault("workload", {})["input_rate_rps"] = value
        elif self.axis == "spread_blocks":
            wl = doc.setdefault("workload", {})
            wl["spread_blocks"] = value
            wl["input_rate_rps"] = 0
        elif self.axis == "rtt":
            sc["rtt_ms"] = value
        elif self.axis == "relayer_count":
            doc.pop("relayers", None)
            sc["relayer_count"] = value
        return doc


def load_sweep(path, overrides: Optional[dict] = None) -> SweepSpec:
    raw = load_toml(path)
    sweep = raw.pop("sweep", {})
    base_ref = sweep.get("base")
    base = defaults()
    if base_ref:
        base = merge(base, load_toml(Path(path).parent / base_ref))
    base = merge(base, raw)
    if overrides:
        base = merge(base, overrides)
    spec = SweepSpec(base=base, axis=sweep.get("axis", ""), values=list(sweep.get("values", [])),
                     repetitions=int(sweep.get("repetitions", 20)),
                     seed=int(sweep.get("seed", base.get("scenario", {}).get("seed", 0))),
                     name=sweep.get("name", Path(path).stem),
                     workers=int(sweep.get("workers", 1)))
    errors = spec.validate()
    if errors:
        raise ConfigError(errors)
    return spec


def scenario_document(sc: Scenario) -> dict[str, Any]:
    """A JSON-ready echo of the fully resolved scenario."""
    return dataclasses.asdict(sc)
