"""Scenario assembly: two chains, one channel, relayers and a workload, run
on one engine until the horizon."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

from ibcsim.chain import Chain, ChainConfig
from ibcsim.engine import Engine
from ibcsim.ibc import ChannelEnd, conservation_holds
from ibcsim.relayer import RelayLog, Relayer, RelayerConfig
from ibcsim.workload import (
    SubmissionSchedule, WorkloadDriver, WorkloadSpec, build_schedule,
)

logger = logging.getLogger(__name__)

RECEIVER = "receiver"


class ConfigError(ValueError):
    def __init__(self, errors: list[str]) -> None:
        super().__init__("; ".join(errors))
        self.errors = errors


@dataclass
class Scenario:
    name: str = "scenario"
    source: ChainConfig = field(default_factory=lambda: ChainConfig(chain_id="chain-a"))
    dest: ChainConfig = field(default_factory=lambda: ChainConfig(chain_id="chain-b"))
    source_channel: str = "channel-0"
    dest_channel: str = "channel-0"
    relayers: list[RelayerConfig] = field(default_factory=lambda: [RelayerConfig()])
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)
    # relayer <-> remote (destination) chain round trip; the source node is local
    rtt_ms: int = 200
    seed: int = 0
    horizon_blocks: int = 200
    # stop as soon as every accepted transfer is acknowledged or timed out
    stop_when_settled: bool = True
    cli_confirm_poll_ms: int = 1000
    cli_confirm_timeout_ms: int = 60_000
    # 0 = the CLI waits for a broadcast response indefinitely
    cli_broadcast_timeout_ms: int = 0
    record_trace: bool = False

    def validate(self) -> list[str]:
        errors = self.source.validate("source") + self.dest.validate("dest")
        if self.source.chain_id == self.dest.chain_id:
            errors.append("dest.chain_id: must differ from source.chain_id")
        ids = set()
        for i, r in enumerate(self.relayers):
            errors += r.validate(f"relayers[{i}]")
            if r.relayer_id in ids:
                errors.append(f"relayers[{i}].relayer_id: duplicate id {r.relayer_id!r}")
            ids.add(r.relayer_id)
            if r.max_msgs_per_tx > min(self.source.max_msgs_per_tx, self.dest.max_msgs_per_tx):
                errors.append(f"relayers[{i}].max_msgs_per_tx: exceeds the chain cap")
        errors += self.workload.validate("workload")
        if self.cli_broadcast_timeout_ms < 0:
            errors.append("cli_broadcast_timeout_ms: must be non-negative")
        if self.rtt_ms < 0:
            errors.append("rtt_ms: must be non-negative")
        if self.horizon_blocks < 1:
            errors.append("horizon_blocks: must be >= 1")
        if not 0 <= self.seed < 2**64:
            errors.append("seed: must be a 64-bit unsigned integer")
        return errors

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class RunResult:
    scenario: Scenario
    engine: Engine
    source: Chain
    dest: Chain
    relayers: list[Relayer]
    driver: WorkloadDriver
    schedule: SubmissionSchedule
    relay_log: RelayLog

    @property
    def trace_hash(self) -> str:
        return self.engine.trace_hash()

    def conservation_ok(self) -> bool:
        return conservation_holds(self.source.ibc, self.dest.ibc, self.scenario.source_channel,
                                  self.scenario.dest_channel)


class Simulation:
    """Wires a scenario together; ``run`` advances it to the horizon."""

    def __init__(self, scenario: Scenario) -> None:
        errors = scenario.validate()
        if errors:
            raise ConfigError(errors)
        self.scenario = sc = scenario
        self.engine = Engine(sc.seed, record_trace=sc.record_trace)
        self.source = Chain(self.engine, sc.source)
        self.dest = Chain(self.engine, sc.dest)
        self.source.open_channel(ChannelEnd(sc.source_channel, sc.dest_channel, sc.dest.chain_id))
        self.dest.open_channel(ChannelEnd(sc.dest_channel, sc.source_channel, sc.source.chain_id))
        self.dest.create_account(RECEIVER)
        self.relay_log = RelayLog()
        self.schedule = build_schedule(sc.workload)
        self.driver = WorkloadDriver(self.engine, self.source, self.schedule, sc.workload,
                                     sc.source_channel, RECEIVER, self.relay_log, self.dest,
                                     sc.cli_confirm_poll_ms, sc.cli_confirm_timeout_ms,
                                     broadcast_timeout_ms=sc.cli_broadcast_timeout_ms)
        self.driver.setup_accounts()
        half = sc.rtt_ms // 2
        self.relayers = [
            Relayer(self.engine, cfg, self.source, self.dest, sc.source_channel,
                    sc.dest_channel, self.relay_log, {sc.dest.chain_id: half})
            for cfg in sc.relayers
        ]

    def settled(self) -> bool:
        d = self.driver
        if d.next_block < len(self.schedule.blocks):
            return False
        if not self.relayers:
            return False
        ibc = self.source.ibc
        ch = self.scenario.source_channel
        closed = ibc.acknowledged[ch] + ibc.timed_out[ch]
        return closed >= d.accepted and not self.source.mempool and not self.source.rpc.busy

    def run(self, observer: Optional[Callable[[], None]] = None) -> RunResult:
        """Advance to the horizon; ``observer`` is called after every event."""
        sc = self.scenario
        self.source.start()
        self.dest.start()
        for r in self.relayers:
            r.start()
        self.driver.start()
        horizon = sc.horizon_blocks
        src = self.source

        settled_at = []
        # after settling, leave time for the relayer to observe the last block
        grace = 2 * sc.source.min_block_interval_ms + sc.rtt_ms

        def stop() -> bool:
            if observer is not None:
                observer()
            if src.height >= horizon:
                return True
            if not sc.stop_when_settled or self.driver.accepted == 0:
                return False
            if settled_at:
                return self.engine.now >= settled_at[0] + grace
            if self.settled():
                settled_at.append(self.engine.now)
            return False

        self.engine.run(stop=stop)
        return RunResult(sc, self.engine, self.source, self.dest, self.relayers, self.driver,
                         self.schedule, self.relay_log)


def run_scenario(scenario: Scenario) -> RunResult:
    return Simulation(scenario).run()
