"""Transfer workloads: schedule construction and a CLI-like driver that
broadcasts scheduled transactions into the source chain."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

from ibcsim.chain import (
    BROADCAST_TX, CONFIRM_TX, RPC_EXPIRED, TRANSFER, Chain, RpcQuery, TransferData,
)
from ibcsim.engine import WORKLOAD_SUBMIT, Engine
from ibcsim.relayer import FAILED, NO_CONFIRMATION, OK, TRANSFER_BROADCAST, RelayLog

logger = logging.getLogger(__name__)

CLI_ID = "cli"

SUBMITTED = "submitted"
COMMITTED = "committed"
# the CLI gave up waiting for the node to answer a broadcast
BROADCAST_TIMEOUT = "broadcast timeout"


class ScheduleError(ValueError):
    pass


@dataclass
class WorkloadSpec:
    total_transfers: int = 0
    input_rate_rps: int = 0
    spread_blocks: int = 1
    # 0 picks the smallest pool that keeps one tx per account per block
    num_accounts: int = 0
    msgs_per_tx: int = 100
    amount: int = 1
    denom: str = "token"
    duration_blocks: int = 50
    block_interval_ms: int = 5000
    # receive deadline, in destination blocks after submission
    timeout_blocks: int = 200
    # extra (block_index, transfers) groups appended to the schedule
    extra: list[tuple[int, int]] = field(default_factory=list)

    @property
    def rate_driven(self) -> bool:
        return self.input_rate_rps > 0

    def per_block_counts(self) -> list[int]:
        if self.rate_driven:
            per_block = self.input_rate_rps * self.block_interval_ms // 1000
            counts = [per_block] * self.duration_blocks
        else:
            q, r = divmod(self.total_transfers, self.spread_blocks)
            counts = [q + 1 if i < r else q for i in range(self.spread_blocks)]
        for block_index, n in self.extra:
            while len(counts) < block_index:
                counts.append(0)
            counts[block_index - 1] += n
        return counts

    def validate(self, path: str = "workload") -> list[str]:
        errors = []
        if self.spread_blocks < 1:
            errors.append(f"{path}.spread_blocks: must be >= 1")
        if self.msgs_per_tx < 1:
            errors.append(f"{path}.msgs_per_tx: must be >= 1")
        if self.num_accounts < 0:
            errors.append(f"{path}.num_accounts: must be non-negative")
        if self.input_rate_rps < 0 or self.total_transfers < 0:
            errors.append(f"{path}: rates and totals must be non-negative")
        if self.amount <= 0:
            errors.append(f"{path}.amount: must be positive")
        if self.duration_blocks < 1:
            errors.append(f"{path}.duration_blocks: must be >= 1")
        for i, (b, n) in enumerate(self.extra):
            if b < 1 or n < 0:
                errors.append(f"{path}.extra[{i}]: block index must be >= 1 and count >= 0")
        return errors


@dataclass(frozen=True)
class ScheduledTx:
    block_index: int
    account: str
    n_msgs: int


@dataclass
class SubmissionSchedule:
    blocks: list[list[ScheduledTx]]
    accounts: list[str]

    @property
    def total_transfers(self) -> int:
        return sum(t.n_msgs for blk in self.blocks for t in blk)

    def per_block_transfers(self) -> list[int]:
        return [sum(t.n_msgs for t in blk) for blk in self.blocks]


def account_name(i: int) -> str:
    return f"user-{i}"


def build_schedule(spec: WorkloadSpec) -> SubmissionSchedule:
    """Split the workload into per-block transactions of at most
    ``msgs_per_tx`` transfers, each from a distinct account."""
    errors = spec.validate()
    if errors:
        raise ScheduleError("; ".join(errors))
    counts = spec.per_block_counts()
    need = max((math.ceil(n / spec.msgs_per_tx) for n in counts), default=0)
    n_accounts = spec.num_accounts or need
    if need > n_accounts:
        raise ScheduleError(f"workload.num_accounts: {need} accounts needed per block, "
                            f"{n_accounts} configured")
    accounts = [account_name(i) for i in range(n_accounts)]
    blocks = []
    for index, n in enumerate(counts, start=1):
        txs = []
        for i in range(math.ceil(n / spec.msgs_per_tx)):
            size = min(spec.msgs_per_tx, n - i * spec.msgs_per_tx)
            txs.append(ScheduledTx(index, accounts[i], size))
        blocks.append(txs)
    return SubmissionSchedule(blocks, accounts)


@dataclass(slots=True)
class WorkloadRecord:
    time_ms: int
    account: str
    tx_size_msgs: int
    outcome: str
    tx_hash: str = ""

    def to_line(self) -> str:
        return f"{self.time_ms}\t{self.account}\t{self.tx_size_msgs}\t{self.outcome}\t{self.tx_hash}"


class WorkloadDriver:
    """Submits each block's transactions when the previous block commits,
    the way a transfer CLI would: build with the committed account sequence,
    broadcast through the source RPC, then poll until confirmed."""

    def __init__(self, engine: Engine, chain: Chain, schedule: SubmissionSchedule,
                 spec: WorkloadSpec, channel_id: str, receiver: str,
                 relay_log: Optional[RelayLog] = None, dest: Optional[Chain] = None,
                 confirm_poll_ms: int = 1000, confirm_timeout_ms: int = 60_000,
                 latency_ms: int = 0, broadcast_timeout_ms: int = 0) -> None:
        self.engine = engine
        self.chain = chain
        self.schedule = schedule
        self.spec = spec
        self.channel_id = channel_id
        self.receiver = receiver
        self.relay_log = relay_log
        self.dest = dest
        self.poll_ms = confirm_poll_ms
        self.confirm_timeout_ms = confirm_timeout_ms
        self.latency = latency_ms
        self.broadcast_timeout_ms = broadcast_timeout_ms
        self.records: list[WorkloadRecord] = []
        self.next_block = 0
        self.start_height = 0
        self.requested = 0
        self.accepted = 0
        self.committed_msgs = 0

    def setup_accounts(self) -> None:
        need = self.spec.amount * self.schedule.total_transfers + 1
        for addr in self.schedule.accounts:
            self.chain.create_account(addr, {self.spec.denom: need, "stake": 10**15})

    def start(self) -> None:
        self.start_height = self.chain.height
        self.chain.header_subscribers.append(self._on_header)
        self._submit_block()

    def _on_header(self, height: int, timestamp: int) -> None:
        if self.next_block < len(self.schedule.blocks):
            self.engine.after(self.latency, WORKLOAD_SUBMIT, self._submit_block,
                              payload=("workload", height))

    def _submit_block(self) -> None:
        if self.next_block >= len(self.schedule.blocks):
            return
        txs = self.schedule.blocks[self.next_block]
        self.next_block += 1
        for stx in txs:
            self._submit(stx)

    def _timeout_height(self) -> int:
        dest_height = self.dest.height if self.dest is not None else self.chain.height
        return dest_height + self.spec.timeout_blocks

    def _submit(self, stx: ScheduledTx) -> None:
        chain = self.chain
        sequence = chain.accounts[stx.account].sequence
        data = TransferData(stx.account, self.receiver, self.spec.denom, self.spec.amount,
                            self.channel_id, self._timeout_height())
        msgs = [chain.message(TRANSFER, data, CLI_ID)] * stx.n_msgs
        tx = chain.build_tx(stx.account, sequence, msgs)
        self.requested += stx.n_msgs
        sent_at = self.engine.now

        def on_response(result):
            now = self.engine.now
            if result == RPC_EXPIRED:
                self.records.append(WorkloadRecord(now, stx.account, stx.n_msgs,
                                                   "failed tx: " + BROADCAST_TIMEOUT, tx.hash))
                return
            accepted, reason = result
            if not accepted:
                self.records.append(WorkloadRecord(now, stx.account, stx.n_msgs, reason, tx.hash))
                return
            self.accepted += stx.n_msgs
            self.records.append(WorkloadRecord(now, stx.account, stx.n_msgs, SUBMITTED, tx.hash))
            if self.relay_log is not None:
                self.relay_log.add(now, CLI_ID, TRANSFER_BROADCAST, -1, tx.hash, OK)
            self._arm_poll(tx.hash, stx, sent_at)

        timeout = self.broadcast_timeout_ms
        self._query(BROADCAST_TX, tx, tx.size, on_response,
                    deadline=sent_at + timeout if timeout > 0 else 0)

    def _query(self, kind, target, n_items, on_response, deadline: int = 0) -> None:
        lat = self.latency

        def respond(result):
            if lat:
                self.engine.after(lat, WORKLOAD_SUBMIT, lambda: on_response(result),
                                  payload=("workload", kind, "response"))
            else:
                on_response(result)

        q = RpcQuery(kind, CLI_ID, target, n_items, respond, deadline=deadline)
        if lat:
            self.engine.after(lat, WORKLOAD_SUBMIT, lambda: self.chain.serve_query(q),
                              payload=("workload", kind, "request"))
        else:
            self.chain.serve_query(q)

    def _arm_poll(self, tx_hash: str, stx: ScheduledTx, sent_at: int) -> None:
        if self.poll_ms <= 0:
            return

        def poll():
            def on_status(statuses):
                (status, _h), _txr = statuses[tx_hash]
                now = self.engine.now
                if status == "committed":
                    self.committed_msgs += stx.n_msgs
                    self.records.append(WorkloadRecord(now, stx.account, stx.n_msgs,
                                                       COMMITTED, tx_hash))
                elif now - sent_at >= self.confirm_timeout_ms:
                    self.records.append(WorkloadRecord(now, stx.account, stx.n_msgs,
                                                       "failed tx: " + NO_CONFIRMATION, tx_hash))
                    if self.relay_log is not None:
                        self.relay_log.add(now, CLI_ID, TRANSFER_BROADCAST, -1, tx_hash,
                                           FAILED, NO_CONFIRMATION)
                else:
                    self._arm_poll(tx_hash, stx, sent_at)

            self._query(CONFIRM_TX, [tx_hash], 1, on_status)

        self.engine.after(self.poll_ms, WORKLOAD_SUBMIT, poll,
                          payload=("workload", "poll", tx_hash))

    def write_log(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("time_ms\taccount\ttx_size_msgs\toutcome\ttx_hash\n")
            for r in self.records:
                fh.write(r.to_line() + "\n")
