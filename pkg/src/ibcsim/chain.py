"""Tendermint-like chain: accounts, mempool, block production, gas/fees,
a strictly serialized RPC server and a size-capped block event stream."""

from __future__ import annotations

import itertools
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from ibcsim.engine import BLOCK_TICK, RPC_DEQUEUE, Engine
from ibcsim.ibc import ChannelEnd, IbcError, IbcModule, NonReceiptProof, Packet

logger = logging.getLogger(__name__)

TRANSFER = "transfer"
RECV = "recv"
ACK = "ack"
TIMEOUT = "timeout"
MSG_KINDS = (TRANSFER, RECV, ACK, TIMEOUT)

FEE_DENOM = "stake"

SEQUENCE_MISMATCH = "account sequence mismatch"
MEMPOOL_FULL = "mempool full"
REDUNDANT = "packet messages are redundant"
INSUFFICIENT_FEE = "insufficient fee balance"

BROADCAST_TX = "broadcast_tx"
CONFIRM_TX = "confirm_tx"
PULL_BLOCK_MSGS = "pull_block_msgs"
PULL_COMMITMENT_PROOF = "pull_commitment_proof"
QUERY_PACKETS = "query_packets"
QUERY_ACCOUNT = "query_account"

# response to a query whose client gave up before it was served
RPC_EXPIRED = "rpc_expired"


@dataclass
class RpcCost:
    base_ms: float
    per_item_ms: float = 0.0
    # uniform +/- fraction on this kind's service time (0 = use the chain-wide value)
    jitter: float = 0.0


def _default_rpc() -> dict[str, RpcCost]:
    return {
        BROADCAST_TX: RpcCost(5.0, 0.2),
        CONFIRM_TX: RpcCost(5.0, 0.1),
        PULL_BLOCK_MSGS: RpcCost(50.0, 0.0),
        PULL_COMMITMENT_PROOF: RpcCost(20.0, 1.0),
        QUERY_PACKETS: RpcCost(20.0, 0.01),
        QUERY_ACCOUNT: RpcCost(5.0, 0.0),
    }


@dataclass
class ChainConfig:
    chain_id: str = "chain-a"
    min_block_interval_ms: int = 5000
    max_msgs_per_tx: int = 100
    # gas price 0.01 token/gas, kept as milli-tokens per gas for exact fees
    gas_price_milli: int = 10
    gas: dict[str, int] = field(default_factory=lambda: {
        TRANSFER: 36692, RECV: 72387, ACK: 31075, TIMEOUT: 31075})
    # block execution time: fixed cost for non-empty blocks, plus linear and
    # quadratic terms in the number of messages
    exec_base_ms: float = 0.0
    exec_per_msg_ms: float = 0.55
    exec_per_msg_sq_ms: float = 0.0
    rpc: dict[str, RpcCost] = field(default_factory=_default_rpc)
    # per-message pull cost by kind, applied to every message of the queried block
    pull_per_msg_ms: dict[str, float] = field(default_factory=lambda: {
        TRANSFER: 1.45, RECV: 2.85, ACK: 1.2, TIMEOUT: 1.2})
    rpc_jitter: float = 0.0
    # which queries wait while a block executes: "none", "broadcast" (CheckTx
    # needs the mempool lock) or "all"
    rpc_exec_stall: str = "broadcast"
    event_stream_cap_bytes: int = 16_777_216
    bytes_per_event: dict[str, int] = field(default_factory=lambda: {
        TRANSFER: 200, RECV: 320, ACK: 200, TIMEOUT: 200})
    mempool_capacity_msgs: int = 10_000_000

    def validate(self, path: str = "chain") -> list[str]:
        errors = []
        for name in ("min_block_interval_ms", "max_msgs_per_tx", "gas_price_milli",
                     "event_stream_cap_bytes", "mempool_capacity_msgs"):
            if getattr(self, name) <= 0:
                errors.append(f"{path}.{name}: must be positive")
        if self.rpc_exec_stall not in ("none", "broadcast", "all"):
            errors.append(f"{path}.rpc_exec_stall: must be none, broadcast or all")
        for name in ("exec_base_ms", "exec_per_msg_ms", "exec_per_msg_sq_ms", "rpc_jitter"):
            if getattr(self, name) < 0:
                errors.append(f"{path}.{name}: must be non-negative")
        for kind, cost in self.rpc.items():
            if min(cost.base_ms, cost.per_item_ms, cost.jitter) < 0:
                errors.append(f"{path}.rpc.{kind}: costs must be non-negative")
        for kind in MSG_KINDS:
            if self.gas.get(kind, 0) <= 0:
                errors.append(f"{path}.gas.{kind}: must be positive")
            if self.bytes_per_event.get(kind, 0) <= 0:
                errors.append(f"{path}.bytes_per_event.{kind}: must be positive")
        return errors


@dataclass
class Account:
    address: str
    sequence: int = 0
    balances: dict[str, int] = field(default_factory=dict)


@dataclass
class ChainMessage:
    kind: str
    payload: Any
    gas_units: int
    # submitter tag (relayer id or "workload"); never read by the state machine
    origin: str = ""


@dataclass(frozen=True)
class TransferData:
    sender: str
    receiver: str
    denom: str
    amount: int
    channel_id: str
    timeout_height: int = 0
    timeout_timestamp: int = 0


@dataclass(frozen=True)
class RecvData:
    packet: Packet


@dataclass(frozen=True)
class AckData:
    packet: Packet
    ack: bytes = b"\x01"


@dataclass(frozen=True)
class TimeoutData:
    packet: Packet
    proof: NonReceiptProof


@dataclass
class Transaction:
    hash: str
    account: str
    sequence: int
    messages: list[ChainMessage]
    fee: int = 0

    @property
    def size(self) -> int:
        return len(self.messages)


@dataclass
class MsgResult:
    kind: str
    ok: bool
    error: str = ""
    packet: Optional[Packet] = None


@dataclass
class TxResult:
    tx: Transaction
    height: int
    results: list[MsgResult]


@dataclass
class Block:
    height: int
    timestamp: int
    txs: list[TxResult]
    event_bytes: int
    msg_counts: dict[str, int]
    interval_ms: int

    @property
    def n_msgs(self) -> int:
        return sum(self.msg_counts.values())


@dataclass
class BlockEvents:
    """What a tx-event subscriber receives for one committed block."""

    chain_id: str
    height: int
    timestamp: int
    overflow: bool
    txs: list[TxResult] = field(default_factory=list)


@dataclass
class RpcQuery:
    kind: str
    issuer: str
    target: Any = None
    n_items: int = 0
    on_response: Optional[Callable[[Any], None]] = None
    # absolute time after which the client has stopped waiting (0 = never);
    # the server still spends the service time but drops the request
    deadline: int = 0


class RpcServer:
    """Single FIFO server: at most one query in service at any instant."""

    def __init__(self, engine: Engine, chain: "Chain") -> None:
        self.engine = engine
        self.chain = chain
        self.queue: deque[RpcQuery] = deque()
        self.busy = False
        self.busy_until = 0
        self.stall_until = 0
        self.served = 0
        self.expired = 0
        self.busy_ms_by_kind: dict[str, int] = {}
        self.max_in_service = 0
        self._in_service = 0
        self._residue = 0.0

    def submit(self, q: RpcQuery) -> None:
        self.queue.append(q)
        if not self.busy:
            self._start_next()

    def stall(self, until: int) -> None:
        self.stall_until = max(self.stall_until, until)

    def service_time(self, q: RpcQuery) -> int:
        cfg = self.chain.config
        cost = cfg.rpc[q.kind]
        if q.kind == PULL_BLOCK_MSGS:
            block = self.chain.block_at(q.target)
            ms = cost.base_ms
            if block is not None:
                ms += sum(cfg.pull_per_msg_ms[k] * n for k, n in block.msg_counts.items())
        else:
            ms = cost.base_ms + cost.per_item_ms * q.n_items
        jitter = cost.jitter or cfg.rpc_jitter
        if jitter > 0:
            ms *= 1.0 + jitter * (2.0 * self.engine.rng.random() - 1.0)
        # carry the sub-millisecond remainder so long-run averages stay exact
        self._residue += max(ms, 1.0)
        whole = int(self._residue)
        self._residue -= whole
        return whole

    def _start_next(self) -> None:
        if not self.queue:
            self.busy = False
            return
        q = self.queue.popleft()
        self.busy = True
        start = max(self.engine.now, self.stall_until)
        mode = self.chain.config.rpc_exec_stall
        if mode == "all" or (mode == "broadcast" and q.kind == BROADCAST_TX):
            start = max(start, self.chain.executing_until)
        service = self.service_time(q)
        self.busy_until = start + service
        self.busy_ms_by_kind[q.kind] = self.busy_ms_by_kind.get(q.kind, 0) + service
        self._in_service += 1
        self.max_in_service = max(self.max_in_service, self._in_service)
        self.engine.schedule(self.busy_until, RPC_DEQUEUE, lambda: self._finish(q),
                             payload=(self.chain.config.chain_id, q.kind, q.issuer))

    def _finish(self, q: RpcQuery) -> None:
        self._in_service -= 1
        self.served += 1
        if q.deadline and self.engine.now > q.deadline:
            self.expired += 1
            result = RPC_EXPIRED
        else:
            result = self.chain.answer(q)
        self._start_next()
        if q.on_response is not None:
            q.on_response(result)


class Chain:
    """One blockchain. Blocks commit every ``min_block_interval_ms`` plus the
    execution time of their contents; empty blocks take exactly the minimum."""

    def __init__(self, engine: Engine, config: ChainConfig) -> None:
        self.engine = engine
        self.config = config
        self.chain_id = config.chain_id
        self.accounts: dict[str, Account] = {}
        self.bank: dict[str, dict[str, int]] = {}
        self.ibc = IbcModule(config.chain_id, self.bank)
        self.mempool: list[Transaction] = []
        self.mempool_msgs = 0
        self.pending_accounts: set[str] = set()
        self.blocks: list[Block] = []
        self.tx_index: dict[str, int] = {}
        self.tx_results: dict[str, TxResult] = {}
        # (time_ms, height, event_kind, packet_seq, timeout_height, origin, tx_hash)
        self.packet_log: list[tuple[int, int, str, int, int, str, str]] = []
        self.mempool_hashes: set[str] = set()
        self.fee_pool = 0
        self.height = 0
        self.last_timestamp = 0
        self.tx_subscribers: list[Callable[[BlockEvents], None]] = []
        self.header_subscribers: list[Callable[[int, int], None]] = []
        self.rpc = RpcServer(engine, self)
        self._hash_counter = itertools.count(1)
        self.running = False
        self.executing_until = 0
        self.rejections: dict[str, int] = {}

    # -- setup --------------------------------------------------------------

    def create_account(self, address: str, balances: dict[str, int] | None = None) -> Account:
        acct = Account(address, 0, self.bank.setdefault(address, {}))
        if balances:
            for denom, amount in balances.items():
                acct.balances[denom] = acct.balances.get(denom, 0) + amount
        self.accounts[address] = acct
        return acct

    def open_channel(self, channel: ChannelEnd) -> None:
        self.ibc.open_channel(channel)

    def start(self) -> None:
        self.running = True
        self.engine.schedule(self.last_timestamp + self.config.min_block_interval_ms,
                             BLOCK_TICK, self._propose, payload=(self.chain_id, "propose", 1))

    # -- transactions -------------------------------------------------------

    def new_tx_hash(self) -> str:
        return f"{self.chain_id}:{next(self._hash_counter)}"

    def message(self, kind: str, payload: Any, origin: str = "") -> ChainMessage:
        return ChainMessage(kind, payload, self.config.gas[kind], origin)

    def fee_for(self, messages: list[ChainMessage]) -> int:
        return sum(m.gas_units for m in messages) * self.config.gas_price_milli

    def build_tx(self, account: str, sequence: int, messages: list[ChainMessage]) -> Transaction:
        if not 1 <= len(messages) <= self.config.max_msgs_per_tx:
            raise ValueError(f"tx must carry 1..{self.config.max_msgs_per_tx} messages")
        return Transaction(self.new_tx_hash(), account, sequence, list(messages),
                           self.fee_for(messages))

    def submit_tx(self, tx: Transaction) -> tuple[bool, str]:
        """CheckTx: admit ``tx`` to the mempool or reject it without side effects."""
        reason = self._check_tx(tx)
        if reason:
            self.rejections[reason] = self.rejections.get(reason, 0) + 1
            return False, reason
        self.mempool.append(tx)
        self.mempool_msgs += tx.size
        self.mempool_hashes.add(tx.hash)
        self.pending_accounts.add(tx.account)
        return True, ""

    def _check_tx(self, tx: Transaction) -> str:
        acct = self.accounts.get(tx.account)
        if acct is None or tx.account in self.pending_accounts or tx.sequence != acct.sequence:
            return SEQUENCE_MISMATCH
        if not 1 <= tx.size <= self.config.max_msgs_per_tx:
            return "invalid tx size"
        if acct.balances.get(FEE_DENOM, 0) < tx.fee:
            return INSUFFICIENT_FEE
        if self.mempool_msgs + tx.size > self.config.mempool_capacity_msgs:
            return MEMPOOL_FULL
        if self._all_redundant(tx):
            return REDUNDANT
        return ""

    def _all_redundant(self, tx: Transaction) -> bool:
        for m in tx.messages:
            if m.kind == RECV:
                p = m.payload.packet
                if p.sequence not in self.ibc.stores[p.dest_channel].receipts:
                    return False
            elif m.kind in (ACK, TIMEOUT):
                p = m.payload.packet
                if p.sequence in self.ibc.stores[p.source_channel].commitments:
                    return False
            else:
                return False
        return True

    # -- block production ---------------------------------------------------

    def exec_time_ms(self, n_txs: int, n_msgs: int) -> int:
        if n_txs == 0:
            return 0
        c = self.config
        return int(round(c.exec_base_ms + c.exec_per_msg_ms * n_msgs
                         + c.exec_per_msg_sq_ms * n_msgs * n_msgs))

    def _propose(self) -> None:
        txs = self.mempool
        self.mempool = []
        self.mempool_msgs = 0
        n_msgs = sum(t.size for t in txs)
        exec_ms = self.exec_time_ms(len(txs), n_msgs)
        commit_at = self.engine.now + exec_ms
        self.executing_until = commit_at
        self.engine.schedule(commit_at, BLOCK_TICK, lambda: self.produce_block(txs),
                             payload=(self.chain_id, "commit", self.height + 1, len(txs)))

    def produce_block(self, txs: list[Transaction]) -> Block:
        """Execute ``txs`` into the next block at the current time."""
        now = self.engine.now
        height = self.height + 1
        counts = {k: 0 for k in MSG_KINDS}
        results: list[TxResult] = []
        seen: set[str] = set()
        for tx in txs:
            assert tx.account not in seen, "two txs from one account in a block"
            seen.add(tx.account)
            acct = self.accounts[tx.account]
            acct.sequence += 1
            acct.balances[FEE_DENOM] -= tx.fee
            self.fee_pool += tx.fee
            self.pending_accounts.discard(tx.account)
            self.mempool_hashes.discard(tx.hash)
            self.tx_index[tx.hash] = height
            msg_results = [self._deliver(m, height, now) for m in tx.messages]
            for m in tx.messages:
                counts[m.kind] += 1
            for m, r in zip(tx.messages, msg_results):
                if r.ok and r.packet is not None:
                    self.packet_log.append((now, height, r.kind, r.packet.sequence,
                                            r.packet.timeout_height, m.origin, tx.hash))
            txr = TxResult(tx, height, msg_results)
            self.tx_results[tx.hash] = txr
            results.append(txr)
        event_bytes = sum(self.config.bytes_per_event[k] * n for k, n in counts.items())
        block = Block(height, now, results, event_bytes, counts, now - self.last_timestamp)
        self.blocks.append(block)
        self.height = height
        self.last_timestamp = now
        self.emit_block_events(block)
        if self.running:
            self.engine.schedule(now + self.config.min_block_interval_ms, BLOCK_TICK,
                                 self._propose, payload=(self.chain_id, "propose", height + 1))
        return block

    def _deliver(self, m: ChainMessage, height: int, now: int) -> MsgResult:
        try:
            if m.kind == TRANSFER:
                d: TransferData = m.payload
                packet = self.ibc.send_packet(d.sender, d.receiver, d.denom, d.amount,
                                              d.channel_id, d.timeout_height, d.timeout_timestamp)
                return MsgResult(TRANSFER, True, packet=packet)
            if m.kind == RECV:
                self.ibc.recv_packet(m.payload.packet, height, now)
            elif m.kind == ACK:
                self.ibc.acknowledge_packet(m.payload.packet, m.payload.ack)
            elif m.kind == TIMEOUT:
                self.ibc.timeout_packet(m.payload.packet, m.payload.proof)
            return MsgResult(m.kind, True, packet=m.payload.packet)
        except IbcError as err:
            packet = getattr(m.payload, "packet", None)
            return MsgResult(m.kind, False, err.reason, packet)

    def emit_block_events(self, block: Block) -> BlockEvents:
        overflow = block.event_bytes > self.config.event_stream_cap_bytes
        events = BlockEvents(self.chain_id, block.height, block.timestamp, overflow,
                             [] if overflow else block.txs)
        for cb in list(self.header_subscribers):
            cb(block.height, block.timestamp)
        for cb in list(self.tx_subscribers):
            cb(events)
        return events

    # -- queries ------------------------------------------------------------

    def block_at(self, height: int) -> Optional[Block]:
        if 1 <= height <= len(self.blocks):
            return self.blocks[height - 1]
        return None

    def confirm_tx(self, tx_hash: str) -> tuple[str, int]:
        if tx_hash in self.tx_index:
            return "committed", self.tx_index[tx_hash]
        if tx_hash in self.mempool_hashes:
            return "pending", 0
        return "unknown", 0

    def answer(self, q: RpcQuery) -> Any:
        if q.kind == BROADCAST_TX:
            return self.submit_tx(q.target)
        if q.kind == CONFIRM_TX:
            return {h: (self.confirm_tx(h), self.tx_results.get(h)) for h in q.target}
        if q.kind == PULL_BLOCK_MSGS:
            return self.block_at(q.target)
        if q.kind == QUERY_ACCOUNT:
            acct = self.accounts.get(q.target)
            return acct.sequence if acct else 0
        if q.kind == QUERY_PACKETS:
            channel = q.target
            store = self.ibc.stores[channel]
            return {"height": self.height, "time_ms": self.last_timestamp,
                    "commitments": dict(store.commitments),
                    "receipts": set(store.receipts)}
        if q.kind == PULL_COMMITMENT_PROOF:
            return {"height": self.height, "time_ms": self.last_timestamp}
        raise ValueError(f"unknown query kind {q.kind}")

    def serve_query(self, q: RpcQuery) -> None:
        self.rpc.submit(q)

    def block_log(self) -> list[dict]:
        return [{"height": b.height, "timestamp_ms": b.timestamp, "tx_count": len(b.txs),
                 "msg_counts_by_kind": dict(b.msg_counts), "interval_ms": b.interval_ms}
                for b in self.blocks]
