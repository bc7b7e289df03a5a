"""Hermes-like relayer: event subscription, per-chain sequential block
workers, a single build thread, per-chain broadcasters with account pools,
and periodic packet clearing.

Relayers never talk to each other. Two relayers on the same channel race,
and the loser's messages are rejected on-chain as redundant.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from ibcsim.chain import (
    ACK, BROADCAST_TX, CONFIRM_TX, FEE_DENOM, MEMPOOL_FULL, PULL_BLOCK_MSGS,
    PULL_COMMITMENT_PROOF, QUERY_ACCOUNT, QUERY_PACKETS, RECV, REDUNDANT,
    SEQUENCE_MISMATCH, TIMEOUT, TRANSFER, AckData, BlockEvents, Chain, RecvData,
    RpcQuery, TimeoutData, TxResult,
)
from ibcsim.engine import NETWORK_ARRIVAL, RELAYER_STEP, Engine
from ibcsim.ibc import DUPLICATE, TIMEOUT_ELAPSED, UNKNOWN_COMMITMENT, NonReceiptProof, Packet

logger = logging.getLogger(__name__)

# the 13 pipeline steps, in execution order
TRANSFER_BROADCAST = "TransferBroadcast"
TRANSFER_EXTRACTION = "TransferExtraction"
TRANSFER_CONFIRMATION = "TransferConfirmation"
TRANSFER_DATA_PULL = "TransferDataPull"
RECV_BUILD = "RecvBuild"
RECV_BROADCAST = "RecvBroadcast"
RECV_EXTRACTION = "RecvExtraction"
RECV_CONFIRMATION = "RecvConfirmation"
RECV_DATA_PULL = "RecvDataPull"
ACK_BUILD = "AckBuild"
ACK_BROADCAST = "AckBroadcast"
ACK_EXTRACTION = "AckExtraction"
ACK_CONFIRMATION = "AckConfirmation"

PIPELINE_STEPS = (
    TRANSFER_BROADCAST, TRANSFER_EXTRACTION, TRANSFER_CONFIRMATION, TRANSFER_DATA_PULL,
    RECV_BUILD, RECV_BROADCAST, RECV_EXTRACTION, RECV_CONFIRMATION, RECV_DATA_PULL,
    ACK_BUILD, ACK_BROADCAST, ACK_EXTRACTION, ACK_CONFIRMATION,
)
STEP_INDEX = {s: i for i, s in enumerate(PIPELINE_STEPS)}

# timeout path, outside the 13-step success pipeline
TIMEOUT_BUILD = "TimeoutBuild"
TIMEOUT_BROADCAST = "TimeoutBroadcast"
TIMEOUT_CONFIRMATION = "TimeoutConfirmation"

# error kinds
REDUNDANT_PACKET = "redundant_packet"
ACCOUNT_SEQUENCE_MISMATCH = "account_sequence_mismatch"
NO_CONFIRMATION = "no_confirmation"
FAILED_TO_COLLECT_EVENTS = "failed_to_collect_events"
ERROR_KINDS = (REDUNDANT_PACKET, ACCOUNT_SEQUENCE_MISMATCH, NO_CONFIRMATION,
               FAILED_TO_COLLECT_EVENTS)

OK = "ok"
FAILED = "failed"

_BUILD_STEP = {RECV: RECV_BUILD, ACK: ACK_BUILD, TIMEOUT: TIMEOUT_BUILD}
_BROADCAST_STEP = {RECV: RECV_BROADCAST, ACK: ACK_BROADCAST, TIMEOUT: TIMEOUT_BROADCAST}
_CONFIRM_STEP = {TRANSFER: TRANSFER_CONFIRMATION, RECV: RECV_CONFIRMATION,
                 ACK: ACK_CONFIRMATION, TIMEOUT: TIMEOUT_CONFIRMATION}


@dataclass(slots=True)
class RelayRecord:
    time_ms: int
    relayer_id: str
    step: str
    packet_seq: int
    tx_hash: str
    outcome: str
    error_kind: str = ""

    def to_line(self) -> str:
        return (f"{self.time_ms}\t{self.relayer_id}\t{self.step}\t{self.packet_seq}\t"
                f"{self.tx_hash}\t{self.outcome}\t{self.error_kind}")

    @classmethod
    def from_line(cls, line: str) -> "RelayRecord":
        t, rid, step, seq, tx, outcome, err = line.rstrip("\n").split("\t")
        return cls(int(t), rid, step, int(seq), tx, outcome, err)


class RelayLog:
    """Structured relayer event log shared by every relayer of a run."""

    def __init__(self) -> None:
        self.records: list[RelayRecord] = []

    def add(self, time_ms: int, relayer_id: str, step: str, packet_seq: int = -1,
            tx_hash: str = "", outcome: str = OK, error_kind: str = "") -> None:
        self.records.append(RelayRecord(time_ms, relayer_id, step, packet_seq, tx_hash,
                                        outcome, error_kind))

    def error_counts(self, relayer_id: Optional[str] = None) -> dict[str, int]:
        counts = {k: 0 for k in ERROR_KINDS}
        for r in self.records:
            if r.error_kind and (relayer_id is None or r.relayer_id == relayer_id):
                counts[r.error_kind] += 1
        return counts

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("time_ms\trelayer_id\tstep\tpacket_seq\ttx_hash\toutcome\terror_kind\n")
            for r in self.records:
                fh.write(r.to_line() + "\n")

    @classmethod
    def read(cls, path) -> "RelayLog":
        log = cls()
        with open(path) as fh:
            next(fh)
            log.records = [RelayRecord.from_line(line) for line in fh if line.strip()]
        return log


@dataclass
class RelayerConfig:
    relayer_id: str = "relayer-1"
    max_msgs_per_tx: int = 100
    clear_interval_blocks: int = 0
    # signing accounts per chain; each keeps at most one unconfirmed tx
    accounts_per_chain: int = 64
    confirm_timeout_ms: int = 120_000
    confirm_poll_ms: int = 1000
    build_ms_per_msg: float = 1.0
    # packets whose data one pull query fetches
    pull_batch_msgs: int = 350
    resubscribe_on_overflow: bool = False
    # one block worker for both chains instead of one per chain
    single_worker: bool = False
    # the block worker waits for its build job before taking the next block
    build_inline: bool = False
    # extra build cost per message, per message in the same job
    build_ms_per_msg_sq: float = 0.0
    # hand a job's transactions to the broadcaster only once the whole job is built
    broadcast_whole_job: bool = True
    fee_balance: int = 10**15

    def validate(self, path: str = "relayer") -> list[str]:
        errors = []
        for name in ("max_msgs_per_tx", "accounts_per_chain", "confirm_timeout_ms",
                     "confirm_poll_ms", "pull_batch_msgs"):
            if getattr(self, name) <= 0:
                errors.append(f"{path}.{name}: must be positive")
        if self.clear_interval_blocks < 0:
            errors.append(f"{path}.clear_interval_blocks: must be non-negative")
        if self.build_ms_per_msg < 0:
            errors.append(f"{path}.build_ms_per_msg: must be non-negative")
        return errors


@dataclass
class _Account:
    address: str
    sequence: int = 0
    busy: bool = False


@dataclass
class _InFlight:
    account: _Account
    kind: str
    packets: list[Packet]
    ticket: int


@dataclass
class _Job:
    kind: str
    target: str
    packets: list[Packet]
    proofs: list[NonReceiptProof] = field(default_factory=list)
    built: list = field(default_factory=list)


def chunks(items: list, size: int) -> Iterable[list]:
    for i in range(0, len(items), size):
        yield items[i:i + size]


class Relayer:
    """Relays one channel between ``source`` and ``dest``.

    ``latency_ms`` maps chain id to the one-way delay between this relayer
    and that chain's full node (0 for the collocated node).
    """

    def __init__(self, engine: Engine, config: RelayerConfig, source: Chain, dest: Chain,
                 source_channel: str, dest_channel: str, log: RelayLog,
                 latency_ms: Optional[dict[str, int]] = None) -> None:
        self.engine = engine
        self.config = config
        self.id = config.relayer_id
        self.chains = {source.chain_id: source, dest.chain_id: dest}
        self.source = source
        self.dest = dest
        self.channel = {source.chain_id: source_channel, dest.chain_id: dest_channel}
        self.log = log
        self.latency = {cid: 0 for cid in self.chains}
        self.latency.update(latency_ms or {})
        self.subscribed = {cid: True for cid in self.chains}
        if config.single_worker:
            shared = _BlockWorker(self)
            self.workers = {cid: shared for cid in self.chains}
        else:
            self.workers = {cid: _BlockWorker(self) for cid in self.chains}
        self.builder = _Builder(self)
        self.broadcasters = {cid: _Broadcaster(self, chain) for cid, chain in self.chains.items()}
        # packets this relayer is currently moving, so clearing does not resend them
        self.pending: dict[str, set[int]] = {RECV: set(), ACK: set(), TIMEOUT: set()}
        self.clearing = False

    def start(self) -> None:
        for cid, chain in self.chains.items():
            self.broadcasters[cid].create_accounts()
            chain.tx_subscribers.append(lambda ev, cid=cid: self._on_tx_events(cid, ev))
        self.source.header_subscribers.append(self._on_source_header)

    # -- plumbing -----------------------------------------------------------

    def record(self, step: str, packet_seq: int = -1, tx_hash: str = "", outcome: str = OK,
               error_kind: str = "", at: Optional[int] = None) -> None:
        self.log.add(self.engine.now if at is None else at, self.id, step, packet_seq,
                     tx_hash, outcome, error_kind)

    def query(self, chain: Chain, kind: str, target=None, n_items: int = 0,
              on_response: Optional[Callable] = None) -> None:
        """Send a query to ``chain``'s RPC server across the network."""
        lat = self.latency[chain.chain_id]

        def respond(result):
            if on_response is not None:
                self.engine.after(lat, NETWORK_ARRIVAL, lambda: on_response(result),
                                  payload=(self.id, chain.chain_id, kind, "response"))

        q = RpcQuery(kind, self.id, target, n_items, respond)
        if lat:
            self.engine.after(lat, NETWORK_ARRIVAL, lambda: chain.serve_query(q),
                              payload=(self.id, chain.chain_id, kind, "request"))
        else:
            chain.serve_query(q)

    def counterpart(self, chain_id: str) -> Chain:
        return self.dest if chain_id == self.source.chain_id else self.source

    # -- event subscription -------------------------------------------------

    def _on_tx_events(self, chain_id: str, ev: BlockEvents) -> None:
        if not self.subscribed[chain_id]:
            return
        lat = self.latency[chain_id]
        self.engine.after(lat, NETWORK_ARRIVAL, lambda: self._arrive(chain_id, ev),
                          payload=(self.id, chain_id, "block-events", ev.height))

    def _arrive(self, chain_id: str, ev: BlockEvents) -> None:
        if ev.overflow:
            self.record(TRANSFER_EXTRACTION if chain_id == self.source.chain_id else RECV_EXTRACTION,
                        outcome=FAILED, error_kind=FAILED_TO_COLLECT_EVENTS)
            if not self.config.resubscribe_on_overflow:
                self.subscribed[chain_id] = False
                self.broadcasters[chain_id].start_polling()
            return
        self.workers[chain_id].enqueue(self.chains[chain_id], ev)

    def _on_source_header(self, height: int, timestamp: int) -> None:
        k = self.config.clear_interval_blocks
        if k > 0 and height % k == 0 and not self.clearing:
            self.engine.after(self.latency[self.source.chain_id], RELAYER_STEP,
                              self.clear_packets, payload=(self.id, "clear", height))

    # -- packet clearing ----------------------------------------------------

    def clear_packets(self) -> None:
        """Scan both chains and re-drive every packet nobody is handling."""
        if self.clearing:
            return
        self.clearing = True
        src, dst = self.source, self.dest
        n_src = len(src.ibc.stores[self.channel[src.chain_id]].commitments)
        self.query(src, QUERY_PACKETS, self.channel[src.chain_id], n_src,
                   lambda src_state: self.query(
                       dst, QUERY_PACKETS, self.channel[dst.chain_id],
                       len(src_state["commitments"]),
                       lambda dst_state: self._plan_clear(src_state, dst_state)))

    def _plan_clear(self, src_state: dict, dst_state: dict) -> None:
        receipts = dst_state["receipts"]
        recv, acks, timeouts = [], [], []
        for seq in sorted(src_state["commitments"]):
            packet = src_state["commitments"][seq]
            if seq in receipts:
                if seq not in self.pending[ACK]:
                    acks.append(packet)
            elif packet.expired(dst_state["height"], dst_state["time_ms"]):
                if seq not in self.pending[TIMEOUT]:
                    timeouts.append(packet)
            elif seq not in self.pending[RECV]:
                recv.append(packet)
        if not (recv or acks or timeouts):
            self.clearing = False
            return
        now = self.engine.now
        for p in recv:
            self.pending[RECV].add(p.sequence)
            self.record(TRANSFER_EXTRACTION, p.sequence, at=now)
            self.record(TRANSFER_CONFIRMATION, p.sequence, at=now)
        for p in acks:
            self.pending[ACK].add(p.sequence)
            self.record(RECV_EXTRACTION, p.sequence, at=now)
            self.record(RECV_CONFIRMATION, p.sequence, at=now)
        for p in timeouts:
            self.pending[TIMEOUT].add(p.sequence)
        proofs = [NonReceiptProof(p.sequence, False, dst_state["height"], dst_state["time_ms"])
                  for p in timeouts]
        steps = [(self.source, RECV, recv, TRANSFER_DATA_PULL, []),
                 (self.source, TIMEOUT, timeouts, "", proofs),
                 (self.dest, ACK, acks, RECV_DATA_PULL, [])]
        self._clear_pulls(deque(s for s in steps if s[2]))

    def _clear_pulls(self, todo: deque) -> None:
        if not todo:
            self.clearing = False
            return
        chain, kind, packets, step, proofs = todo.popleft()
        # recvs and acks go to the other chain; timeouts return to the sender
        target = chain.chain_id if kind == TIMEOUT else self.counterpart(chain.chain_id).chain_id
        size = self.config.pull_batch_msgs
        # each pulled page becomes its own build job
        batches = deque((packets[i:i + size], proofs[i:i + size])
                        for i in range(0, len(packets), size))

        def next_batch():
            if not batches:
                self._clear_pulls(todo)
                return
            batch, batch_proofs = batches.popleft()

            def done(_):
                if step:
                    for p in batch:
                        self.record(step, p.sequence)
                self.builder.submit(_Job(kind, target, batch, batch_proofs))
                next_batch()

            self.query(chain, PULL_COMMITMENT_PROOF, kind, len(batch), done)

        next_batch()


class _BlockWorker:
    """Handles blocks strictly in arrival order (height order per chain):
    extraction, confirmation, then data pulls for every packet of the block."""

    def __init__(self, relayer: Relayer) -> None:
        self.r = relayer
        self.queue: deque[tuple[Chain, BlockEvents]] = deque()
        self.busy = False
        self.chain: Optional[Chain] = None

    def enqueue(self, chain: Chain, ev: BlockEvents) -> None:
        self.queue.append((chain, ev))
        if not self.busy:
            self._next()

    def _next(self) -> None:
        if not self.queue:
            self.busy = False
            return
        self.busy = True
        self.chain, ev = self.queue.popleft()
        self._process(ev)

    def _process(self, ev: BlockEvents) -> None:
        r = self.r
        is_source = self.chain is r.source
        channel = r.channel[self.chain.chain_id]
        own = r.broadcasters[self.chain.chain_id].inflight
        relevant: list[TxResult] = []
        to_relay: list[Packet] = []
        confirmations: list[tuple[str, int, str]] = []
        for txr in ev.txs:
            touched = False
            for res in txr.results:
                p = res.packet
                if p is None:
                    continue
                if res.kind == TRANSFER and is_source and res.ok and p.source_channel == channel:
                    r.record(TRANSFER_EXTRACTION, p.sequence, txr.tx.hash)
                    confirmations.append((TRANSFER_CONFIRMATION, p.sequence, txr.tx.hash))
                    to_relay.append(p)
                    touched = True
                elif res.kind == RECV and not is_source and res.ok and p.dest_channel == channel:
                    r.record(RECV_EXTRACTION, p.sequence, txr.tx.hash)
                    confirmations.append((RECV_CONFIRMATION, p.sequence, txr.tx.hash))
                    to_relay.append(p)
                    touched = True
                elif res.kind in (ACK, TIMEOUT) and is_source and res.ok and p.source_channel == channel:
                    if res.kind == ACK:
                        r.record(ACK_EXTRACTION, p.sequence, txr.tx.hash)
                    confirmations.append((_CONFIRM_STEP[res.kind], p.sequence, txr.tx.hash))
                    touched = True
            if touched or txr.tx.hash in own:
                relevant.append(txr)
        if not relevant:
            self._next()
            return

        def on_confirm(_):
            for step, seq, tx_hash in confirmations:
                r.record(step, seq, tx_hash)
            bc = r.broadcasters[self.chain.chain_id]
            for txr in relevant:
                if txr.tx.hash in bc.inflight:
                    bc.confirmed(txr)
            if to_relay:
                self._pull(ev.height, to_relay, RECV if is_source else ACK)
            else:
                self._next()

        r.query(self.chain, CONFIRM_TX, [t.tx.hash for t in relevant], len(relevant), on_confirm)

    def _pull(self, height: int, packets: list[Packet], next_kind: str) -> None:
        r = self.r
        step = TRANSFER_DATA_PULL if next_kind == RECV else RECV_DATA_PULL
        pending = r.pending[next_kind]
        for p in packets:
            pending.add(p.sequence)
        batches = deque(chunks(packets, r.config.pull_batch_msgs))
        target = r.counterpart(self.chain.chain_id).chain_id

        def next_batch():
            if not batches:
                if r.config.build_inline:
                    r.builder.submit(_Job(next_kind, target, packets), on_done=self._next)
                else:
                    r.builder.submit(_Job(next_kind, target, packets))
                    self._next()
                return
            batch = batches.popleft()

            def done(_):
                for p in batch:
                    r.record(step, p.sequence)
                next_batch()

            r.query(self.chain, PULL_BLOCK_MSGS, height, len(batch), done)

        next_batch()


class _Builder:
    """One build thread per relayer; jobs run FIFO, one message at a time."""

    def __init__(self, relayer: Relayer) -> None:
        self.r = relayer
        self.jobs: deque[tuple[_Job, int]] = deque()
        self.busy = False
        self.callbacks: dict[int, Callable[[], None]] = {}

    def submit(self, job: _Job, on_done: Optional[Callable[[], None]] = None) -> None:
        if not job.packets:
            if on_done is not None:
                on_done()
            return
        if on_done is not None:
            self.callbacks[id(job)] = on_done
        self.jobs.append((job, 0))
        if not self.busy:
            self._next()

    def _next(self) -> None:
        if not self.jobs:
            self.busy = False
            return
        self.busy = True
        job, offset = self.jobs.popleft()
        cap = self.r.config.max_msgs_per_tx
        part = job.packets[offset:offset + cap]
        proofs = job.proofs[offset:offset + cap] if job.proofs else []
        cfg = self.r.config
        per_msg = cfg.build_ms_per_msg + cfg.build_ms_per_msg_sq * len(job.packets)
        start = self.r.engine.now
        duration = int(round(per_msg * len(part)))

        def done():
            step = _BUILD_STEP[job.kind]
            for i, p in enumerate(part):
                self.r.record(step, p.sequence, at=start + int(round(per_msg * (i + 1))))
            if cfg.broadcast_whole_job:
                job.built.append((part, proofs))
                if offset + cap >= len(job.packets):
                    for built, built_proofs in job.built:
                        self.r.broadcasters[job.target].enqueue(job.kind, built, built_proofs)
            else:
                self.r.broadcasters[job.target].enqueue(job.kind, part, proofs)
            if offset + cap < len(job.packets):
                self.jobs.appendleft((job, offset + cap))
            else:
                cb = self.callbacks.pop(id(job), None)
                if cb is not None:
                    cb()
            self._next()

        self.r.engine.after(duration, RELAYER_STEP, done,
                            payload=(self.r.id, "build", job.kind, len(part)))


class _Broadcaster:
    """Submits built messages to one chain using a pool of signing accounts,
    never more than one unconfirmed tx per account."""

    def __init__(self, relayer: Relayer, chain: Chain) -> None:
        self.r = relayer
        self.chain = chain
        self.accounts: list[_Account] = []
        self.queue: deque[tuple[str, list[Packet], list[NonReceiptProof]]] = deque()
        self.inflight: dict[str, _InFlight] = {}
        self.polling = False

    def create_accounts(self) -> None:
        for i in range(self.r.config.accounts_per_chain):
            addr = f"{self.r.id}/{self.chain.chain_id}/{i}"
            self.chain.create_account(addr, {FEE_DENOM: self.r.config.fee_balance})
            self.accounts.append(_Account(addr))

    def enqueue(self, kind: str, packets: list[Packet], proofs: list[NonReceiptProof]) -> None:
        self.queue.append((kind, packets, proofs))
        self._dispatch()

    def _free_account(self) -> Optional[_Account]:
        for acct in self.accounts:
            if not acct.busy:
                return acct
        return None

    def _dispatch(self) -> None:
        while self.queue:
            acct = self._free_account()
            if acct is None:
                return
            kind, packets, proofs = self.queue.popleft()
            acct.busy = True
            self._broadcast(acct, kind, packets, proofs)

    def _messages(self, kind, packets, proofs):
        origin = self.r.id
        if kind == RECV:
            return [self.chain.message(RECV, RecvData(p), origin) for p in packets]
        if kind == ACK:
            return [self.chain.message(ACK, AckData(p), origin) for p in packets]
        return [self.chain.message(TIMEOUT, TimeoutData(p, proof), origin)
                for p, proof in zip(packets, proofs)]

    def _broadcast(self, acct: _Account, kind: str, packets: list[Packet],
                   proofs: list[NonReceiptProof]) -> None:
        tx = self.chain.build_tx(acct.address, acct.sequence,
                                 self._messages(kind, packets, proofs))

        def on_response(result):
            accepted, reason = result
            if accepted:
                acct.sequence += 1
                for p in packets:
                    self.r.record(_BROADCAST_STEP[kind], p.sequence, tx.hash)
                ticket = self.r.engine.after(self.r.config.confirm_timeout_ms, RELAYER_STEP,
                                             lambda: self._timed_out(tx.hash),
                                             payload=(self.r.id, "confirm-timeout", tx.hash))
                self.inflight[tx.hash] = _InFlight(acct, kind, packets, ticket)
                if self.polling:
                    self._schedule_poll()
                return
            if reason == SEQUENCE_MISMATCH:
                self.r.record(_BROADCAST_STEP[kind], -1, tx.hash, FAILED, ACCOUNT_SEQUENCE_MISMATCH)
                self.queue.appendleft((kind, packets, proofs))
                self._resync(acct)
                return
            if reason == REDUNDANT:
                for p in packets:
                    self.r.record(_BROADCAST_STEP[kind], p.sequence, tx.hash, FAILED,
                                  REDUNDANT_PACKET)
            else:
                for p in packets:
                    self.r.record(_BROADCAST_STEP[kind], p.sequence, tx.hash, FAILED)
            self._release(kind, packets)
            acct.busy = False
            self._dispatch()

        self.r.query(self.chain, BROADCAST_TX, tx, tx.size, on_response)

    def _resync(self, acct: _Account) -> None:
        def on_seq(seq):
            acct.sequence = seq
            acct.busy = False
            self._dispatch()

        self.r.query(self.chain, QUERY_ACCOUNT, acct.address, 0, on_seq)

    def _release(self, kind: str, packets: list[Packet]) -> None:
        pending = self.r.pending[kind]
        for p in packets:
            pending.discard(p.sequence)

    def confirmed(self, txr: TxResult, via_poll: bool = False) -> None:
        fl = self.inflight.pop(txr.tx.hash, None)
        if fl is None:
            return
        self.r.engine.cancel(fl.ticket)
        for res in txr.results:
            p = res.packet
            if res.ok:
                if via_poll:
                    if res.kind == ACK:
                        self.r.record(ACK_EXTRACTION, p.sequence, txr.tx.hash)
                    self.r.record(_CONFIRM_STEP[res.kind], p.sequence, txr.tx.hash)
                continue
            if res.error in (DUPLICATE, UNKNOWN_COMMITMENT):
                self.r.record(_CONFIRM_STEP[res.kind], p.sequence, txr.tx.hash, FAILED,
                              REDUNDANT_PACKET)
            else:
                self.r.record(_CONFIRM_STEP[res.kind], p.sequence, txr.tx.hash, FAILED)
        # acks and timeouts close the packet; failed recvs are left to clearing
        if fl.kind != RECV:
            self._release(fl.kind, fl.packets)
        else:
            failed = [res.packet for res in txr.results if not res.ok]
            self._release(RECV, failed)
        fl.account.busy = False
        self._dispatch()

    def _timed_out(self, tx_hash: str) -> None:
        fl = self.inflight.pop(tx_hash, None)
        if fl is None:
            return
        self.r.record(_CONFIRM_STEP[fl.kind], -1, tx_hash, FAILED, NO_CONFIRMATION)
        self._release(fl.kind, fl.packets)
        self._resync(fl.account)

    # fallback confirmation once the event subscription is gone
    def start_polling(self) -> None:
        self.polling = True
        self._schedule_poll()

    def _schedule_poll(self) -> None:
        if getattr(self, "_poll_armed", False) or not self.inflight:
            return
        self._poll_armed = True
        self.r.engine.after(self.r.config.confirm_poll_ms, RELAYER_STEP, self._poll,
                            payload=(self.r.id, "poll", self.chain.chain_id))

    def _poll(self) -> None:
        self._poll_armed = False
        hashes = list(self.inflight)
        if not hashes:
            return

        def on_status(statuses):
            for h, ((status, _height), txr) in statuses.items():
                if status == "committed" and h in self.inflight:
                    self.confirmed(txr, via_poll=True)
            self._schedule_poll()

        self.r.query(self.chain, CONFIRM_TX, hashes, len(hashes), on_status)
