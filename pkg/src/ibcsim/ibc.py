"""Packet state machine: commitments, receipts, acknowledgements, timeouts,
and escrow/voucher token accounting for an unordered channel."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional


class IbcError(Exception):
    """A packet operation rejected by the state machine (no state change)."""

    def __init__(self, reason: str) -> None:
        super().__init__(reason)
        self.reason = reason


DUPLICATE = "duplicate"
TIMEOUT_ELAPSED = "timeout elapsed"
UNKNOWN_COMMITMENT = "unknown commitment"
INSUFFICIENT_BALANCE = "insufficient balance"
PACKET_RECEIVED = "packet already received"
TIMEOUT_NOT_REACHED = "timeout not reached"


@dataclass(frozen=True)
class ChannelEnd:
    channel_id: str
    counterparty_channel_id: str
    counterparty_chain_id: str
    ordering: str = "unordered"
    state: str = "open"


@dataclass(frozen=True)
class Packet:
    sequence: int
    source_channel: str
    dest_channel: str
    sender: str
    receiver: str
    denom: str
    amount: int
    timeout_height: int = 0
    timeout_timestamp: int = 0

    def __post_init__(self) -> None:
        if self.timeout_height <= 0 and self.timeout_timestamp <= 0:
            raise ValueError("packet needs a timeout height or timestamp")

    def expired(self, height: int, time_ms: int) -> bool:
        if self.timeout_height > 0 and height > self.timeout_height:
            return True
        return self.timeout_timestamp > 0 and time_ms > self.timeout_timestamp


@dataclass(frozen=True)
class NonReceiptProof:
    """Destination-state snapshot a relayer attaches to a timeout message."""

    sequence: int
    received: bool
    height: int
    time_ms: int


@dataclass
class CommitmentStore:
    commitments: dict[int, Packet] = field(default_factory=dict)
    receipts: set[int] = field(default_factory=set)
    acks: dict[int, bytes] = field(default_factory=dict)
    # sequences that left the commitment set; they may never come back
    closed: set[int] = field(default_factory=set)


@dataclass
class TokenLedger:
    escrow: dict[str, int] = field(default_factory=dict)
    vouchers: dict[tuple[str, str], int] = field(default_factory=dict)
    refunded: dict[str, int] = field(default_factory=dict)

    def escrow_total(self) -> int:
        return sum(self.escrow.values())

    def voucher_total(self) -> int:
        return sum(self.vouchers.values())


def voucher_denom(denom: str, channel_id: str) -> str:
    return f"ibc/{channel_id}/{denom}"


class IbcModule:
    """The IBC/transfer module of one chain.

    ``bank`` is the owning chain's balance map (address -> denom -> amount).
    """

    def __init__(self, chain_id: str, bank: dict[str, dict[str, int]]) -> None:
        self.chain_id = chain_id
        self.bank = bank
        self.channels: dict[str, ChannelEnd] = {}
        self.stores: dict[str, CommitmentStore] = {}
        self.next_sequence: dict[str, int] = {}
        self.ledger = TokenLedger()
        self.acknowledged: dict[str, int] = {}
        self.timed_out: dict[str, int] = {}

    def open_channel(self, channel: ChannelEnd) -> None:
        self.channels[channel.channel_id] = channel
        self.stores[channel.channel_id] = CommitmentStore()
        self.next_sequence[channel.channel_id] = 1
        self.acknowledged[channel.channel_id] = 0
        self.timed_out[channel.channel_id] = 0

    def _open(self, channel_id: str) -> ChannelEnd:
        ch = self.channels.get(channel_id)
        if ch is None or ch.state != "open":
            raise IbcError(f"channel {channel_id} not open")
        return ch

    def send_packet(self, sender: str, receiver: str, denom: str, amount: int,
                    channel_id: str, timeout_height: int = 0,
                    timeout_timestamp: int = 0) -> Packet:
        ch = self._open(channel_id)
        balances = self.bank.setdefault(sender, {})
        if amount <= 0 or balances.get(denom, 0) < amount:
            raise IbcError(INSUFFICIENT_BALANCE)
        seq = self.next_sequence[channel_id]
        packet = Packet(seq, channel_id, ch.counterparty_channel_id, sender, receiver,
                        denom, amount, timeout_height, timeout_timestamp)
        self.next_sequence[channel_id] = seq + 1
        balances[denom] -= amount
        self.ledger.escrow[denom] = self.ledger.escrow.get(denom, 0) + amount
        self.stores[channel_id].commitments[seq] = packet
        return packet

    def recv_packet(self, packet: Packet, height: int, time_ms: int) -> bytes:
        self._open(packet.dest_channel)
        store = self.stores[packet.dest_channel]
        if packet.sequence in store.receipts:
            raise IbcError(DUPLICATE)
        if packet.expired(height, time_ms):
            raise IbcError(TIMEOUT_ELAPSED)
        store.receipts.add(packet.sequence)
        vdenom = voucher_denom(packet.denom, packet.dest_channel)
        balances = self.bank.setdefault(packet.receiver, {})
        balances[vdenom] = balances.get(vdenom, 0) + packet.amount
        key = (packet.denom, packet.dest_channel)
        self.ledger.vouchers[key] = self.ledger.vouchers.get(key, 0) + packet.amount
        ack = b"\x01"
        store.acks[packet.sequence] = ack
        return ack

    def acknowledge_packet(self, packet: Packet, ack: bytes) -> None:
        store = self.stores[packet.source_channel]
        if packet.sequence not in store.commitments:
            raise IbcError(UNKNOWN_COMMITMENT)
        del store.commitments[packet.sequence]
        store.closed.add(packet.sequence)
        self.acknowledged[packet.source_channel] += 1

    def timeout_packet(self, packet: Packet, proof: NonReceiptProof) -> None:
        store = self.stores[packet.source_channel]
        if packet.sequence not in store.commitments:
            raise IbcError(UNKNOWN_COMMITMENT)
        if proof.received:
            raise IbcError(PACKET_RECEIVED)
        if not packet.expired(proof.height, proof.time_ms):
            raise IbcError(TIMEOUT_NOT_REACHED)
        del store.commitments[packet.sequence]
        store.closed.add(packet.sequence)
        self.ledger.escrow[packet.denom] -= packet.amount
        self.ledger.refunded[packet.denom] = self.ledger.refunded.get(packet.denom, 0) + packet.amount
        balances = self.bank.setdefault(packet.sender, {})
        balances[packet.denom] = balances.get(packet.denom, 0) + packet.amount
        self.timed_out[packet.source_channel] += 1

    def audit(self, channel_id: str) -> dict:
        store = self.stores[channel_id]
        return {
            "chain_id": self.chain_id,
            "channel_id": channel_id,
            "escrow_total": self.ledger.escrow_total(),
            "voucher_total": self.ledger.voucher_total(),
            "refunded_total": sum(self.ledger.refunded.values()),
            "open_commitments": len(store.commitments),
            "receipts": len(store.receipts),
            "acknowledged": self.acknowledged[channel_id],
            "timed_out": self.timed_out[channel_id],
        }


def in_flight_amount(source: IbcModule, dest: IbcModule, channel_id: str,
                     dest_channel_id: str) -> int:
    """Escrowed amount of packets committed on source and not yet received."""
    receipts = dest.stores[dest_channel_id].receipts
    return sum(p.amount for seq, p in source.stores[channel_id].commitments.items()
               if seq not in receipts)


def conservation_holds(source: IbcModule, dest: IbcModule, channel_id: str,
                       dest_channel_id: str) -> bool:
    return source.ledger.escrow_total() == (
        dest.ledger.voucher_total() + in_flight_amount(source, dest, channel_id, dest_channel_id))
