"""Chain model: CheckTx admission, block production, fees, RPC server and
the capped event stream."""

import pytest

from ibcsim.chain import (
    ACK, BROADCAST_TX, CONFIRM_TX, FEE_DENOM, MEMPOOL_FULL, PULL_BLOCK_MSGS, RECV,
    SEQUENCE_MISMATCH, TRANSFER, Chain, ChainConfig, RecvData, RpcCost, RpcQuery, TransferData,
)
from ibcsim.engine import Engine
from ibcsim.ibc import ChannelEnd, Packet


def make_chain(**kw):
    eng = Engine()
    chain = Chain(eng, ChainConfig(**kw))
    chain.open_channel(ChannelEnd("channel-0", "channel-0", "chain-b"))
    return eng, chain


def fund(chain, name, tokens=10**6):
    return chain.create_account(name, {"token": tokens, FEE_DENOM: 10**15})


def transfers(chain, sender, n, amount=1):
    data = TransferData(sender, "bob", "token", amount, "channel-0", timeout_height=200)
    return [chain.message(TRANSFER, data, "workload") for _ in range(n)]


def test_first_tx_accepted_then_pending_account_rejected():
    eng, chain = make_chain()
    fund(chain, "u")
    ok, reason = chain.submit_tx(chain.build_tx("u", 0, transfers(chain, "u", 1)))
    assert (ok, reason) == (True, "")
    ok, reason = chain.submit_tx(chain.build_tx("u", 1, transfers(chain, "u", 1)))
    assert (ok, reason) == (False, SEQUENCE_MISMATCH)
    assert len(chain.mempool) == 1


def test_wrong_sequence_rejected_without_state_change():
    eng, chain = make_chain()
    acct = fund(chain, "u")
    ok, reason = chain.submit_tx(chain.build_tx("u", 3, transfers(chain, "u", 1)))
    assert not ok and reason == SEQUENCE_MISMATCH
    assert chain.mempool == [] and acct.sequence == 0


def test_fifty_accounts_commit_five_thousand_transfers():
    eng, chain = make_chain()
    for i in range(50):
        fund(chain, f"u{i}")
        ok, _ = chain.submit_tx(chain.build_tx(f"u{i}", 0, transfers(chain, f"u{i}", 100)))
        assert ok
    chain.start()
    eng.run(stop=lambda: chain.height >= 1)
    block = chain.blocks[0]
    assert len(block.txs) == 50
    assert block.msg_counts[TRANSFER] == 5000
    assert len(chain.ibc.stores["channel-0"].commitments) == 5000
    assert all(chain.accounts[f"u{i}"].sequence == 1 for i in range(50))


def test_empty_blocks_take_exactly_min_interval():
    eng, chain = make_chain()
    chain.start()
    eng.run(stop=lambda: chain.height >= 3)
    assert [b.timestamp for b in chain.blocks] == [5000, 10000, 15000]
    assert all(b.interval_ms == 5000 for b in chain.blocks)


def test_loaded_block_interval_includes_execution():
    eng, chain = make_chain(exec_per_msg_ms=0.55)
    fund(chain, "u")
    chain.submit_tx(chain.build_tx("u", 0, transfers(chain, "u", 100)))
    chain.start()
    eng.run(stop=lambda: chain.height >= 2)
    assert chain.blocks[0].timestamp == 5000 + 55
    assert chain.blocks[1].interval_ms == 5000


def test_fee_is_gas_times_price():
    eng, chain = make_chain()
    acct = fund(chain, "u")
    tx = chain.build_tx("u", 0, transfers(chain, "u", 100))
    # 100 x 36,692 gas at 0.01 token/gas = 36,692 tokens = 36,692,000 milli-tokens
    assert tx.fee == 36_692_000
    chain.submit_tx(tx)
    chain.start()
    eng.run(stop=lambda: chain.height >= 1)
    assert acct.balances[FEE_DENOM] == 10**15 - 36_692_000
    assert chain.fee_pool == 36_692_000


def test_tx_size_bounds():
    eng, chain = make_chain()
    fund(chain, "u")
    with pytest.raises(ValueError):
        chain.build_tx("u", 0, [])
    with pytest.raises(ValueError):
        chain.build_tx("u", 0, transfers(chain, "u", 101))


def test_mempool_capacity_tail_drop():
    eng, chain = make_chain(mempool_capacity_msgs=150)
    fund(chain, "a")
    fund(chain, "b")
    assert chain.submit_tx(chain.build_tx("a", 0, transfers(chain, "a", 100)))[0]
    assert chain.submit_tx(chain.build_tx("b", 0, transfers(chain, "b", 100))) == (False, MEMPOOL_FULL)


def test_confirm_tx_states():
    eng, chain = make_chain()
    fund(chain, "u")
    tx = chain.build_tx("u", 0, transfers(chain, "u", 1))
    assert chain.confirm_tx(tx.hash) == ("unknown", 0)
    chain.submit_tx(tx)
    assert chain.confirm_tx(tx.hash) == ("pending", 0)
    chain.start()
    eng.run(stop=lambda: chain.height >= 1)
    assert chain.confirm_tx(tx.hash) == ("committed", 1)


def _ask(eng, chain, kind, target=None, n_items=0):
    got = []
    chain.serve_query(RpcQuery(kind, "t", target, n_items, lambda r: got.append(eng.now)))
    return got


def test_idle_server_confirm_latency_is_base():
    eng, chain = make_chain()
    got = _ask(eng, chain, CONFIRM_TX, [], 0)
    eng.run()
    assert got == [5]


def test_rpc_is_strictly_serialized():
    eng, chain = make_chain()
    chain.config.rpc[CONFIRM_TX] = RpcCost(7.0, 0.0)
    done = [_ask(eng, chain, CONFIRM_TX, []) for _ in range(10)]
    eng.run()
    assert [d[0] for d in done] == [7 * (i + 1) for i in range(10)]
    assert chain.rpc.max_in_service == 1


def _block_of(chain, eng, kind, n_txs=20, per_tx=100):
    for i in range(n_txs):
        fund(chain, f"u{i}")
        if kind == TRANSFER:
            msgs = transfers(chain, f"u{i}", per_tx)
        else:
            msgs = [chain.message(RECV, RecvData(Packet(i * per_tx + j + 1, "channel-0", "channel-0",
                                                         "x", "bob", "token", 1, 500)))
                    for j in range(per_tx)]
        chain.submit_tx(chain.build_tx(f"u{i}", 0, msgs))
    chain.start()
    eng.run(stop=lambda: chain.height >= 1)


@pytest.mark.parametrize("kind,expected", [(TRANSFER, 2900), (RECV, 5700)])
def test_pull_block_service_time(kind, expected):
    eng, chain = make_chain()
    _block_of(chain, eng, kind)
    t0 = eng.now
    got = _ask(eng, chain, PULL_BLOCK_MSGS, 1)
    eng.run(stop=lambda: bool(got))
    assert got[0] - t0 == pytest.approx(expected, rel=0.03)


def test_small_block_events_delivered():
    eng, chain = make_chain(bytes_per_event={**ChainConfig().bytes_per_event, TRANSFER: 1000})
    fund(chain, "u")
    seen = []
    chain.tx_subscribers.append(seen.append)
    chain.submit_tx(chain.build_tx("u", 0, transfers(chain, "u", 1)))
    chain.start()
    eng.run(stop=lambda: chain.height >= 1)
    assert not seen[0].overflow and len(seen[0].txs) == 1


def test_oversized_block_overflows_event_stream():
    eng, chain = make_chain()
    seen = []
    chain.tx_subscribers.append(seen.append)
    _block_of(chain, eng, TRANSFER, n_txs=1000)
    assert chain.blocks[0].event_bytes > chain.config.event_stream_cap_bytes
    assert seen[0].overflow and seen[0].txs == []


def test_broadcast_query_waits_for_block_execution():
    eng, chain = make_chain(exec_base_ms=1000, exec_per_msg_ms=0.0)
    fund(chain, "u")
    fund(chain, "v")
    chain.submit_tx(chain.build_tx("u", 0, transfers(chain, "u", 1)))
    chain.start()
    eng.run_until(5000)  # proposal taken, block executing until 6000
    tx = chain.build_tx("v", 0, transfers(chain, "v", 1))
    got = _ask(eng, chain, BROADCAST_TX, tx, 1)
    eng.run(stop=lambda: bool(got))
    assert got[0] >= 6000


def test_config_validation_names_fields():
    errors = ChainConfig(min_block_interval_ms=0, rpc_exec_stall="x").validate("source")
    assert "source.min_block_interval_ms: must be positive" in errors
    assert any(e.startswith("source.rpc_exec_stall") for e in errors)


def test_block_log_fields():
    eng, chain = make_chain()
    chain.start()
    eng.run(stop=lambda: chain.height >= 1)
    (rec,) = chain.block_log()
    assert set(rec) == {"height", "timestamp_ms", "tx_count", "msg_counts_by_kind", "interval_ms"}
    assert rec["msg_counts_by_kind"][ACK] == 0
