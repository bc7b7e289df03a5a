"""Schedule construction and the submission driver."""

import pytest

from ibcsim.chain import Chain, ChainConfig
from ibcsim.engine import Engine
from ibcsim.ibc import ChannelEnd
from ibcsim.workload import (
    COMMITTED, SUBMITTED, ScheduleError, WorkloadDriver, WorkloadSpec, build_schedule,
)


def test_one_block_burst():
    sched = build_schedule(WorkloadSpec(total_transfers=5000, spread_blocks=1))
    assert len(sched.blocks) == 1
    assert len(sched.blocks[0]) == 50
    assert {t.n_msgs for t in sched.blocks[0]} == {100}
    assert len({t.account for t in sched.blocks[0]}) == 50


def test_spread_sixteen_even_split_earlier_blocks_take_remainder():
    sched = build_schedule(WorkloadSpec(total_transfers=5000, spread_blocks=16))
    per_block = sched.per_block_transfers()
    assert per_block == [313] * 8 + [312] * 8
    assert sched.total_transfers == 5000


def test_rate_driven_twenty_rps():
    sched = build_schedule(WorkloadSpec(input_rate_rps=20, duration_blocks=50))
    assert sched.per_block_transfers() == [100] * 50
    assert sched.total_transfers == 5000


def test_thousand_rps_is_five_thousand_per_block():
    spec = WorkloadSpec(input_rate_rps=1000, duration_blocks=2)
    assert spec.per_block_counts() == [5000, 5000]


def test_infeasible_account_pool():
    with pytest.raises(ScheduleError, match="num_accounts"):
        build_schedule(WorkloadSpec(total_transfers=5000, num_accounts=10))


def test_default_account_pool_is_ceiling():
    sched = build_schedule(WorkloadSpec(total_transfers=250, spread_blocks=1))
    assert len(sched.accounts) == 3
    assert [t.n_msgs for t in sched.blocks[0]] == [100, 100, 50]


def test_extra_groups_are_appended():
    spec = WorkloadSpec(total_transfers=100, spread_blocks=1, extra=[(3, 1)])
    assert spec.per_block_counts() == [100, 0, 1]


def test_empty_schedule():
    sched = build_schedule(WorkloadSpec(total_transfers=0))
    assert sched.total_transfers == 0


def _drive(spec, poll_ms=1000, blocks=3):
    eng = Engine()
    chain = Chain(eng, ChainConfig())
    chain.open_channel(ChannelEnd("channel-0", "channel-0", "chain-b"))
    sched = build_schedule(spec)
    drv = WorkloadDriver(eng, chain, sched, spec, "channel-0", "bob", confirm_poll_ms=poll_ms)
    drv.setup_accounts()
    chain.start()
    drv.start()
    eng.run(stop=lambda: chain.height >= blocks)
    return eng, chain, drv


def test_driver_submits_at_block_window_and_confirms():
    eng, chain, drv = _drive(WorkloadSpec(total_transfers=300, spread_blocks=2))
    assert drv.requested == drv.accepted == 300
    assert [b.msg_counts["transfer"] for b in chain.blocks[:2]] == [150, 150]
    submitted = [r for r in drv.records if r.outcome == SUBMITTED]
    assert all(r.time_ms < 5000 for r in submitted[:2])
    committed = [r for r in drv.records if r.outcome == COMMITTED]
    assert sum(r.tx_size_msgs for r in committed) == 300


def test_driver_empty_schedule_submits_nothing():
    eng, chain, drv = _drive(WorkloadSpec(total_transfers=0), blocks=1)
    assert drv.records == [] and drv.requested == 0


def test_driver_log_roundtrip(tmp_path):
    _, _, drv = _drive(WorkloadSpec(total_transfers=100))
    drv.write_log(tmp_path / "w.tsv")
    lines = (tmp_path / "w.tsv").read_text().splitlines()
    assert lines[0] == "time_ms\taccount\ttx_size_msgs\toutcome\ttx_hash"
    assert len(lines) == 1 + len(drv.records)
