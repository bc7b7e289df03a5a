"""Discrete-event core: ordering, tie-breaking, horizons, determinism."""

import pytest

from ibcsim.engine import BLOCK_TICK, Engine, SimulationError


def _recorder(engine, out, name):
    return lambda: out.append((engine.now, name))


def test_time_ordering():
    eng, out = Engine(), []
    eng.schedule(5, BLOCK_TICK, _recorder(eng, out, "A"))
    eng.schedule(3, BLOCK_TICK, _recorder(eng, out, "B"))
    eng.run()
    assert [n for _, n in out] == ["B", "A"]


def test_fifo_tie_break():
    eng, out = Engine(), []
    eng.schedule(5, BLOCK_TICK, _recorder(eng, out, "A"))
    eng.schedule(5, BLOCK_TICK, _recorder(eng, out, "B"))
    eng.run()
    assert [n for _, n in out] == ["A", "B"]


def test_schedule_in_past_rejected():
    eng = Engine()
    eng.schedule(10, BLOCK_TICK)
    eng.run()
    with pytest.raises(SimulationError):
        eng.schedule(9, BLOCK_TICK)


def test_seed_range_checked():
    with pytest.raises(SimulationError):
        Engine(seed=-1)
    with pytest.raises(SimulationError):
        Engine(seed=2**64)
    Engine(seed=2**64 - 1)


def test_run_until_empty_queue_advances_clock():
    eng = Engine()
    assert eng.run_until(1000) == 0
    assert eng.now == 1000


def test_run_until_boundary_inclusive():
    eng = Engine()
    for t in (1, 2, 3):
        eng.schedule(t, BLOCK_TICK)
    assert eng.run_until(2) == 2
    assert eng.now == 2
    assert eng.pending() == 1


def test_cancel_skips_event():
    eng, out = Engine(), []
    t = eng.schedule(4, BLOCK_TICK, _recorder(eng, out, "A"))
    eng.schedule(6, BLOCK_TICK, _recorder(eng, out, "B"))
    assert eng.cancel(t)
    assert not eng.cancel(t)
    eng.run()
    assert [n for _, n in out] == ["B"]


def test_events_scheduled_during_dispatch_run():
    eng, out = Engine(), []

    def first():
        out.append(eng.now)
        eng.after(0, BLOCK_TICK, lambda: out.append(eng.now))

    eng.schedule(7, BLOCK_TICK, first)
    eng.run()
    assert out == [7, 7]


def test_fifty_block_ticks_end_at_250s():
    eng, ticks = Engine(), []

    def tick():
        ticks.append(eng.now)
        if len(ticks) < 50:
            eng.after(5000, BLOCK_TICK, tick)

    eng.schedule(5000, BLOCK_TICK, tick)
    eng.run()
    assert len(ticks) == 50
    assert ticks[-1] == 250_000


def test_trace_hash_is_reproducible(tmp_path):
    def build():
        eng = Engine(seed=42)
        for i in range(20):
            eng.schedule(eng.rng.randrange(100), BLOCK_TICK, payload=("x", i))
        eng.run()
        return eng

    a, b = build(), build()
    assert a.trace_hash() == b.trace_hash()
    a.write_trace(tmp_path / "a.tsv")
    b.write_trace(tmp_path / "b.tsv")
    assert (tmp_path / "a.tsv").read_bytes() == (tmp_path / "b.tsv").read_bytes()
    assert Engine(seed=43).rng.random() != Engine(seed=42).rng.random()


def test_trace_lines_have_four_fields():
    eng = Engine()
    eng.schedule(1, BLOCK_TICK, payload={"k": 1})
    eng.run()
    (line,) = list(eng.iter_trace_lines())
    fire_at, seq, kind, digest = line.split("\t")
    assert (int(fire_at), int(seq), kind) == (1, 0, BLOCK_TICK)
    assert len(digest) == 16
