from pathlib import Path

import pytest

from ibcsim.chain import ChainConfig
from ibcsim.relayer import RelayerConfig
from ibcsim.scenario import Scenario
from ibcsim.workload import WorkloadSpec


def small_scenario(transfers=1, spread=1, relayers=1, rtt_ms=200, seed=0, horizon=60,
                   timeout_blocks=200, clear=0, extra=None, **chain_kw) -> Scenario:
    """A fast scenario on the built-in (uncalibrated) chain defaults."""
    return Scenario(
        name="small",
        source=ChainConfig(chain_id="chain-a", **chain_kw),
        dest=ChainConfig(chain_id="chain-b", **chain_kw),
        relayers=[RelayerConfig(relayer_id=f"relayer-{i + 1}", clear_interval_blocks=clear)
                  for i in range(relayers)],
        workload=WorkloadSpec(total_transfers=transfers, spread_blocks=spread,
                              timeout_blocks=timeout_blocks, extra=list(extra or [])),
        rtt_ms=rtt_ms, seed=seed, horizon_blocks=horizon)


@pytest.fixture
def make_scenario():
    return small_scenario


ROOT = Path(__file__).resolve().parent.parent


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: the end-to-end reproduction criteria")


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number])
