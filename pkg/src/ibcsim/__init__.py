"""Discrete-event simulator and benchmark harness for IBC token transfers."""

from ibcsim.engine import Engine, SimulationError

__all__ = ["Engine", "SimulationError"]
__version__ = "0.1.0"
