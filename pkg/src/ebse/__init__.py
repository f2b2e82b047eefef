"""Distributed event-based state estimation over a common bus.

Set ``EBSE_DISABLE_NUMBA=1`` to run every kernel as plain numpy/Python.
"""
from ._jit import NUMBA_ENABLED
from .model import DimensionError, LtiModel, NoiseSpec
from .observer import ControllerGain, ObserverGain
from .scenario import Scenario, builtin_benchmark, load_scenario, save_scenario
from .simulate import RunTrace, comm_rates, run

__all__ = [
    "NUMBA_ENABLED", "DimensionError", "LtiModel", "NoiseSpec", "ObserverGain",
    "ControllerGain", "Scenario", "builtin_benchmark", "load_scenario",
    "save_scenario", "RunTrace", "comm_rates", "run",
]
