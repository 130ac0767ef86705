"""Discrete-event V2P latency simulator: conventional LTE core vs MEC at the PGW."""
from .scenario import ScenarioConfig, validate_config
from .engine import run_simulation, scenario_fading, simulate_run
from .metrics import aggregate, mec_gain, sweep_density, sweep_pdr_snr

__all__ = ["ScenarioConfig", "validate_config", "run_simulation", "scenario_fading",
           "simulate_run", "aggregate", "mec_gain", "sweep_density", "sweep_pdr_snr"]
__version__ = "0.1.0"
