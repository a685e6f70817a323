"""Rotatable BS antennas and a rotatable IRS for multi-user uplink sum-rate maximization.

Modules
-------
geometry    array layouts, boresight and Euler-angle kinematics, visibility
channel     scenario sampling and near-field / far-field channel evaluation
manifold    conjugate-gradient ascent on unit-modulus phase vectors
su_solver   single-user alternating optimization (MRC)
mu_solver   multi-user alternating optimization (MMSE, FP-RCG, BB rotations)
analysis    rotation-gain, combining-efficiency and alignment diagnostics
harness     seeded experiments, sweeps and CSV output
"""

from .config import ConfigError, ScenarioConfig, load_config
from .harness import ExperimentResult, emit_csv, run_scheme, sweep

__all__ = ["ConfigError", "ScenarioConfig", "load_config", "ExperimentResult", "emit_csv",
           "run_scheme", "sweep"]
__version__ = "0.1.0"
