"""Quantum-trajectory simulation and analysis of monitored quantum jumps.

Simulates a three-level superconducting atom whose bright-state occupation
is read out dispersively through a cavity, reconstructs the measurement
record and the conditional flight of the ground-to-dark jumps, and runs the
catch / reverse feedback protocols against closed-form theory oracles.
"""

__version__ = "0.1.0"

from .params import (ProtocolConfig, SystemParams, experiment_params,
                     load_config, save_config, simulation_params, validate)

__all__ = [
    "ProtocolConfig", "SystemParams", "experiment_params", "load_config",
    "save_config", "simulation_params", "validate", "__version__",
]
