"""Simulation and analysis toolkit for multiplexed photon generation from a shuttled ion chain."""
from .chain import (
    ChainConfig,
    EquilibriumChain,
    LambDickeTable,
    NormalModeSet,
    equilibrium_positions,
    lamb_dicke_table,
    normal_modes,
)
from .errors import (
    ConfigError,
    ConvergenceError,
    InputError,
    IonMuxError,
    NumericError,
)

__version__ = "0.1.0"

__all__ = [
    "ChainConfig",
    "ConfigError",
    "ConvergenceError",
    "EquilibriumChain",
    "InputError",
    "IonMuxError",
    "LambDickeTable",
    "NormalModeSet",
    "NumericError",
    "equilibrium_positions",
    "lamb_dicke_table",
    "normal_modes",
]
