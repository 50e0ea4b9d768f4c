"""Multi-cell full-duplex NOMA simulator with global and SCA power allocation."""

from .model import (
    ALL_SCHEMES,
    ConfigError,
    PowerAllocation,
    SchemeKind,
    SimConfig,
    SolverResult,
    dbm_to_watts,
    load_config,
    validate_config,
    watts_to_dbm,
)

__all__ = [
    "ALL_SCHEMES",
    "ConfigError",
    "PowerAllocation",
    "SchemeKind",
    "SimConfig",
    "SolverResult",
    "dbm_to_watts",
    "load_config",
    "validate_config",
    "watts_to_dbm",
]
__version__ = "0.1.0"
