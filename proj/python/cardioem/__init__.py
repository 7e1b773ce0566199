"""Cardiac electromechanics simulator bindings."""

from ._core import (
    ConfigError,
    SolverError,
    Simulation,
    default_config,
    normalize_config,
    postprocess_run,
    __version__,
)

__all__ = [
    "ConfigError",
    "SolverError",
    "Simulation",
    "default_config",
    "normalize_config",
    "postprocess_run",
    "__version__",
]
