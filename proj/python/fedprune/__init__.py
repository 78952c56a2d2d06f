"""Deterministic federated learning simulator with differential model serving."""

from ._core import (
    ConfigError,
    FormatError,
    InputError,
    count_submodels,
    default_config,
    keep_count,
    run,
    run_single_summary,
    validate_config,
    version,
)

__version__ = version()

__all__ = [
    "ConfigError",
    "FormatError",
    "InputError",
    "count_submodels",
    "default_config",
    "keep_count",
    "run",
    "run_single_summary",
    "validate_config",
    "version",
]
