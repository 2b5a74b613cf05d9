"""
This module solves the stationary quantum self-gravitation system: the quasi potential u, the
density n = αe^u with unit mass and the potential Φ of

    −(ε²/2)Δu + u = (ε²/4)|∇u|² + σΦ,   −ΔΦ = n

on the unit disk or square, with its classical (ε = 0) counterpart and energy diagnostics.

See :py:mod:`bohmgrav.quantum` for the solver, :py:mod:`bohmgrav.classical` for the classical
problem and :py:mod:`bohmgrav.diagnostics` for energies and sweeps.
"""

from __future__ import annotations

import logging
import os
from importlib.metadata import PackageNotFoundError, version

from .classical import (
    ClassicalState,
    classical_solve,
    liouville_exact,
    liouville_residual,
    threshold_scan,
)
from .diagnostics import (
    EnergyReport,
    SweepRecord,
    ThresholdReport,
    epsilon_sweep,
    fisher_information,
    free_energy,
    quantum_sigma_sweep,
    total_energy,
    uniqueness_threshold,
)
from .errors import (
    BohmgravError,
    ConfigError,
    ConvergenceError,
    DomainError,
    NumericalError,
)
from .mesh import (
    DomainKind,
    Mesh,
    RadialGrid,
    build_disk_mesh,
    build_radial_grid,
    build_square_mesh,
    refine_marked,
    refine_uniform,
)
from .quantum import (
    InitKind,
    IterationConfig,
    ModelParams,
    SolutionState,
    density_from_u,
    picard_fixed_point,
    radial_solve,
    residual_original_system,
    solve_quasi_potential,
)

try:
    __version__ = version("bohmgrav")
except PackageNotFoundError:
    __version__ = "0.0.0"

LOG_FORMAT = "%(asctime)s [%(levelname)s:%(name)s] %(message)s"

__all__ = [
    "BohmgravError",
    "ClassicalState",
    "ConfigError",
    "ConvergenceError",
    "DomainError",
    "DomainKind",
    "EnergyReport",
    "InitKind",
    "IterationConfig",
    "Mesh",
    "ModelParams",
    "NumericalError",
    "RadialGrid",
    "SolutionState",
    "SweepRecord",
    "ThresholdReport",
    "build_disk_mesh",
    "build_radial_grid",
    "build_square_mesh",
    "classical_solve",
    "density_from_u",
    "epsilon_sweep",
    "fisher_information",
    "free_energy",
    "liouville_exact",
    "liouville_residual",
    "picard_fixed_point",
    "quantum_sigma_sweep",
    "radial_solve",
    "refine_marked",
    "refine_uniform",
    "residual_original_system",
    "set_log_level",
    "solve_quasi_potential",
    "threshold_scan",
    "total_energy",
    "uniqueness_threshold",
]


def set_log_level(level: int | str = "INFO") -> None:
    """
    Sets the log level of the ``bohmgrav`` loggers and initializes logging.

    If BOHMGRAV_LOG_LEVEL is set, that's used instead of the passed level.

    This calls logging.basicConfig to setup a global logger if one is not already configured.
    Set up your logging before calling this function to avoid that.

    :param level: The logging level to set. This accepts the same values as `logging.setLevel` and
        defaults to "INFO".
    :raises ValueError: If ``level`` is not a known level name.
    """
    level = os.environ.get("BOHMGRAV_LOG_LEVEL") or level

    if isinstance(level, str):
        level_map = (
            logging.getLevelNamesMapping()
            if hasattr(logging, "getLevelNamesMapping")
            else _level_names()
        )
        try:
            level = level_map[level]
        except KeyError:
            raise ValueError(f"Unknown log level: {level}")
    else:
        level = max(0, min(2**32 - 1, level))

    if not logging.getLogger().handlers:
        logging.basicConfig(format=LOG_FORMAT)
    logging.getLogger(__name__).setLevel(level)


def _level_names() -> dict[str, int]:
    # Fallback for Python <3.11; no support for custom levels
    return {
        "CRITICAL": logging.CRITICAL,
        "FATAL": logging.FATAL,
        "ERROR": logging.ERROR,
        "WARN": logging.WARNING,
        "WARNING": logging.WARNING,
        "INFO": logging.INFO,
        "DEBUG": logging.DEBUG,
        "NOTSET": logging.NOTSET,
    }
