"""Risk control barrier function filters.

Thin wrapper over the C++ core; see ``Experiment`` for config-driven use.
"""

from ._rcbf import (
    BudgetError,
    DimensionError,
    Error,
    Experiment,
    ParameterError,
    PreconditionError,
    SchemaError,
    UnsupportedError,
    cvar_rockafellar,
    reach_time_bound,
    risk,
)

__all__ = [
    "BudgetError",
    "DimensionError",
    "Error",
    "Experiment",
    "ParameterError",
    "PreconditionError",
    "SchemaError",
    "UnsupportedError",
    "cvar_rockafellar",
    "reach_time_bound",
    "risk",
]
