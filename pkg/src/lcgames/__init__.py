"""Lane-change interaction games: extraction, estimation, and evolution.

The package turns raw trajectories into lane-change events, clusters
behavior into cooperative/defective, jointly estimates per-role utilities
and rationality with a coupled logistic equilibrium, builds per-state payoff
tables with dilemma classification, and simulates strategy evolution on a
lattice of mixed AV/HDV agents.
"""

from .errors import (
    DataError,
    DegenerateClusterError,
    FitError,
    FixedPointError,
    LcgamesError,
    MapFormatError,
    NumericError,
    SchemaVersionError,
)

__version__ = "0.1.0"

__all__ = [
    "DataError",
    "DegenerateClusterError",
    "FitError",
    "FixedPointError",
    "LcgamesError",
    "MapFormatError",
    "NumericError",
    "SchemaVersionError",
    "__version__",
]
