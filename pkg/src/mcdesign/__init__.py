"""Design of coupled-channel quantum systems.

Exactly solvable spectral transforms (origin- and asymptotics-anchored
dressing, Darboux partners, periodic combs) paired with an independent
coupled-channel Schrodinger engine that verifies every construction by
direct integration.
"""

from . import bands, dressing, engine, gl, marchenko, scenarios, susy
from .domain import (
    BoundState,
    ChannelSystem,
    DeltaComb,
    DeltaTerm,
    GridSampled,
    MatrixSolution,
    PiecewiseConstant,
    ScatteringData,
    SpectralDatum,
    evaluate_potential,
    free_potential,
)
from .engine import SolverConfig

__all__ = [
    "BoundState", "ChannelSystem", "DeltaComb", "DeltaTerm", "GridSampled",
    "MatrixSolution", "PiecewiseConstant", "ScatteringData", "SolverConfig",
    "SpectralDatum", "bands", "dressing", "engine", "evaluate_potential",
    "free_potential", "gl", "marchenko", "scenarios", "susy",
]
