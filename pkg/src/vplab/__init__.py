"""Numerical laboratory for the two-species Vlasov-Poisson-Landau system."""

from .grid import (
    PhaseGrid,
    build_grid,
    Maxwellian,
    maxwellian,
    VelocityWeight,
    NormSuite,
    sigma_norm,
    radial_project,
)
from .collision import (
    KernelTable,
    CollisionAssembly,
    assemble_sigma,
    p_v_project,
    coercivity_probe,
    GammaOp,
    apply_Gamma,
)
from .macroscopic import (
    MacroState,
    FieldState,
    MacroProjector,
    project_P,
    solve_poisson,
    moment_residuals,
)
from .lineardecay import (
    ModeOperator,
    ModeTrajectory,
    build_mode_operator,
    evolve_mode,
    whole_space_decay,
)
from .solver import (
    TwoSpeciesField,
    PsiWeight,
    EnergyReport,
    Simulation,
    make_initial_data,
    energy_report,
    energy_inequality_monitor,
    smoothing_diagnostic,
)

__all__ = [
    "PhaseGrid", "build_grid", "Maxwellian", "maxwellian",
    "VelocityWeight", "NormSuite", "sigma_norm", "radial_project",
    "KernelTable", "CollisionAssembly", "assemble_sigma", "p_v_project",
    "coercivity_probe", "GammaOp", "apply_Gamma",
    "MacroState", "FieldState", "MacroProjector", "project_P",
    "solve_poisson", "moment_residuals",
    "ModeOperator", "ModeTrajectory", "build_mode_operator", "evolve_mode",
    "whole_space_decay",
    "TwoSpeciesField", "PsiWeight", "EnergyReport", "Simulation",
    "make_initial_data", "energy_report", "energy_inequality_monitor",
    "smoothing_diagnostic",
]

__version__ = "0.1.0"
