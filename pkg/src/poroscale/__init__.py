"""Two-scale model of reactive flow in an evolving porous medium.

A periodic unit cell carries a level-set description of the solid grain.
Cell problems on that cell give porosity, interface length, effective
diffusivity and permeability; tables of those parameters along a geometry
path feed the macroscopic Darcy and transport solvers.
"""

from .cells import (
    EffectiveTensor,
    diffusion_tensor,
    permeability_tensor,
    solve_diffusion_cell,
    solve_stokes_cell,
)
from .darcy import DarcyData, DarcyField, MacroGrid, continuity_experiment, darcy_time_slices, solve_darcy
from .diffeo import RadialScaling, circle_diffeo, circle_path
from .errors import (
    ConfigError,
    DegeneracyError,
    PoroscaleError,
    SolverError,
    ValidityHorizonError,
)
from .evolution import SpeedField, evolve, phi_sigma_relation_check
from .geometry import LevelSetField, UnitCellGrid, circle_levelset, extract_interface, porosity, surface_area
from .tables import (
    ParameterTable,
    PhiTable,
    SolverConfig,
    build_table,
    cell_parameters,
    reparametrize_by_phi,
    smoothness_check,
)
from .transport import CouplingMode, ReactionRate, TransportSetup, TransportState, run

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "CouplingMode", "DarcyData", "DarcyField", "DegeneracyError", "EffectiveTensor",
    "LevelSetField", "MacroGrid", "ParameterTable", "PhiTable", "PoroscaleError", "RadialScaling",
    "ReactionRate", "SolverConfig", "SolverError", "SpeedField", "TransportSetup", "TransportState",
    "UnitCellGrid", "ValidityHorizonError", "build_table", "cell_parameters", "circle_diffeo",
    "circle_levelset", "circle_path", "continuity_experiment", "darcy_time_slices", "diffusion_tensor",
    "evolve", "extract_interface", "permeability_tensor", "phi_sigma_relation_check", "porosity",
    "reparametrize_by_phi", "run", "smoothness_check", "solve_darcy", "solve_diffusion_cell",
    "solve_stokes_cell", "surface_area",
]
