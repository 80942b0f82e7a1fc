"""Grad-Shafranov equilibrium reconstruction on P1 triangular meshes.

The main entry points are :func:`reconstruct` for measured data and
:func:`run_twin` for synthetic experiments.
"""

from .errors import (
    ConvergenceError,
    DataError,
    FactorizationError,
    GSReconError,
    MeasurementError,
    MeshError,
    NoPlasmaError,
    NumericalError,
)
from .fem import StiffnessSystem, build_system, solve_direct
from .geometry import BoundaryKind, PlasmaDomain, flux_contour, plasma_domain
from .mesh import Mesh, bundled_mesh, load_mesh, save_mesh, tokamak_mesh
from .observations import MeasurementSet, load_measurements, save_measurements
from .profiles import BasisFamily, BasisKind, DerivedProfiles, ProfileCoefficients
from .reconstruction import (
    ConvergenceHistory,
    EquilibriumState,
    Mode,
    ReconstructionConfig,
    load_config,
    reconstruct,
    reconstruct_step,
)
from .twin import TwinSpec, load_twin_spec, manufacture_equilibrium, run_twin, synthesize_measurements

__version__ = "0.1.0"
