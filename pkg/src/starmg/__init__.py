"""Matrix-free spectral-element Helmholtz solver with a vertex-star
Schwarz smoother and p-multigrid on Cartesian hexahedral grids."""

from .basis import Basis1D, FastDiag1D, Interp1D, generalized_eigen, gll_basis, interpolation_matrix, weight_poly
from .grid import BC, CartesianMesh, PointClass, make_mesh_homogeneous, make_mesh_stretched
from .helmholtz import HelmholtzOperator
from .multigrid import LevelHierarchy, MgConfig, SolverReport, random_rhs, solve, solve_dcg, solve_kmg, solve_kvmg, solve_mg
from .schwarz import SchwarzSmoother, StarOperator, build_element_block, build_star

__version__ = "0.1.0"
