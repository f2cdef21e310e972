"""Geometric multigrid for the clamped biharmonic problem with tensor-product splines."""

from .splines import SplineSpace, make_space, refinement_matrix
from .geometry import GeometryMap, builtin_domain, load_geometry, save_geometry
from .assembly import build_system, assemble_physical, assemble_rhs
from .smoothers import (GaussSeidelSmoother, HybridSmoother, SubspaceMassSmoother,
                        build_splitting)
from .multigrid import CycleSpec, MultigridHierarchy, build_hierarchy, mg_cycle, solve

__all__ = [
    "SplineSpace", "make_space", "refinement_matrix",
    "GeometryMap", "builtin_domain", "load_geometry", "save_geometry",
    "build_system", "assemble_physical", "assemble_rhs",
    "GaussSeidelSmoother", "HybridSmoother", "SubspaceMassSmoother", "build_splitting",
    "CycleSpec", "MultigridHierarchy", "build_hierarchy", "mg_cycle", "solve",
]

__version__ = "0.1.0"
