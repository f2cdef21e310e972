"""Geometric multigrid hierarchy, V/W/two-grid cycles and the PCG driver."""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse

from .assembly import (FIRST, assemble_physical, assemble_rhs, assemble_univariate,
                       clamp_constraints, parameter_operators)
from .geometry import identity_map
from .linalg import KroneckerSum, kron_apply, mode_apply, pcg
from .smoothers import (GaussSeidelSmoother, HybridSmoother, SplittingError,
                        SubspaceMassSmoother, build_splitting, sigma_for)
from .splines import make_space, refinement_matrix

SMOOTHERS = ("gs", "mass", "hybrid")
CYCLES = ("v", "w", "two-grid")
TAU_MASS_DEFAULT = {2: 0.125, 3: 0.09}


@dataclass(frozen=True)
class CycleSpec:
    cycle: str = "v"
    nu_pre: int = 1
    nu_post: int = 1
    tau: float = 1.0

    def __post_init__(self):
        if self.cycle not in CYCLES:
            raise ValueError(f"unknown cycle type {self.cycle!r}; choose from {CYCLES}")
        if self.nu_pre < 0 or self.nu_post < 0 or self.nu_pre + self.nu_post < 1:
            raise ValueError("need nu_pre, nu_post >= 0 and at least one smoothing step")


@dataclass
class Level:
    level: int
    spaces: list
    frees: list
    A: object  # CSR matrix or KroneckerSum
    smoother: object = None
    prolong: list = None  # univariate maps from the next coarser level
    factor: object = None

    @property
    def dims(self):
        return tuple(len(f) for f in self.frees)

    @property
    def ndofs(self):
        return int(np.prod(self.dims))

    def apply(self, x):
        if isinstance(self.A, KroneckerSum):
            return kron_apply(self.A, x)
        return self.A @ x

    def dense(self):
        if isinstance(self.A, KroneckerSum):
            return self.A.to_dense()
        return self.A.toarray()


@dataclass
class MultigridHierarchy:
    p: int
    d: int
    smoother_kind: str
    levels: list  # coarse to fine
    fine_B: object = None  # physical stiffness on the finest level (CSR)
    meta: dict = field(default_factory=dict)

    @property
    def level_min(self):
        return self.levels[0].level

    @property
    def level_max(self):
        return self.levels[-1].level

    def prolong(self, i, xc):
        """Prolongation from level index ``i-1`` to ``i``."""
        L = self.levels[i]
        X = xc.reshape(self.levels[i - 1].dims)
        for k, R in enumerate(L.prolong):
            X = mode_apply(R, X, k)
        return X.ravel()

    def restrict(self, i, r):
        L = self.levels[i]
        X = r.reshape(L.dims)
        for k, R in enumerate(L.prolong):
            X = mode_apply(R.T, X, k)
        return X.ravel()

    def prolongation_matrix(self, i):
        P = scipy.sparse.csr_matrix(np.ones((1, 1)))
        for R in self.levels[i].prolong:
            P = scipy.sparse.kron(P, R, format="csr")
        return P

    def factorize(self, i):
        L = self.levels[i]
        if L.factor is None:
            L.factor = scipy.linalg.cho_factor(L.dense())
        return L.factor


def free_dimension(p, level, variant=FIRST):
    return len(clamp_constraints(make_space(p, level), variant))


def default_level_min(p, smoother_kind="gs", level_max=None):
    """Smallest level with a nonempty clamped space (and a valid splitting when needed)."""
    for lv in range(0, 64):
        if free_dimension(p, lv) < 1:
            continue
        if smoother_kind == "gs":
            return lv
        # the smoothed levels start one above the coarsest
        try:
            space = make_space(p, lv + 1)
            build_splitting(assemble_univariate(space), clamp_constraints(space))
        except SplittingError:
            continue
        return lv
    raise ValueError(f"no admissible coarse level for p={p}")


def _restricted_refinement(coarse, fine, free_c, free_f):
    R = refinement_matrix(coarse)
    return R[free_f][:, free_c].tocsr()


def build_hierarchy(p, level_max, level_min=None, d=2, geometry=None, smoother_kind="gs",
                    sigma="paper", tau=1.0, tau_mass=None, variant=FIRST):
    """Assemble operators, prolongations and smoothers on levels ``level_min..level_max``.

    ``gs`` and ``hybrid`` use the physical stiffness on every level; ``mass``
    uses the parameter-domain operator ``Bbar`` on the levels below the
    finest.  The finest physical stiffness is kept in ``fine_B`` for the
    outer iteration.
    """
    if smoother_kind not in SMOOTHERS:
        raise ValueError(f"unknown smoother {smoother_kind!r}; choose from {SMOOTHERS}")
    if p < 3:
        raise ValueError("the multigrid solver needs spline degree p >= 3")
    G = identity_map(d) if geometry is None else geometry
    if G.dim != d:
        raise ValueError(f"geometry has dimension {G.dim}, expected {d}")
    if level_min is None:
        level_min = default_level_min(p, smoother_kind)
    if level_min > level_max:
        raise ValueError(f"level_min={level_min} exceeds level_max={level_max}")
    if free_dimension(p, level_min, variant) < 1:
        raise ValueError(f"clamped space is empty at level {level_min} for p={p}")
    if tau_mass is None:
        tau_mass = TAU_MASS_DEFAULT.get(d, 0.125)
    levels = []
    fine_B = None
    for lv in range(level_min, level_max + 1):
        space = make_space(p, lv)
        spaces = [space] * d
        free = clamp_constraints(space, variant)
        frees = [free] * d
        uni = assemble_univariate(space)
        if smoother_kind == "mass":
            Bbar, _ = parameter_operators([uni] * d, frees)
            A = Bbar
        else:
            A = assemble_physical(spaces, G, variant)
        L = Level(level=lv, spaces=spaces, frees=frees, A=A)
        if levels:
            prev = levels[-1]
            R = _restricted_refinement(prev.spaces[0], space, prev.frees[0], free)
            L.prolong = [R] * d
            if smoother_kind == "gs":
                L.smoother = GaussSeidelSmoother(A, L.dims)
            else:
                spl = build_splitting(uni, free)
                sig = sigma_for(sigma, space.h, d, hybrid=(smoother_kind == "hybrid"))
                mass = SubspaceMassSmoother([spl] * d, sig, tau=tau)
                L.smoother = mass if smoother_kind == "mass" else HybridSmoother(A, mass, tau_mass, L.dims)
        levels.append(L)
    top = levels[-1]
    if smoother_kind == "mass" or not scipy.sparse.issparse(top.A):
        fine_B = assemble_physical(top.spaces, G, variant)
    else:
        fine_B = top.A
    H = MultigridHierarchy(p=p, d=d, smoother_kind=smoother_kind, levels=levels, fine_B=fine_B,
                           meta={"level_min": level_min, "sigma": sigma, "tau": tau,
                                 "tau_mass": tau_mass, "variant": variant})
    H.geometry = G
    return H


def mg_cycle(H, spec, level, u, rhs):
    """One cycle on hierarchy index ``level`` (0 = coarsest), updating ``u`` in place."""
    L = H.levels[level]
    if level == 0:
        u[:] = scipy.linalg.cho_solve(H.factorize(0), rhs)
        return u
    for _ in range(spec.nu_pre):
        L.smoother.step(u, rhs, L.apply)
    r = rhs - L.apply(u)
    rc = H.restrict(level, r)
    if spec.cycle == "two-grid":
        ec = scipy.linalg.cho_solve(H.factorize(level - 1), rc)
    else:
        ec = np.zeros_like(rc)
        gamma = 2 if spec.cycle == "w" else 1
        for _ in range(gamma if level > 1 else 1):
            mg_cycle(H, spec, level - 1, ec, rc)
    u += H.prolong(level, ec)
    for _ in range(spec.nu_post):
        L.smoother.post_step(u, rhs, L.apply)
    return u


@dataclass
class SolveResult:
    u: np.ndarray
    iterations: int
    converged: bool
    residuals: list


def preconditioner(H, spec=CycleSpec()):
    top = len(H.levels) - 1

    def apply(r):
        z = np.zeros_like(r)
        return mg_cycle(H, spec, top, z, r)
    return apply


def solve(H, spec=CycleSpec(), rhs=None, seed=0, rel_tol=1e-8, max_iter=2000, x0=None):
    """PCG on the finest physical stiffness, one multigrid cycle as preconditioner.

    The initial iterate is uniform random in ``[-1, 1]^N`` from ``seed``
    unless ``x0`` is given.  A zero right-hand side returns zero immediately.
    """
    top = H.levels[-1]
    if rhs is None:
        from .assembly import paper_load
        rhs = assemble_rhs(top.spaces, H.geometry, H.meta["variant"], f=paper_load(H.d))
    rhs = np.asarray(rhs, dtype=float)
    if not np.any(rhs):
        return SolveResult(np.zeros_like(rhs), 0, True, [0.0])
    if x0 is None:
        x0 = np.random.default_rng(seed).uniform(-1.0, 1.0, rhs.shape[0])
    B = H.fine_B
    res = pcg(lambda x: B @ x, preconditioner(H, spec), rhs, x0=x0, rel_tol=rel_tol,
              max_iter=max_iter)
    return SolveResult(res.x, res.iterations, res.converged, res.residuals)
