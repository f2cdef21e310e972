"""Small-scale numerical checks of the inequalities behind the solvers.

Every check returns an :class:`InequalityReport`; :func:`write_reports`
emits them as JSON lines.
"""

import itertools
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg

from .assembly import (FIRST, assemble_univariate, clamp_constraints, gauss_elements,
                       laplacian_kron, parameter_operators)
from .multigrid import CycleSpec, build_hierarchy, mg_cycle
from .smoothers import (SubspaceMassSmoother, build_splitting,
                        local_operator, sigma_for, sweep_order)
from .splines import make_space

REL = 1e-6


@dataclass
class InequalityReport:
    statement: str
    params: dict
    measured: float
    bound: float
    kind: str = "upper"  # "upper": measured <= bound, "lower": measured >= bound
    extra: dict = field(default_factory=dict)
    passed: bool = None

    def __post_init__(self):
        if self.passed is None:
            self.passed = bool(self.evaluate())

    def evaluate(self):
        if self.kind == "upper":
            return self.measured <= self.bound + REL * abs(self.bound)
        if self.kind == "lower":
            return self.measured >= self.bound - REL * abs(self.bound)
        raise ValueError(f"unknown report kind {self.kind!r}")

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)


def write_reports(reports, path):
    with open(path, "w", encoding="utf-8") as fh:
        for r in reports:
            fh.write(r.to_json() + "\n")


def _tensor_setup(d, p, level, variant=FIRST):
    space = make_space(p, level)
    uni = assemble_univariate(space)
    free = clamp_constraints(space, variant)
    return space, uni, free


def check_spectral_equivalence(d, p, level, tol=1e-8):
    """Generalized eigenvalues of ``(B_h, Bbar_h)`` on the parameter domain lie in ``[1, d]``."""
    space, uni, free = _tensor_setup(d, p, level)
    if d == 1:
        B = Bbar = uni.B.to_dense()[np.ix_(free, free)]
    else:
        B = laplacian_kron([uni] * d, [free] * d).to_dense()
        Bbar = parameter_operators([uni] * d, [free] * d)[0].to_dense()
    lam = scipy.linalg.eigvalsh(0.5 * (B + B.T), 0.5 * (Bbar + Bbar.T))
    lo, hi = float(lam.min()), float(lam.max())
    ok = lo >= 1.0 - tol and hi <= d + tol
    return InequalityReport("spectral-equivalence", {"d": d, "p": p, "level": level},
                            measured=hi, bound=float(d), kind="upper",
                            extra={"lambda_min": lo, "lambda_max": hi, "tol": tol}, passed=ok)


def inverse_inequality_constant(p, level):
    space, uni, free = _tensor_setup(1, p, level)
    spl = build_splitting(uni, free)
    lam = scipy.linalg.eigvalsh(spl.B0.to_dense(), spl.M0.to_dense())
    return float(lam.max()) * space.h ** 4


def check_inverse_inequality(p, level, bound=144.0):
    """``lambda_max(M0^{-1} B0) h^4`` on the interior subspace against ``bound``."""
    c = inverse_inequality_constant(p, level)
    return InequalityReport("inverse-inequality", {"p": p, "level": level},
                            measured=c, bound=bound, kind="upper")


def subspace_projections(splittings, Mbar):
    """Dense L2-orthogonal projections onto the ``2**d`` tensor subspaces."""
    d = len(splittings)
    out = {}
    for alpha in itertools.product((0, 1), repeat=d):
        facs = [s.E0.toarray() if a == 0 else s.E1 for s, a in zip(splittings, alpha)]
        if min(f.shape[1] for f in facs) == 0:
            continue
        E = facs[0]
        for f in facs[1:]:
            E = np.kron(E, f)
        G = E.T @ Mbar @ E
        out[alpha] = E @ np.linalg.solve(G, E.T @ Mbar)
    return out


def check_splitting_stability(d, p, level, seed=0, nvec=5, tol=1e-10):
    """L2 identity ``sum_alpha ||Q_alpha u||^2 = ||u||^2`` and the Bbar bracket.

    The bracket is the extreme generalized eigenvalues of
    ``(sum_alpha Q_alpha' Bbar Q_alpha, Bbar)``.
    """
    space, uni, free = _tensor_setup(d, p, level)
    spl = build_splitting(uni, free)
    Bbar_k, Mbar_k = parameter_operators([uni] * d, [free] * d)
    Bbar, Mbar = Bbar_k.to_dense(), Mbar_k.to_dense()
    Q = subspace_projections([spl] * d, Mbar)
    rng = np.random.default_rng(seed)
    err = 0.0
    for _ in range(nvec):
        u = rng.standard_normal(Mbar.shape[0])
        total = sum(float(q @ Mbar @ q) for q in (P @ u for P in Q.values()))
        ref = float(u @ Mbar @ u)
        err = max(err, abs(total - ref) / ref)
    S = sum(P.T @ Bbar @ P for P in Q.values())
    lam = scipy.linalg.eigvalsh(0.5 * (S + S.T), Bbar)
    lo, hi = float(lam.min()), float(lam.max())
    return InequalityReport("splitting-stability", {"d": d, "p": p, "level": level},
                            measured=err, bound=tol, kind="upper",
                            extra={"bracket_min": lo, "bracket_max": hi,
                                   "bracket_ratio": hi / lo})


def gauss_seidel_operator(A, dims=None):
    """Dense ``L = (D + Lo) D^{-1} (D + Up)`` in the sweep order of the smoother."""
    A = A.toarray() if hasattr(A, "toarray") else np.asarray(A)
    perm = sweep_order(dims) if dims is not None and len(dims) > 1 else np.arange(A.shape[0])
    Ap = A[np.ix_(perm, perm)]
    D = np.diag(np.diag(Ap))
    Lp = (D + np.tril(Ap, -1)) @ np.diag(1.0 / np.diag(Ap)) @ (D + np.triu(Ap, 1))
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.size)
    return Lp[np.ix_(inv, inv)]


def check_gs_pinch(d, p, level, geometry=None, tol=1e-9):
    """``lambda_min(L_h - B_h) >= -tol`` for symmetric Gauss-Seidel."""
    from .assembly import assemble_physical
    from .geometry import identity_map
    space, uni, free = _tensor_setup(d, p, level)
    G = identity_map(d) if geometry is None else geometry
    B = assemble_physical([space] * d, G).toarray()
    L = gauss_seidel_operator(B, (len(free),) * d)
    lam = float(scipy.linalg.eigvalsh(0.5 * (L + L.T) - B).min())
    scale = float(np.abs(np.diag(B)).max())
    return InequalityReport("gs-pinch", {"d": d, "p": p, "level": level},
                            measured=lam / scale, bound=-tol, kind="lower",
                            extra={"lambda_min_raw": lam, "diag_scale": scale})


def mass_pinch_constants(d, p, level, sigma="paper"):
    """Measured ``c`` in ``c^-1 Bbar <= L <= c (Bbar + h^-4 Mbar)`` for the mass smoother."""
    space, uni, free = _tensor_setup(d, p, level)
    spl = build_splitting(uni, free)
    sig = sigma_for(sigma, space.h, d)
    S = SubspaceMassSmoother([spl] * d, sig)
    L = np.linalg.inv(S.dense_inverse())
    L = 0.5 * (L + L.T)
    Bbar_k, Mbar_k = parameter_operators([uni] * d, [free] * d)
    Bbar, Mbar = Bbar_k.to_dense(), Mbar_k.to_dense()
    lo = float(scipy.linalg.eigvalsh(L, Bbar).min())
    hi = float(scipy.linalg.eigvalsh(L, Bbar + Mbar / space.h ** 4).max())
    return {"lower": lo, "upper": hi, "c": max(1.0 / lo, hi)}


def check_local_operator_bound(d, p, level, sigma="paper"):
    """Each ``L_alpha`` dominates the restriction of ``Bbar`` to ``V_alpha``."""
    space, uni, free = _tensor_setup(d, p, level)
    spl = build_splitting(uni, free)
    sig = sigma_for(sigma, space.h, d)
    Bbar = parameter_operators([uni] * d, [free] * d)[0].to_dense()
    worst = np.inf
    for alpha in itertools.product((0, 1), repeat=d):
        facs = [spl.E0.toarray() if a == 0 else spl.E1 for a in alpha]
        if min(f.shape[1] for f in facs) == 0:
            continue
        E = facs[0]
        for f in facs[1:]:
            E = np.kron(E, f)
        La = local_operator([spl] * d, alpha, sig)
        lam = scipy.linalg.eigvalsh(La, E.T @ Bbar @ E).min()
        worst = min(worst, float(lam))
    return InequalityReport("local-operator-dominance", {"d": d, "p": p, "level": level},
                            measured=worst, bound=1.0, kind="lower")


# -- approximation order ---------------------------------------------------

def _leibniz_derivative(x, k, poly, freq):
    """``k``-th derivative of ``poly(x) * sin(freq x)``."""
    out = np.zeros_like(x)
    for j in range(k + 1):
        dp = poly.deriv(j) if j else poly
        ds = freq ** (k - j) * np.sin(freq * x + (k - j) * np.pi / 2)
        out += math.comb(k, j) * dp(x) * ds
    return out


DEFAULT_POLY = np.polynomial.Polynomial([0.0, 0.0, 1.0, -2.0, 1.0])  # x^2 (1-x)^2


def projection_errors(p, level, poly=DEFAULT_POLY, freq=7.0, nq=None):
    """H2-seminorm and L2 errors of the H2-Galerkin projection onto the clamped space."""
    space = make_space(p, level)
    uni = assemble_univariate(space)
    free = clamp_constraints(space)
    nq = p + 8 if nq is None else nq
    pts, wts, vals = gauss_elements(space, nq, 2)
    u2 = _leibniz_derivative(pts, 2, poly, freq)
    rhs = np.zeros(space.n)
    for e in range(space.m):
        rhs[e:e + p + 1] += np.einsum("q,q,qk->k", wts[e], u2[e], vals[e, :, 2, :])
    B = uni.B.to_dense()[np.ix_(free, free)]
    c = np.zeros(space.n)
    c[free] = np.linalg.solve(B, rhs[free])
    idx = np.arange(space.m)[:, None] + np.arange(p + 1)[None, :]
    uh2 = np.einsum("eqk,ek->eq", vals[:, :, 2, :], c[idx])
    uh0 = np.einsum("eqk,ek->eq", vals[:, :, 0, :], c[idx])
    u0 = _leibniz_derivative(pts, 0, poly, freq)
    h2 = math.sqrt(float(np.sum(wts * (u2 - uh2) ** 2)))
    l2 = math.sqrt(float(np.sum(wts * (u0 - uh0) ** 2)))
    return h2, l2, space.h


def seminorm(k, poly=DEFAULT_POLY, freq=7.0, n=200):
    x, w = np.polynomial.legendre.leggauss(n)
    x = 0.5 * (x + 1.0)
    return math.sqrt(0.5 * float(np.sum(w * _leibniz_derivative(x, k, poly, freq) ** 2)))


def check_projection_order(p, levels=range(3, 7), ratio_band=(3.5, 4.5)):
    """Error ratios between successive levels and the ``2 h^2 |u|_H4`` envelope."""
    levels = list(levels)
    errs = [projection_errors(p, lv) for lv in levels + [levels[-1] + 1]]
    ratios = [errs[i][0] / errs[i + 1][0] for i in range(len(levels))]
    u4 = seminorm(4)
    consts = [e[0] / (e[2] ** 2 * u4) for e in errs]
    in_band = all(ratio_band[0] <= r <= ratio_band[1] for r in ratios)
    env_ok = max(consts) <= 2.0 * (1 + REL)
    l2_rates = [errs[i][1] / errs[i + 1][1] for i in range(len(levels))]
    return InequalityReport(
        "projection-order", {"p": p, "levels": levels},
        measured=max(consts), bound=2.0, kind="upper",
        extra={"h2_ratios": ratios, "l2_ratios": l2_rates, "constants": consts,
               "h2_errors": [e[0] for e in errs], "band": list(ratio_band),
               "ratios_in_band": in_band, "envelope_ok": env_ok},
        passed=in_band and env_ok)


# -- two-grid contraction --------------------------------------------------

def two_grid_operator(H, nu, level=None):
    """Dense error propagation of one symmetric two-grid step, built column-wise."""
    level = len(H.levels) - 1 if level is None else level
    N = H.levels[level].ndofs
    spec = CycleSpec(cycle="two-grid", nu_pre=nu, nu_post=nu)
    E = np.empty((N, N))
    zero = np.zeros(N)
    for i in range(N):
        u = np.zeros(N)
        u[i] = 1.0
        E[:, i] = mg_cycle(H, spec, level, u, zero)
    return E


def energy_norm(E, A):
    """``||E||_A = sqrt(lambda_max(E' A E, A))``."""
    lam = scipy.linalg.eigvalsh(0.5 * (E.T @ A @ E + (E.T @ A @ E).T), A)
    return math.sqrt(max(float(lam.max()), 0.0))


def two_grid_contraction(d=2, p=4, level=4, nus=(1, 2, 4, 8), smoother="mass", sigma="paper",
                         tau=1.0):
    """Energy-norm contraction ``q(nu)`` of the two-grid method for each ``nu``."""
    H = build_hierarchy(p, level, level_min=level - 1, d=d, smoother_kind=smoother,
                        sigma=sigma, tau=tau)
    A = H.levels[-1].dense()
    return {nu: energy_norm(two_grid_operator(H, nu), A) for nu in nus}


def check_two_grid_law(d=2, p=4, level=4, nus=(1, 2, 4, 8), max_ratio=0.75):
    q = two_grid_contraction(d, p, level, nus)
    ratios = [q[b] / q[a] for a, b in zip(nus[:-1], nus[1:])]
    return InequalityReport("two-grid-smoothing-law", {"d": d, "p": p, "level": level},
                            measured=max(ratios), bound=max_ratio, kind="upper",
                            extra={"q": {str(k): v for k, v in q.items()}, "ratios": ratios})


DEFAULT_SWEEP = {
    2: [(3, 2), (3, 3), (4, 2), (4, 3), (5, 3), (6, 3), (8, 3)],
    3: [(3, 2), (3, 3), (4, 2), (4, 3), (5, 2), (6, 2), (7, 2)],
}


def run_suite(sweep=None, inverse_bound=144.0, seed=0):
    """Theorem suite: spectral equivalence, inverse inequality, splitting, GS pinch."""
    sweep = DEFAULT_SWEEP if sweep is None else sweep
    reports = []
    for d, pairs in sweep.items():
        for p, lv in pairs:
            reports.append(check_spectral_equivalence(d, p, lv))
            reports.append(check_splitting_stability(d, p, lv, seed=seed))
            reports.append(check_gs_pinch(d, p, lv))
    inv_pairs = sorted({(p, lv) for pairs in sweep.values() for p, lv in pairs})
    for p, lv in inv_pairs:
        reports.append(check_inverse_inequality(p, max(lv, 2), bound=inverse_bound))
    return reports
