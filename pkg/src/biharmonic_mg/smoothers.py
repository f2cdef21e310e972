"""Multigrid smoothers: symmetric Gauss-Seidel, subspace-corrected mass, hybrid.

The mass smoother splits the clamped univariate space ``S0`` into
``V0`` (functions whose even derivatives of order ``2 <= 2l < p`` vanish at
both ends) and its L2-orthogonal complement ``V1`` inside ``S0``.  In ``d``
dimensions the ``2**d`` tensor combinations ``V_alpha`` each get a local
operator ``L_alpha`` that is cheap to invert, and the smoother is
``L^{-1} = sum_alpha E_alpha L_alpha^{-1} E_alpha'``.
"""

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse

from . import _kernels
from .linalg import BandedMatrix, banded_cholesky, mode_apply
from .splines import basis_derivatives


class SplittingError(ValueError):
    pass


def boundary_functionals(space, free):
    """Rows ``u^(2l)(0)`` and ``u^(2l)(1)`` for ``2 <= 2l < p`` on the free basis."""
    p = space.p
    orders = list(range(2, p, 2))
    if not orders:
        return np.zeros((0, len(free)))
    nd = orders[-1]
    rows = []
    col = np.full(space.n, -1)
    col[free] = np.arange(len(free))
    for x in (0.0, 1.0):
        span, vals = basis_derivatives(space.knots, p, [x], nd)
        first = int(span[0]) - p
        for r in orders:
            row = np.zeros(len(free))
            for k in range(p + 1):
                c = col[first + k]
                if c >= 0:
                    row[c] = vals[0, r, k]
            rows.append(row)
    return np.array(rows)


def _nullspace_basis(C, tol=1e-10):
    """Null-space basis ``E`` with identity rows on non-pivot columns.

    Returns ``(E, pivots)``; raises :class:`SplittingError` if ``C`` is rank
    deficient.
    """
    nc, n = C.shape
    if nc == 0:
        return np.eye(n), np.arange(0)
    Cn = C / np.linalg.norm(C, axis=1, keepdims=True)
    _, R, perm = scipy.linalg.qr(Cn, pivoting=True, mode="economic")
    diag = np.abs(np.diag(R))
    if diag.size < nc or diag.min() <= tol * diag.max():
        raise SplittingError(
            f"boundary constraints are rank deficient ({nc} constraints on {n} functions)")
    piv = np.sort(perm[:nc])
    rest = np.setdiff1d(np.arange(n), piv)
    E = np.zeros((n, n - nc))
    E[rest, np.arange(n - nc)] = 1.0
    E[piv, :] = -np.linalg.solve(Cn[:, piv], Cn[:, rest])
    E[np.abs(E) < 1e-14] = 0.0
    return E, piv


@dataclass
class UnivariateSplitting:
    """Embeddings of ``V0`` and ``V1`` in the free basis plus restricted matrices."""

    h: float
    E0: scipy.sparse.csr_matrix
    E1: np.ndarray
    M0: BandedMatrix
    B0: BandedMatrix
    M1: np.ndarray
    B1: np.ndarray
    C: np.ndarray

    @property
    def n0(self):
        return self.E0.shape[1]

    @property
    def n1(self):
        return self.E1.shape[1]

    @property
    def n_free(self):
        return self.E0.shape[0]


def build_splitting(uni, free):
    """Split the free univariate space into ``V0`` and its L2 complement ``V1``.

    ``V1`` is spanned by ``M^{-1} C'`` (``C`` = boundary functionals), made
    orthonormal in the mass inner product, so ``M1`` is the identity.
    """
    space = uni.space
    if space.p < 3:
        raise SplittingError("the boundary splitting needs spline degree p >= 3")
    M = uni.M.to_dense()[np.ix_(free, free)]
    B = uni.B.to_dense()[np.ix_(free, free)]
    C = boundary_functionals(space, free)
    E0, _ = _nullspace_basis(C)
    n1 = C.shape[0]
    if n1:
        Mf = banded_cholesky(BandedMatrix.from_dense(M, bandwidth=space.p))
        Y = Mf.solve((C / np.linalg.norm(C, axis=1, keepdims=True)).T)
        G = Y.T @ M @ Y
        Lg = np.linalg.cholesky(0.5 * (G + G.T))
        E1 = scipy.linalg.solve_triangular(Lg, Y.T, lower=True).T
    else:
        E1 = np.zeros((len(free), 0))
    M0 = E0.T @ M @ E0
    B0 = E0.T @ B @ E0
    M1 = E1.T @ M @ E1
    B1 = E1.T @ B @ E1
    sym = lambda A: 0.5 * (A + A.T)
    return UnivariateSplitting(
        h=space.h, E0=scipy.sparse.csr_matrix(E0), E1=E1,
        M0=BandedMatrix.from_dense(sym(M0), tol=1e-14 * max(1.0, np.abs(M0).max(initial=0.0))),
        B0=BandedMatrix.from_dense(sym(B0), tol=1e-14 * max(1.0, np.abs(B0).max(initial=0.0))),
        M1=sym(M1), B1=sym(B1), C=C)


def local_operator_ones(splittings, ones, sigma):
    """Dense factor of ``L_alpha`` acting on the ``V1`` directions ``ones``.

    ``L_alpha = (kron of M0 over zero directions) x K`` with
    ``K = sum_{j in ones} (B1 at j, M1 elsewhere) + (d - |ones|) sigma (M1 x .. x M1)``.
    """
    d = len(splittings)
    K = (d - len(ones)) * sigma * _kron([splittings[k].M1 for k in ones])
    for j in ones:
        K = K + _kron([splittings[k].B1 if k == j else splittings[k].M1 for k in ones])
    return K


def _kron(mats):
    T = np.ones((1, 1))
    for A in mats:
        T = np.kron(T, A)
    return T


def local_operator(splittings, alpha, sigma):
    """Dense ``L_alpha`` (small instances, for checks)."""
    d = len(splittings)
    L = 0.0
    for j in range(d):
        if alpha[j]:
            L = L + _kron([splittings[k].B1 if k == j else
                           (splittings[k].M1 if alpha[k] else splittings[k].M0.to_dense())
                           for k in range(d)])
    L = L + (d - sum(alpha)) * sigma * _kron(
        [splittings[k].M1 if alpha[k] else splittings[k].M0.to_dense() for k in range(d)])
    return L


class SubspaceMassSmoother:
    """Additive subspace-corrected mass smoother on the clamped tensor space."""

    def __init__(self, splittings, sigma, tau=1.0):
        self.splittings = list(splittings)
        self.d = len(splittings)
        self.sigma = float(sigma)
        self.tau = float(tau)
        self.dims = tuple(s.n_free for s in splittings)
        self.M0_factors = [banded_cholesky(s.M0) if s.n0 else None for s in splittings]
        self.E0T = [s.E0.T.tocsr() for s in splittings]
        self.blocks = []
        for alpha in itertools.product((0, 1), repeat=self.d):
            sizes = [s.n1 if a else s.n0 for s, a in zip(splittings, alpha)]
            if min(sizes) == 0:
                continue
            ones = [k for k in range(self.d) if alpha[k]]
            K = local_operator_ones(self.splittings, ones, self.sigma)
            self.blocks.append((alpha, ones, scipy.linalg.cho_factor(K)))

    def _embed_t(self, k, a):
        return self.E0T[k] if a == 0 else self.splittings[k].E1.T

    def _embed(self, k, a):
        return self.splittings[k].E0 if a == 0 else self.splittings[k].E1

    def apply(self, r):
        """``tau * sum_alpha E_alpha L_alpha^{-1} E_alpha' r``."""
        R = np.asarray(r, dtype=float).reshape(self.dims)
        out = np.zeros(self.dims)
        d = self.d
        # projections are shared by blocks with the same leading pattern
        cache = {}
        for alpha, ones, fac in self.blocks:
            Y = R
            for k in range(d):
                key = alpha[:k + 1]
                if key in cache:
                    Y = cache[key]
                    continue
                Y = mode_apply(self._embed_t(k, alpha[k]), Y, k)
                cache[key] = Y
            for k in range(d):
                if alpha[k] == 0:
                    Y = mode_apply(self.M0_factors[k].solve, Y, k)
            if ones:
                Ym = np.moveaxis(Y, ones, list(range(len(ones))))
                shape = Ym.shape
                Ym = scipy.linalg.cho_solve(fac, Ym.reshape(int(np.prod(shape[:len(ones)])), -1))
                Y = np.moveaxis(Ym.reshape(shape), list(range(len(ones))), ones)
            else:
                Y = Y / fac[0][0, 0] ** 2
            for k in range(d):
                Y = mode_apply(self._embed(k, alpha[k]), Y, k)
            out += Y
        return self.tau * out.ravel()

    def step(self, u, f, apply_A):
        u += self.apply(f - apply_A(u))

    post_step = step

    def dense_inverse(self):
        """``sum_alpha E_alpha L_alpha^{-1} E_alpha'`` as a dense matrix (without tau)."""
        N = int(np.prod(self.dims))
        Linv = np.zeros((N, N))
        for alpha, _, _ in self.blocks:
            E = _kron([self._embed(k, alpha[k]).toarray() if alpha[k] == 0
                       else self._embed(k, alpha[k]) for k in range(self.d)])
            L = local_operator(self.splittings, alpha, self.sigma)
            Linv += E @ np.linalg.solve(L, E.T)
        return Linv


def sigma_for(rule, h, d, hybrid=False):
    """Inverse-inequality parameter for grid size ``h``.

    ``paper``: ``1/sigma = 0.015 h^4`` (d=2, and the hybrid smoother in any d)
    or ``0.020 h^4`` (d=3); ``theory``: ``sigma = 144 h^-4``; a number ``c``
    gives ``sigma = c h^-4``.
    """
    if rule == "paper":
        c = 0.015 if (d == 2 or hybrid) else 0.020
        return 1.0 / (c * h ** 4)
    if rule == "theory":
        return 144.0 / h ** 4
    return float(rule) / h ** 4


def sweep_order(dims):
    """Row-major indices listed with the first tensor index running fastest."""
    idx = np.arange(int(np.prod(dims))).reshape(dims)
    return idx.transpose(tuple(range(len(dims) - 1, -1, -1))).ravel()


class GaussSeidelSmoother:
    """Symmetric Gauss-Seidel (forward then backward sweep) on a CSR matrix.

    Unknowns are visited lexicographically with the first tensor index
    running fastest when ``dims`` is given, otherwise in storage order.
    """

    def __init__(self, A, dims=None):
        A = scipy.sparse.csr_matrix(A)
        diag = A.diagonal()
        zero = np.nonzero(diag == 0.0)[0]
        if zero.size:
            raise ZeroDivisionError(f"zero diagonal entry in row {zero[0]}")
        self.A = A
        self.perm = None
        if dims is not None and len(dims) > 1:
            self.perm = sweep_order(dims)
            A = A[self.perm][:, self.perm].tocsr()
        A.sort_indices()
        self._arrays = (A.indptr.astype(np.int64), A.indices.astype(np.int64), A.data)

    def _sweep(self, kernel, u, f):
        f = np.asarray(f, dtype=float)
        if self.perm is None:
            kernel(*self._arrays, u, f)
            return
        up = u[self.perm]
        kernel(*self._arrays, up, np.ascontiguousarray(f[self.perm]))
        u[self.perm] = up

    def forward(self, u, f):
        self._sweep(_kernels.gs_forward, u, f)

    def backward(self, u, f):
        self._sweep(_kernels.gs_backward, u, f)

    def step(self, u, f, apply_A=None):
        if self.perm is None:
            self.forward(u, f)
            self.backward(u, f)
            return
        up = u[self.perm]
        fp = np.ascontiguousarray(np.asarray(f, dtype=float)[self.perm])
        _kernels.gs_forward(*self._arrays, up, fp)
        _kernels.gs_backward(*self._arrays, up, fp)
        u[self.perm] = up

    post_step = step


class HybridSmoother:
    """Forward Gauss-Seidel, one damped mass-smoother step, backward Gauss-Seidel."""

    def __init__(self, A, mass, tau_mass, dims=None):
        self.gs = GaussSeidelSmoother(A, dims)
        self.mass = mass
        self.tau_mass = float(tau_mass)

    def step(self, u, f, apply_A=None):
        self.gs.forward(u, f)
        if self.tau_mass:
            r = f - self.gs.A @ u
            u += self.tau_mass * (self.mass.apply(r) / self.mass.tau)
        self.gs.backward(u, f)

    post_step = step


def apply_mass_smoother(S, residual):
    return S.apply(residual)


def apply_gs_symmetric(G, u, rhs):
    G.step(u, rhs)


def apply_hybrid(H, u, rhs):
    H.step(u, rhs)
