"""Galerkin assembly for the biharmonic problem on tensor-product spline spaces.

Univariate matrices (mass ``M``, second-derivative stiffness ``B`` and the
mixed matrix ``C[i, j] = int phi_i phi_j''``) are assembled with ``p+1``
Gauss points per element.  Tensor-product operators are either kept in
Kronecker form (:class:`~biharmonic_mg.linalg.KroneckerSum`) or converted to
CSR over the free degrees of freedom.  Boundary conditions are imposed by
removing basis functions.
"""

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.sparse

from . import _kernels
from .geometry import GeometryError, _derivative_indices
from .linalg import BandedMatrix, KroneckerSum, mode_apply
from .splines import basis_derivatives, collocation_matrix

FIRST = "first"
SECOND = "second"
NATURAL = "natural"
VARIANTS = (FIRST, SECOND, NATURAL)


def paper_load(d):
    """``f(x) = d^2 pi^4 prod_j sin(pi x_j)`` acting on points of shape ``(..., d)``."""
    def f(X):
        return d ** 2 * np.pi ** 4 * np.prod(np.sin(np.pi * X), axis=-1)
    return f


def clamp_constraints(space, variant=FIRST):
    """Indices of the basis functions kept after imposing the boundary conditions.

    ``first`` (clamped): drops the first two and last two functions, i.e.
    ``u = u' = 0`` at both ends.  ``second``: drops only the first and last.
    ``natural``: keeps every function.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown boundary variant {variant!r}")
    if variant == NATURAL:
        return np.arange(space.n)
    k = 2 if variant == FIRST else 1
    if variant == FIRST and space.p < 2:
        raise ValueError("clamped boundary conditions need spline degree p >= 2")
    if space.n - 2 * k < 1:
        return np.arange(0)
    return np.arange(k, space.n - k)


def gauss_elements(space, nq=None, nderiv=2):
    """Quadrature points/weights per element and basis derivatives there.

    Returns ``(pts, wts, vals)`` with shapes ``(m, nq)``, ``(m, nq)`` and
    ``(m, nq, nderiv+1, p+1)``; ``vals[e, :, :, k]`` belongs to basis
    function ``e + k``.
    """
    nq = space.p + 1 if nq is None else nq
    x, w = np.polynomial.legendre.leggauss(nq)
    a = space.breaks[:-1]
    h = space.h
    pts = a[:, None] + 0.5 * (x[None, :] + 1.0) * h
    wts = np.broadcast_to(0.5 * h * w, pts.shape).copy()
    _, vals = basis_derivatives(space.knots, space.p, pts.ravel(), nderiv)
    return pts, wts, vals.reshape(space.m, nq, nderiv + 1, space.p + 1)


def _assemble_1d(space, r, s, nq=None):
    """Dense ``A[i, j] = int D^r phi_i D^s phi_j``."""
    p = space.p
    pts, wts, vals = gauss_elements(space, nq, max(r, s))
    loc = np.einsum("eq,eqi,eqj->eij", wts, vals[:, :, r, :], vals[:, :, s, :])
    A = np.zeros((space.n, space.n))
    for e in range(space.m):
        A[e:e + p + 1, e:e + p + 1] += loc[e]
    return A


@dataclass
class UnivariateSystem:
    space: object
    M: BandedMatrix
    B: BandedMatrix
    K: BandedMatrix
    C: np.ndarray

    @property
    def bandwidth(self):
        return self.space.p


def assemble_univariate(space, nq=None):
    """Mass ``M``, ``B = (phi'', phi'')``, ``K = (phi', phi')`` and ``C = (phi, phi'')``."""
    p = space.p
    M = _assemble_1d(space, 0, 0, nq)
    B = _assemble_1d(space, 2, 2, nq)
    K = _assemble_1d(space, 1, 1, nq)
    C = _assemble_1d(space, 0, 2, nq)
    sym = lambda A: 0.5 * (A + A.T)
    return UnivariateSystem(space=space,
                            M=BandedMatrix.from_dense(sym(M), bandwidth=p),
                            B=BandedMatrix.from_dense(sym(B), bandwidth=p),
                            K=BandedMatrix.from_dense(sym(K), bandwidth=p),
                            C=C)


def restrict(A, free):
    """Principal submatrix on ``free`` as CSR."""
    D = A.to_dense() if isinstance(A, BandedMatrix) else np.asarray(A)
    return scipy.sparse.csr_matrix(D[np.ix_(free, free)])


def parameter_operators(unis, frees):
    """Kronecker forms of the cross-term-free stiffness and the mass on free dofs.

    ``Bbar = sum_k M x .. x B (at k) x .. x M`` and ``Mbar = M x .. x M``.
    """
    d = len(unis)
    Ms = [restrict(u.M, f) for u, f in zip(unis, frees)]
    Bs = [restrict(u.B, f) for u, f in zip(unis, frees)]
    Bbar = KroneckerSum()
    for k in range(d):
        Bbar.add(1.0, [Bs[a] if a == k else Ms[a] for a in range(d)])
    Mbar = KroneckerSum().add(1.0, Ms)
    return Bbar, Mbar


def laplacian_kron(unis, frees=None):
    """Kronecker form of ``(Lap u, Lap v)`` on the parameter domain.

    Row index = test function, column index = trial function.
    """
    d = len(unis)
    if frees is None:
        frees = [np.arange(u.space.n) for u in unis]
    M = [restrict(u.M, f) for u, f in zip(unis, frees)]
    B = [restrict(u.B, f) for u, f in zip(unis, frees)]
    # trial differentiated twice, test undifferentiated: C'[test, trial]
    Ct = [scipy.sparse.csr_matrix(u.C.T[np.ix_(f, f)]) for u, f in zip(unis, frees)]
    Cs = [scipy.sparse.csr_matrix(u.C[np.ix_(f, f)]) for u, f in zip(unis, frees)]
    K = KroneckerSum()
    for a in range(d):
        for b in range(d):
            if a == b:
                K.add(1.0, [B[k] if k == a else M[k] for k in range(d)])
            else:
                K.add(1.0, [Ct[k] if k == a else (Cs[k] if k == b else M[k]) for k in range(d)])
    return K


# -- tensor-banded storage ---------------------------------------------------

def _band_rows(A, p):
    """``out[i, o] = A[i, i + o - p]`` (zero outside the matrix)."""
    A = A.to_dense() if isinstance(A, BandedMatrix) else np.asarray(A)
    n = A.shape[0]
    out = np.zeros((n, 2 * p + 1))
    for o in range(2 * p + 1):
        k = o - p
        diag = np.diagonal(A, k)
        if k >= 0:
            out[:n - k, o] = diag
        else:
            out[-k:, o] = diag
    return out


def _storage_to_csr(storage, ns, p, frees):
    d = len(ns)
    ns = np.asarray(ns, dtype=np.int64)
    free_maps = np.full((d, int(ns.max())), -1, dtype=np.int64)
    for a, f in enumerate(frees):
        free_maps[a, f] = np.arange(len(f))
    free_dims = np.array([len(f) for f in frees], dtype=np.int64)
    counts, inv = _kernels.band_row_counts(free_maps, free_dims, ns, p)
    indptr = np.zeros(len(counts) + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    nnz = int(indptr[-1])
    indices = np.empty(nnz, dtype=np.int64)
    data = np.empty(nnz)
    _kernels.band_to_csr(storage.ravel(), ns, p, free_maps, free_dims, inv,
                         indptr, indices, data)
    N = int(np.prod(free_dims))
    indices = indices.astype(np.int32) if N < 2 ** 31 else indices
    A = scipy.sparse.csr_matrix((data, indices, indptr), shape=(N, N))
    A.eliminate_zeros()
    return A


def kron_to_csr(K, p, frees):
    """CSR matrix of a Kronecker sum of full-space banded factors, restricted to ``frees``."""
    ns = [f.shape[0] for f in K.terms[0][1]]
    w = 2 * p + 1
    storage = np.zeros(tuple(x for n in ns for x in (n, w)))
    for weight, fs in K.terms:
        bands = [_band_rows(f.toarray() if scipy.sparse.issparse(f) else f, p) for f in fs]
        T = bands[0]
        for b in bands[1:]:
            T = np.multiply.outer(T, b)
        storage += weight * T
    return _storage_to_csr(storage, ns, p, frees)


# -- physical-domain stiffness ------------------------------------------------

def _laplace_coefficients(J, H):
    """Coefficients of the physical Laplacian in parametric derivatives.

    With ``Ginv = (J'J)^{-1}``, ``Lap u = sum_ab Ginv_ab u_ab + sum_a g_a u_a``
    where ``g = -J^{-1} s`` and ``s_k = sum_ab Ginv_ab d_ab G_k``.
    Returns ``(Ginv, g)``.
    """
    Jinv = np.linalg.inv(J)
    Ginv = Jinv @ np.swapaxes(Jinv, -1, -2)
    s = np.einsum("...ab,...kab->...k", Ginv, H)
    g = -np.einsum("...ak,...k->...a", Jinv, s)
    return Ginv, g


def _laplace_terms(d):
    """Parametric derivative multi-indices appearing in the Laplacian."""
    terms = []
    for a in range(d):
        for b in range(a, d):
            r = [0] * d
            r[a] += 1
            r[b] += 1
            terms.append(("2", a, b, tuple(r)))
    for a in range(d):
        r = [0] * d
        r[a] = 1
        terms.append(("1", a, None, tuple(r)))
    return terms


def _grid_from_mats(G, mats):
    """Geometry on a tensor grid from precomputed collocation matrices ``mats[a][r]``."""
    d = G.dim
    Pw = G._homogeneous()
    A = {}
    for r in _derivative_indices(d):
        T = Pw
        for a in range(d):
            T = mode_apply(mats[a][r[a]], T, a)
        A[r] = T

    def unit(*axes):
        r = [0] * d
        for a in axes:
            r[a] += 1
        return tuple(r)

    W = A[(0,) * d][..., d]
    X = A[(0,) * d][..., :d] / W[..., None]
    grid = X.shape[:-1]
    J = np.empty(grid + (d, d))
    for a in range(d):
        Aa = A[unit(a)]
        J[..., :, a] = (Aa[..., :d] - X * Aa[..., d:d + 1]) / W[..., None]
    H = np.empty(grid + (d, d, d))
    for a in range(d):
        for b in range(a, d):
            Aab = A[unit(a, b)]
            Wa = A[unit(a)][..., d:d + 1]
            Wb = A[unit(b)][..., d:d + 1]
            val = (Aab[..., :d] - X * Aab[..., d:d + 1] - Wa * J[..., :, b]
                   - Wb * J[..., :, a]) / W[..., None]
            H[..., :, a, b] = val
            H[..., :, b, a] = val
    return X, J, H, np.linalg.det(J)


class _Slabs:
    """Iterate over element slabs (all leading element indices fixed, last free)."""

    def __init__(self, spaces, G, nq):
        self.spaces = spaces
        self.G = G
        self.d = len(spaces)
        self.nq = nq
        self.elem = [gauss_elements(s, nq, 2) for s in spaces]
        self.gmats = []
        for a, (pts, _, _) in enumerate(self.elem):
            self.gmats.append([collocation_matrix(G.knots[a], G.degrees[a], pts.ravel(), r)
                               for r in range(3)])

    def __iter__(self):
        d, nq = self.d, self.nq
        m_last = self.spaces[-1].m
        for lead in itertools.product(*[range(s.m) for s in self.spaces[:-1]]):
            mats = [[M[lead[a] * nq:(lead[a] + 1) * nq] for M in self.gmats[a]]
                    for a in range(d - 1)]
            mats.append(self.gmats[-1])
            X, J, H, det = _grid_from_mats(self.G, mats)

            def per_element(T):
                # (nq,)*(d-1) + (m_last*nq,) + rest -> (m_last,) + (nq,)*d + rest
                rest = T.shape[d:]
                T = T.reshape((nq,) * (d - 1) + (m_last, nq) + rest)
                return np.moveaxis(T, d - 1, 0)

            X, J, H, det = map(per_element, (X, J, H, det))
            w = np.ones(())
            for a in range(d - 1):
                wa = self.elem[a][1][lead[a]]
                w = np.multiply.outer(w, wa)
            w = w.reshape((1,) + w.shape + (1,)) \
                * self.elem[-1][1].reshape((m_last,) + (1,) * (d - 1) + (nq,))
            if np.any(det <= 0.0):
                e = int(np.argmin(det.reshape(m_last, -1).min(axis=1)))
                raise GeometryError(
                    f"non-positive Jacobian determinant in element {lead + (e,)}")
            yield lead, X, J, H, det, w


def _einsum_letters(d):
    return "abc"[:d], "ijk"[:d], "uvw"[:d]


def assemble_physical(spaces, G, variant=FIRST, nq=None):
    """Stiffness matrix of ``(Lap u, Lap v)_{L2(Omega)}`` on the free dofs, as CSR.

    Physical second derivatives come from the chain rule
    ``Hess(u o G) = J' Hess(u) J + sum_k (du/dx_k) Hess(G_k)``.  The identity
    map takes an exact Kronecker shortcut.
    """
    d = len(spaces)
    if G.dim != d:
        raise ValueError(f"geometry dimension {G.dim} does not match {d} spline spaces")
    p = spaces[0].p
    if any(s.p != p for s in spaces):
        raise ValueError("all directions must share the spline degree")
    frees = [clamp_constraints(s, variant) for s in spaces]
    if G.is_identity:
        unis = [assemble_univariate(s, nq) for s in spaces]
        return kron_to_csr(laplacian_kron(unis), p, frees)
    nq = p + 1 if nq is None else nq
    ns = [s.n for s in spaces]
    w_ = 2 * p + 1
    storage = np.zeros(int(np.prod([n * w_ for n in ns])))
    strides = np.ones(d, dtype=np.int64)
    for a in range(d - 2, -1, -1):
        strides[a] = strides[a + 1] * ns[a + 1] * w_
    # flat offsets of local pair (l, m): sum_a (l_a*w + m_a - l_a + p) * stride_a
    loc = np.array(list(itertools.product(range(p + 1), repeat=d)))
    off = np.zeros((len(loc), len(loc)), dtype=np.int64)
    for a in range(d):
        la = loc[:, a][:, None]
        ma = loc[:, a][None, :]
        off += (la * w_ + (ma - la + p)) * strides[a]
    off = off.ravel()
    terms = _laplace_terms(d)
    el, ql, _ = _einsum_letters(d)
    slabs = _Slabs(spaces, G, nq)
    m_last = spaces[-1].m
    for lead, X, J, H, det, w in slabs:
        Ginv, g = _laplace_coefficients(J, H)
        V = 0.0
        for kind, a, b, r in terms:
            if kind == "2":
                coef = Ginv[..., a, b] * (2.0 if a != b else 1.0)
            else:
                coef = g[..., a]
            # basis factors: leading directions fixed element, last direction all elements
            ops = []
            subs = []
            for k in range(d - 1):
                ops.append(slabs.elem[k][2][lead[k], :, r[k], :])
                subs.append(f"{el[k]}{ql[k]}")
            ops.append(slabs.elem[-1][2][:, :, r[-1], :])
            subs.append(f"e{el[-1]}{ql[-1]}")
            ops.append(coef)
            subs.append("e" + el)
            V = V + np.einsum(",".join(subs) + "->e" + ql + el, *ops, optimize=True)
        nloc = (p + 1) ** d
        V = V.reshape(m_last, nloc, -1)
        Wt = (w * det).reshape(m_last, 1, -1)
        local = np.matmul(V * Wt, np.swapaxes(V, 1, 2))
        base = np.zeros(m_last, dtype=np.int64)
        for k in range(d - 1):
            base += lead[k] * w_ * strides[k]
        base += np.arange(m_last) * w_ * strides[-1]
        _kernels.scatter_local(storage, base, off, local.reshape(m_last, -1))
    A = _storage_to_csr(storage, ns, p, frees)
    # symmetrize roundoff from the element products
    return ((A + A.T) * 0.5).tocsr()


def assemble_rhs(spaces, G, variant=FIRST, f=None, nq=None, coordinates="physical"):
    """Load vector ``f_h[i] = int f(G(x)) phi_i(x) |det J| dx`` on the free dofs.

    ``coordinates="parameter"`` evaluates ``f`` at the parameter point instead.
    """
    d = len(spaces)
    p = spaces[0].p
    f = paper_load(d) if f is None else f
    nq = p + 1 if nq is None else nq
    frees = [clamp_constraints(s, variant) for s in spaces]
    full = np.zeros(tuple(s.n for s in spaces))
    el, ql, _ = _einsum_letters(d)
    slabs = _Slabs(spaces, G, nq)
    m_last = spaces[-1].m
    for lead, X, J, H, det, w in slabs:
        if coordinates == "physical":
            fx = f(X)
        else:
            grids = [slabs.elem[k][0][lead[k]] for k in range(d - 1)]
            grids.append(slabs.elem[-1][0].reshape(-1))
            P = np.stack(np.meshgrid(*grids, indexing="ij"), axis=-1)
            P = P.reshape((nq,) * (d - 1) + (m_last, nq, d))
            fx = f(np.moveaxis(P, d - 1, 0))
        F = fx * w * np.abs(det)
        ops = [slabs.elem[k][2][lead[k], :, 0, :] for k in range(d - 1)]
        subs = [f"{el[k]}{ql[k]}" for k in range(d - 1)]
        ops.append(slabs.elem[-1][2][:, :, 0, :])
        subs.append(f"e{el[-1]}{ql[-1]}")
        ops.append(F)
        subs.append("e" + el)
        loc = np.einsum(",".join(subs) + "->e" + ql, *ops, optimize=True)
        for e in range(m_last):
            idx = tuple(slice(lead[k], lead[k] + p + 1) for k in range(d - 1))
            idx = idx + (slice(e, e + p + 1),)
            full[idx] += loc[e]
    return full[np.ix_(*frees)].ravel()


@dataclass
class DiscreteSystem:
    d: int
    spaces: list
    frees: list
    B: scipy.sparse.csr_matrix
    Bbar: KroneckerSum
    Mbar: KroneckerSum
    f: np.ndarray
    unis: list

    @property
    def ndofs(self):
        return int(np.prod([len(f) for f in self.frees]))


def build_system(spaces, G, variant=FIRST, with_physical=True, with_rhs=True,
                 f=None, rhs_coordinates="physical"):
    unis = [assemble_univariate(s) for s in spaces]
    frees = [clamp_constraints(s, variant) for s in spaces]
    Bbar, Mbar = parameter_operators(unis, frees)
    B = assemble_physical(spaces, G, variant) if with_physical else None
    rhs = assemble_rhs(spaces, G, variant, f=f, coordinates=rhs_coordinates) if with_rhs else None
    return DiscreteSystem(d=len(spaces), spaces=list(spaces), frees=frees, B=B,
                          Bbar=Bbar, Mbar=Mbar, f=rhs, unis=unis)
