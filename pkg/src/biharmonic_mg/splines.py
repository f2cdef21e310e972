"""Univariate B-spline spaces on (0, 1) with open uniform knot vectors.

Basis functions are evaluated with the Cox-de Boor recursion together with the
usual derivative recursion on knot differences.  At an interior knot the basis
is evaluated from the right; at ``x = 1`` from the left.  One-sided limits
agree for derivatives of order below ``p``, so the convention only shows up in
derivatives of order ``p``.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse


@dataclass(frozen=True)
class SplineSpace:
    """Maximally smooth splines of degree ``p`` on ``m`` uniform elements."""

    p: int
    m: int
    knots: np.ndarray = field(repr=False, compare=False)

    @property
    def h(self):
        return 1.0 / self.m

    @property
    def n(self):
        """Number of basis functions, ``m + p``."""
        return self.m + self.p

    @property
    def level(self):
        return int(round(np.log2(self.m)))

    @property
    def breaks(self):
        return np.linspace(0.0, 1.0, self.m + 1)


def open_uniform_knots(p, m):
    interior = np.arange(1, m) / m
    return np.concatenate([np.zeros(p + 1), interior, np.ones(p + 1)])


def make_space(p, level):
    """Return the space with ``2**level`` elements and degree ``p``."""
    if p < 1:
        raise ValueError(f"spline degree must be >= 1, got {p}")
    if level < 0:
        raise ValueError(f"refinement level must be >= 0, got {level}")
    m = 2 ** level
    kv = open_uniform_knots(p, m)
    kv.setflags(write=False)
    return SplineSpace(p=p, m=m, knots=kv)


@dataclass(frozen=True)
class BasisEval:
    """Derivatives of the ``p+1`` possibly nonzero basis functions at a point.

    ``values[r, k]`` is the ``r``-th derivative of basis function
    ``anchor + k``.
    """

    anchor: int
    values: np.ndarray


def find_span(knots, p, x):
    """Knot span index ``i`` with ``knots[i] <= x < knots[i+1]`` (vectorized).

    Points equal to the last knot are assigned to the last nonempty span.
    """
    x = np.asarray(x, dtype=float)
    n = len(knots) - p - 1
    span = np.searchsorted(knots, x, side="right") - 1
    return np.clip(span, p, n - 1)


def basis_derivatives(knots, p, x, nderiv):
    """Evaluate nonzero basis functions and derivatives at many points.

    Returns ``(span, vals)`` with ``vals`` of shape ``(len(x), nderiv+1, p+1)``;
    ``vals[j, r, k]`` is the ``r``-th derivative of basis function
    ``span[j] - p + k`` at ``x[j]``.
    """
    knots = np.asarray(knots, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    span = find_span(knots, p, x)
    npts = x.shape[0]

    # triangular table of basis values (ndu[j, r] for basis of degree j) and knot differences
    ndu = np.zeros((npts, p + 1, p + 1))
    ndu[:, 0, 0] = 1.0
    left = np.zeros((npts, p + 1))
    right = np.zeros((npts, p + 1))
    for j in range(1, p + 1):
        left[:, j] = x - knots[span + 1 - j]
        right[:, j] = knots[span + j] - x
        saved = np.zeros(npts)
        for r in range(j):
            ndu[:, j, r] = right[:, r + 1] + left[:, j - r]
            temp = ndu[:, r, j - 1] / ndu[:, j, r]
            ndu[:, r, j] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        ndu[:, j, j] = saved

    vals = np.zeros((npts, nderiv + 1, p + 1))
    vals[:, 0, :] = ndu[:, :, p]
    nd = min(nderiv, p)
    a = np.zeros((npts, 2, p + 1))
    for r in range(p + 1):
        s1, s2 = 0, 1
        a[:] = 0.0
        a[:, 0, 0] = 1.0
        for k in range(1, nd + 1):
            d = np.zeros(npts)
            rk = r - k
            pk = p - k
            if r >= k:
                a[:, s2, 0] = a[:, s1, 0] / ndu[:, pk + 1, rk]
                d = a[:, s2, 0] * ndu[:, rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[:, s2, j] = (a[:, s1, j] - a[:, s1, j - 1]) / ndu[:, pk + 1, rk + j]
                d = d + a[:, s2, j] * ndu[:, rk + j, pk]
            if r <= pk:
                a[:, s2, k] = -a[:, s1, k - 1] / ndu[:, pk + 1, r]
                d = d + a[:, s2, k] * ndu[:, r, pk]
            vals[:, k, r] = d
            s1, s2 = s2, s1
    fac = p
    for k in range(1, nd + 1):
        vals[:, k, :] *= fac
        fac *= p - k
    return span, vals


def eval_basis(space, x, max_deriv=0):
    """Values and derivatives up to ``max_deriv`` of the basis at a single point."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"evaluation point {x} outside [0, 1]")
    span, vals = basis_derivatives(space.knots, space.p, [x], max_deriv)
    return BasisEval(anchor=int(span[0]) - space.p, values=vals[0])


def collocation_matrix(knots, p, x, deriv=0):
    """Dense matrix ``A[j, i]`` = ``deriv``-th derivative of basis ``i`` at ``x[j]``."""
    knots = np.asarray(knots, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    n = len(knots) - p - 1
    span, vals = basis_derivatives(knots, p, x, deriv)
    A = np.zeros((x.shape[0], n))
    rows = np.repeat(np.arange(x.shape[0]), p + 1)
    cols = (span[:, None] - p + np.arange(p + 1)[None, :]).ravel()
    A[rows, cols] = vals[:, deriv, :].ravel()
    return A


def evaluate(space, coeffs, x, deriv=0):
    """Evaluate the spline with coefficient vector ``coeffs`` at points ``x``."""
    return collocation_matrix(space.knots, space.p, x, deriv) @ np.asarray(coeffs)


def greville(space):
    kv = space.knots
    p = space.p
    return np.array([kv[i + 1:i + p + 1].mean() for i in range(space.n)])


def insert_knot_matrix(knots, p, t):
    """Boehm insertion of one knot ``t``: returns ``(new_knots, A)`` with
    ``A`` mapping old coefficients to new ones (shape ``(n+1, n)``)."""
    knots = np.asarray(knots, dtype=float)
    n = len(knots) - p - 1
    k = int(np.searchsorted(knots, t, side="right") - 1)
    A = np.zeros((n + 1, n))
    for i in range(n + 1):
        if i <= k - p:
            A[i, i] = 1.0
        elif i >= k + 1:
            A[i, i - 1] = 1.0
        else:
            alpha = (t - knots[i]) / (knots[i + p] - knots[i])
            A[i, i] = alpha
            A[i, i - 1] = 1.0 - alpha
    new_knots = np.insert(knots, k + 1, t)
    return new_knots, A


def _insert_knot_rows(knots, p, t, C):
    """Apply one Boehm insertion to the coefficient rows ``C`` (in place on a copy)."""
    k = int(np.searchsorted(knots, t, side="right") - 1)
    out = np.empty((C.shape[0] + 1,) + C.shape[1:])
    out[:k - p + 1] = C[:k - p + 1]
    out[k + 1:] = C[k:]
    i = np.arange(k - p + 1, k + 1)
    alpha = (t - knots[i]) / (knots[i + p] - knots[i])
    out[i] = alpha[:, None] * C[i] + (1.0 - alpha)[:, None] * C[i - 1]
    return np.insert(knots, k + 1, t), out


def refinement_matrix(coarse):
    """Prolongation from ``coarse`` to the space with doubled element count.

    Built by inserting the ``m`` midpoints one at a time, starting from the
    identity on the coarse coefficients.
    """
    kv = np.array(coarse.knots)
    R = np.eye(coarse.n)
    for i in range(coarse.m):
        kv, R = _insert_knot_rows(kv, coarse.p, (i + 0.5) / coarse.m, R)
    R[np.abs(R) < 1e-15] = 0.0
    return scipy.sparse.csr_matrix(R)
