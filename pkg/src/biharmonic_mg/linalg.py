"""Linear algebra kernels: banded SPD factorization, Kronecker sums, PCG."""

import re
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse


class NotSPDError(np.linalg.LinAlgError):
    def __init__(self, pivot, msg=None):
        self.pivot = pivot
        super().__init__(msg or f"matrix is not SPD: non-positive pivot at index {pivot}")


class IndefinitePreconditionerError(RuntimeError):
    pass


class BandedMatrix:
    """Symmetric band matrix; stores the lower band column-wise.

    ``band[k, j]`` holds ``A[j + k, j]`` for ``k = 0..b`` (LAPACK lower
    band layout).
    """

    def __init__(self, band):
        self.band = np.ascontiguousarray(band, dtype=float)

    @classmethod
    def from_dense(cls, A, bandwidth=None, tol=0.0):
        A = np.asarray(A, dtype=float)
        n = A.shape[0]
        if bandwidth is None:
            nz = np.nonzero(np.abs(np.tril(A)) > tol)
            bandwidth = int((nz[0] - nz[1]).max()) if nz[0].size else 0
        bandwidth = max(0, min(bandwidth, n - 1))
        band = np.zeros((bandwidth + 1, n))
        for k in range(bandwidth + 1):
            band[k, :n - k] = np.diagonal(A, -k)
        return cls(band)

    @property
    def n(self):
        return self.band.shape[1]

    @property
    def bandwidth(self):
        return self.band.shape[0] - 1

    def to_dense(self):
        n, b = self.n, self.bandwidth
        A = np.zeros((n, n))
        for k in range(b + 1):
            d = self.band[k, :n - k]
            A += np.diag(d, -k)
            if k:
                A += np.diag(d, k)
        return A

    def to_sparse(self):
        return scipy.sparse.csr_matrix(self.to_dense())

    def __matmul__(self, x):
        x = np.asarray(x, dtype=float)
        n, b = self.n, self.bandwidth
        y = self.band[0].reshape((n,) + (1,) * (x.ndim - 1)) * x
        for k in range(1, b + 1):
            d = self.band[k, :n - k].reshape((n - k,) + (1,) * (x.ndim - 1))
            y[k:] += d * x[:n - k]
            y[:n - k] += d * x[k:]
        return y


class BandedFactor:
    """Lower Cholesky factor of a :class:`BandedMatrix`."""

    def __init__(self, lband):
        self.lband = lband

    @property
    def n(self):
        return self.lband.shape[1]

    def solve(self, rhs):
        """Solve ``A x = rhs``; ``rhs`` may carry extra trailing columns."""
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape[0] != self.n:
            raise ValueError(f"rhs has {rhs.shape[0]} rows, factor has order {self.n}")
        if self.n == 0:
            return rhs.copy()
        return scipy.linalg.cho_solve_banded((self.lband, True), rhs, check_finite=False)

    def lower_dense(self):
        n = self.n
        L = np.zeros((n, n))
        for k in range(self.lband.shape[0]):
            L += np.diag(self.lband[k, :n - k], -k)
        return L


def banded_cholesky(A):
    """Cholesky factorization ``A = L L'`` of a symmetric positive definite band matrix.

    Raises :class:`NotSPDError` carrying the (0-based) index of the first
    non-positive pivot.
    """
    if A.n == 0:
        return BandedFactor(np.zeros((1, 0)))
    try:
        lband = scipy.linalg.cholesky_banded(A.band, lower=True, check_finite=False)
    except np.linalg.LinAlgError as err:
        m = re.search(r"(\d+)", str(err))
        pivot = int(m.group(1)) - 1 if m else -1
        raise NotSPDError(pivot) from None
    return BandedFactor(lband)


def mode_apply(A, X, axis):
    """Multiply the tensor ``X`` by matrix ``A`` along ``axis``.

    ``A`` may be a dense array, a sparse matrix, a :class:`BandedMatrix`, or a
    callable acting on the leading axis of a 2D array.
    """
    Xm = np.moveaxis(X, axis, 0)
    shape = Xm.shape
    flat = Xm.reshape(shape[0], -1)
    if callable(A) and not isinstance(A, (np.ndarray, BandedMatrix)) \
            and not scipy.sparse.issparse(A):
        Y = A(flat)
    else:
        Y = A @ flat
    Y = np.asarray(Y).reshape((Y.shape[0],) + shape[1:])
    return np.moveaxis(Y, 0, axis)


def _order(A):
    if isinstance(A, BandedMatrix):
        return A.n
    return A.shape[1]


def _nrows(A):
    if isinstance(A, BandedMatrix):
        return A.n
    return A.shape[0]


@dataclass
class KroneckerSum:
    """``sum_t w_t (A_t1 kron ... kron A_td)`` stored by its factors.

    The first factor acts on the slowest-varying index (row-major flattening).
    """

    terms: list = field(default_factory=list)

    def add(self, weight, factors):
        factors = tuple(factors)
        if self.terms and len(factors) != len(self.terms[0][1]):
            raise ValueError("all terms must have the same number of factors")
        if self.terms:
            if [_order(f) for f in factors] != [_order(f) for f in self.terms[0][1]]:
                raise ValueError("factor orders differ between terms")
        self.terms.append((float(weight), factors))
        return self

    @property
    def dims(self):
        return tuple(_order(f) for f in self.terms[0][1])

    @property
    def shape(self):
        rows = int(np.prod([_nrows(f) for f in self.terms[0][1]]))
        return (rows, int(np.prod(self.dims)))

    def __matmul__(self, x):
        return kron_apply(self, x)

    def to_dense(self):
        A = 0.0
        for w, fs in self.terms:
            T = np.ones((1, 1))
            for f in fs:
                D = f.to_dense() if isinstance(f, BandedMatrix) else (
                    f.toarray() if scipy.sparse.issparse(f) else np.asarray(f))
                T = np.kron(T, D)
            A = A + w * T
        return A


def kron_apply(K, x):
    """Apply a :class:`KroneckerSum` to a vector by successive mode products."""
    x = np.asarray(x, dtype=float)
    dims = K.dims
    if x.shape[0] != int(np.prod(dims)):
        raise ValueError(f"vector of length {x.shape[0]} does not match operator dims {dims}")
    extra = x.shape[1:]
    X = x.reshape(dims + extra)
    out = None
    for w, fs in K.terms:
        Y = X
        for axis, f in enumerate(fs):
            Y = mode_apply(f, Y, axis)
        out = w * Y if out is None else out + w * Y
    return out.reshape((-1,) + extra)


@dataclass
class PCGResult:
    x: np.ndarray
    iterations: int
    residuals: list
    converged: bool


def pcg(apply_A, apply_P, rhs, x0=None, rel_tol=1e-8, max_iter=2000):
    """Preconditioned conjugate gradients.

    Stops at the first iterate with ``||rhs - A x_k|| <= rel_tol * ||rhs - A x_0||``
    (Euclidean norms).  ``residuals`` holds the residual norm of every iterate.
    """
    rhs = np.asarray(rhs, dtype=float)
    x = np.zeros_like(rhs) if x0 is None else np.array(x0, dtype=float)
    r = rhs - apply_A(x)
    r0 = np.linalg.norm(r)
    history = [r0]
    if r0 == 0.0:
        return PCGResult(x, 0, history, True)
    z = apply_P(r)
    rz = float(r @ z)
    if rz <= 0.0:
        raise IndefinitePreconditionerError(f"<r, Pr> = {rz:.3e} <= 0 at iteration 0")
    d = z.copy()
    for k in range(1, max_iter + 1):
        Ad = apply_A(d)
        alpha = rz / float(d @ Ad)
        x += alpha * d
        r -= alpha * Ad
        rn = np.linalg.norm(r)
        history.append(rn)
        if rn <= rel_tol * r0:
            return PCGResult(x, k, history, True)
        z = apply_P(r)
        rz_new = float(r @ z)
        if rz_new <= 0.0:
            raise IndefinitePreconditionerError(
                f"<r, Pr> = {rz_new:.3e} <= 0 at iteration {k}")
        d = z + (rz_new / rz) * d
        rz = rz_new
    return PCGResult(x, max_iter, history, False)
