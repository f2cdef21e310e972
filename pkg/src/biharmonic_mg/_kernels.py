"""Compiled inner loops: element scatter, band-to-CSR conversion, Gauss-Seidel sweeps."""

import numpy as np
from numba import njit


@njit(cache=True)
def scatter_local(storage, base, offsets, local):
    """``storage[base[e] + offsets[k]] += local[e, k]`` for all elements ``e``."""
    ne, nk = local.shape
    for e in range(ne):
        b = base[e]
        for k in range(nk):
            storage[b + offsets[k]] += local[e, k]


@njit(cache=True)
def _decode(flat, dims, out):
    for a in range(dims.shape[0] - 1, -1, -1):
        out[a] = flat % dims[a]
        flat //= dims[a]


@njit(cache=True)
def band_row_counts(free_maps, free_dims, n, p):
    """Number of stored entries in each free row of a tensor-banded matrix."""
    d = free_dims.shape[0]
    nrows = 1
    for a in range(d):
        nrows *= free_dims[a]
    # per-direction count of free columns within the band of each free row
    maxn = 0
    for a in range(d):
        if n[a] > maxn:
            maxn = n[a]
    cnt = np.zeros((d, maxn), dtype=np.int64)
    inv = np.full((d, maxn), -1, dtype=np.int64)
    for a in range(d):
        for i in range(n[a]):
            if free_maps[a, i] >= 0:
                inv[a, free_maps[a, i]] = i
    for a in range(d):
        for fi in range(free_dims[a]):
            i = inv[a, fi]
            c = 0
            for j in range(max(0, i - p), min(n[a], i + p + 1)):
                if free_maps[a, j] >= 0:
                    c += 1
            cnt[a, fi] = c
    counts = np.empty(nrows, dtype=np.int64)
    idx = np.empty(d, dtype=np.int64)
    for r in range(nrows):
        _decode(r, free_dims, idx)
        c = 1
        for a in range(d):
            c *= cnt[a, idx[a]]
        counts[r] = c
    return counts, inv


@njit(cache=True)
def band_to_csr(storage, n, p, free_maps, free_dims, inv, indptr, indices, data):
    """Fill CSR arrays (free dofs only) from tensor-banded storage.

    ``storage`` is flat with logical shape ``(n_0, w, n_1, w, ...)``,
    ``w = 2p+1``; entry ``(i, o)`` holds ``A[i, i + o - p]`` per direction.
    """
    d = free_dims.shape[0]
    w = 2 * p + 1
    nrows = indptr.shape[0] - 1
    strides = np.empty(d, dtype=np.int64)
    s = 1
    for a in range(d - 1, -1, -1):
        strides[a] = s
        s *= n[a] * w
    fstrides = np.empty(d, dtype=np.int64)
    s = 1
    for a in range(d - 1, -1, -1):
        fstrides[a] = s
        s *= free_dims[a]
    noff = 1
    for a in range(d):
        noff *= w
    offdims = np.full(d, w, dtype=np.int64)
    fidx = np.empty(d, dtype=np.int64)
    ii = np.empty(d, dtype=np.int64)
    oo = np.empty(d, dtype=np.int64)
    for r in range(nrows):
        _decode(r, free_dims, fidx)
        for a in range(d):
            ii[a] = inv[a, fidx[a]]
        pos = indptr[r]
        for k in range(noff):
            _decode(k, offdims, oo)
            ok = True
            col = 0
            sidx = 0
            for a in range(d):
                j = ii[a] + oo[a] - p
                if j < 0 or j >= n[a]:
                    ok = False
                    break
                fj = free_maps[a, j]
                if fj < 0:
                    ok = False
                    break
                col += fj * fstrides[a]
                sidx += (ii[a] * w + oo[a]) * strides[a]
            if ok:
                indices[pos] = col
                data[pos] = storage[sidx]
                pos += 1


@njit(cache=True)
def gs_forward(indptr, indices, data, u, f):
    n = u.shape[0]
    for i in range(n):
        s = f[i]
        diag = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            if j == i:
                diag = data[k]
            else:
                s -= data[k] * u[j]
        u[i] = s / diag


@njit(cache=True)
def gs_backward(indptr, indices, data, u, f):
    n = u.shape[0]
    for i in range(n - 1, -1, -1):
        s = f[i]
        diag = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            if j == i:
                diag = data[k]
            else:
                s -= data[k] * u[j]
        u[i] = s / diag


@njit(cache=True)
def csr_matvec(indptr, indices, data, x, y):
    n = y.shape[0]
    for i in range(n):
        s = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            s += data[k] * x[indices[k]]
        y[i] = s
