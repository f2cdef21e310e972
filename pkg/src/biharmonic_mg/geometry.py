"""Geometry maps from the parameter domain (0,1)^d onto a physical patch.

A map is a tensor-product B-spline or NURBS patch.  Control points are stored
as an array of shape ``(n_1, ..., n_d, d)``; the optional weights have shape
``(n_1, ..., n_d)``.  In files both are flattened in row-major order, i.e. the
index of the last parametric direction runs fastest.
"""

import itertools
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .linalg import mode_apply
from .splines import basis_derivatives, collocation_matrix


class GeometryError(ValueError):
    pass


class GeometryFormatError(GeometryError):
    pass


@dataclass(frozen=True)
class GeometryMap:
    dim: int
    degrees: tuple
    knots: tuple
    control_points: np.ndarray
    weights: np.ndarray = None

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise GeometryError(f"geometry dimension must be 2 or 3, got {self.dim}")
        if len(self.degrees) != self.dim or len(self.knots) != self.dim:
            raise GeometryError("need one degree and one knot vector per direction")
        shape = tuple(len(kv) - p - 1 for kv, p in zip(self.knots, self.degrees))
        if self.control_points.shape != shape + (self.dim,):
            raise GeometryError(
                f"control point grid has shape {self.control_points.shape}, "
                f"expected {shape + (self.dim,)}")
        if self.weights is not None:
            if self.weights.shape != shape:
                raise GeometryError(f"weights have shape {self.weights.shape}, expected {shape}")
            if np.any(self.weights <= 0):
                raise GeometryError("NURBS weights must be positive")

    @property
    def is_rational(self):
        return self.weights is not None

    @property
    def is_identity(self):
        """True for the trilinear/bilinear patch that maps every point to itself."""
        if self.is_rational and not np.allclose(self.weights, self.weights.flat[0]):
            return False
        if any(p != 1 for p in self.degrees):
            return False
        if any(len(kv) != 4 or tuple(kv) != (0.0, 0.0, 1.0, 1.0) for kv in self.knots):
            return False
        corners = np.array(list(itertools.product((0.0, 1.0), repeat=self.dim)))
        return np.array_equal(self.control_points.reshape(-1, self.dim), corners)

    def _homogeneous(self):
        if self.is_rational:
            w = self.weights[..., None]
            return np.concatenate([self.control_points * w, w], axis=-1)
        ones = np.ones(self.control_points.shape[:-1] + (1,))
        return np.concatenate([self.control_points, ones], axis=-1)


@dataclass
class GeometrySample:
    """Point, Jacobian ``J[k, a] = dG_k/dx_a``, Hessians ``H[k, a, b]`` and ``|det J|``."""

    point: np.ndarray
    jacobian: np.ndarray
    hessians: np.ndarray
    det: float


def _derivative_indices(d):
    return [r for r in itertools.product(range(3), repeat=d) if sum(r) <= 2]


def eval_grid(G, points):
    """Evaluate ``G`` on the tensor grid spanned by the 1D arrays in ``points``.

    Returns ``(X, J, H, det)`` with shapes ``grid + (d,)``, ``grid + (d, d)``,
    ``grid + (d, d, d)`` and ``grid``, where ``grid`` has one axis per
    direction.  Second derivatives of rational maps use the quotient rule.
    """
    d = G.dim
    mats = []
    for a in range(d):
        x = np.asarray(points[a], dtype=float)
        mats.append([collocation_matrix(G.knots[a], G.degrees[a], x, r) for r in range(3)])
    Pw = G._homogeneous()
    A = {}
    for r in _derivative_indices(d):
        T = Pw
        for a in range(d):
            T = mode_apply(mats[a][r[a]], T, a)
        A[r] = T
    zero = (0,) * d

    def unit(*axes):
        r = [0] * d
        for a in axes:
            r[a] += 1
        return tuple(r)

    W = A[zero][..., d]
    X = A[zero][..., :d] / W[..., None]
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
    det = np.linalg.det(J)
    return X, J, H, det


def eval_geometry(G, xhat):
    """Point, Jacobian, Hessians and ``|det J|`` at a single parameter point."""
    xhat = np.asarray(xhat, dtype=float)
    if xhat.shape != (G.dim,) or np.any(xhat < 0.0) or np.any(xhat > 1.0):
        raise GeometryError(f"parameter point {xhat.tolist()} is not in [0,1]^{G.dim}")
    X, J, H, det = eval_grid(G, [[t] for t in xhat])
    idx = (0,) * G.dim
    if det[idx] <= 0.0:
        raise GeometryError(f"non-positive Jacobian determinant {det[idx]:.3e} at {xhat.tolist()}")
    return GeometrySample(point=X[idx], jacobian=J[idx], hessians=H[idx], det=abs(det[idx]))


def evaluate_point(G, xhat):
    """``G(xhat)`` for an array of parameter points of shape ``(npts, d)``."""
    xhat = np.atleast_2d(np.asarray(xhat, dtype=float))
    num = np.zeros((xhat.shape[0], G.dim + 1))
    Pw = G._homogeneous()
    spans, vals = [], []
    for a in range(G.dim):
        s, v = basis_derivatives(G.knots[a], G.degrees[a], xhat[:, a], 0)
        spans.append(s - G.degrees[a])
        vals.append(v[:, 0, :])
    for loc in itertools.product(*[range(p + 1) for p in G.degrees]):
        idx = tuple(spans[a] + loc[a] for a in range(G.dim))
        w = np.prod([vals[a][:, loc[a]] for a in range(G.dim)], axis=0)
        num += w[:, None] * Pw[idx]
    return num[:, :G.dim] / num[:, G.dim:]


# -- built-in domains ------------------------------------------------------

def identity_map(d):
    corners = np.array(list(itertools.product((0.0, 1.0), repeat=d))).reshape((2,) * d + (d,))
    kv = np.array([0.0, 0.0, 1.0, 1.0])
    return GeometryMap(dim=d, degrees=(1,) * d, knots=(kv,) * d, control_points=corners)


def quarter_annulus(r_inner=1.0, r_outer=2.0):
    """Exact quarter annulus; direction 0 is radial (degree 1), direction 1 angular (degree 2)."""
    s = np.sqrt(0.5)
    arc = np.array([[1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    cps = np.stack([r_inner * arc, r_outer * arc])
    w = np.array([[1.0, s, 1.0], [1.0, s, 1.0]])
    return GeometryMap(dim=2, degrees=(1, 2),
                       knots=(np.array([0.0, 0.0, 1.0, 1.0]),
                              np.array([0.0, 0.0, 0.0, 1.0, 1.0, 1.0])),
                       control_points=cps, weights=w)


def extrude(G2, height=1.0):
    cps = np.zeros(G2.control_points.shape[:2] + (2, 3))
    cps[:, :, 0, :2] = G2.control_points
    cps[:, :, 1, :2] = G2.control_points
    cps[:, :, 1, 2] = height
    w = None
    if G2.is_rational:
        w = np.repeat(G2.weights[:, :, None], 2, axis=2)
    return GeometryMap(dim=3, degrees=tuple(G2.degrees) + (1,),
                       knots=tuple(G2.knots) + (np.array([0.0, 0.0, 1.0, 1.0]),),
                       control_points=cps, weights=w)


BUILTIN_DOMAINS = ("unit-square", "unit-cube", "quarter-annulus-2d", "quarter-annulus-3d")


def builtin_domain(name):
    if name == "unit-square":
        return identity_map(2)
    if name == "unit-cube":
        return identity_map(3)
    if name == "quarter-annulus-2d":
        return quarter_annulus()
    if name == "quarter-annulus-3d":
        return extrude(quarter_annulus())
    raise GeometryError(f"unknown domain {name!r}; choose from {', '.join(BUILTIN_DOMAINS)}")


def get_geometry(name_or_path):
    if name_or_path in BUILTIN_DOMAINS:
        return builtin_domain(name_or_path)
    return load_geometry(name_or_path)


# -- file I/O --------------------------------------------------------------

def save_geometry(G, path):
    data = {
        "dim": G.dim,
        "degrees": [int(p) for p in G.degrees],
        "knots": [[float(t) for t in kv] for kv in G.knots],
        "control_points": G.control_points.reshape(-1, G.dim).tolist(),
    }
    if G.is_rational:
        data["weights"] = G.weights.ravel().tolist()
    Path(path).write_text(json.dumps(data, indent=1), encoding="utf-8")


def _field(data, key, path):
    if key not in data:
        raise GeometryFormatError(f"{path}: missing field {key!r}")
    return data[key]


def load_geometry(path):
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as err:
        raise GeometryFormatError(
            f"{path}: invalid JSON at line {err.lineno}, column {err.colno}: {err.msg}") from None
    if not isinstance(data, dict):
        raise GeometryFormatError(f"{path}: top level must be an object")
    dim = _field(data, "dim", path)
    if dim not in (2, 3):
        raise GeometryFormatError(f"{path}: field 'dim' must be 2 or 3, got {dim!r}")
    degrees = _field(data, "degrees", path)
    knots = _field(data, "knots", path)
    if len(degrees) != dim or len(knots) != dim:
        raise GeometryFormatError(f"{path}: fields 'degrees' and 'knots' need {dim} entries")
    knots = tuple(np.asarray(kv, dtype=float) for kv in knots)
    for a, kv in enumerate(knots):
        if np.any(np.diff(kv) < 0):
            raise GeometryFormatError(f"{path}: field 'knots[{a}]' is not nondecreasing")
    shape = tuple(len(kv) - int(p) - 1 for kv, p in zip(knots, degrees))
    if any(n < 1 for n in shape):
        raise GeometryFormatError(f"{path}: knot vectors too short for the given degrees")
    cps = np.asarray(_field(data, "control_points", path), dtype=float)
    if cps.shape != (int(np.prod(shape)), dim):
        raise GeometryFormatError(
            f"{path}: field 'control_points' has shape {cps.shape}, "
            f"expected ({int(np.prod(shape))}, {dim})")
    weights = None
    if "weights" in data and data["weights"] is not None:
        weights = np.asarray(data["weights"], dtype=float)
        if weights.shape != (int(np.prod(shape)),):
            raise GeometryFormatError(
                f"{path}: field 'weights' has length {weights.size}, expected {int(np.prod(shape))}")
        bad = np.nonzero(weights <= 0)[0]
        if bad.size:
            raise GeometryFormatError(
                f"{path}: field 'weights[{bad[0]}]' = {weights[bad[0]]} is not positive")
        weights = weights.reshape(shape)
    return GeometryMap(dim=dim, degrees=tuple(int(p) for p in degrees), knots=knots,
                       control_points=cps.reshape(shape + (dim,)), weights=weights)
