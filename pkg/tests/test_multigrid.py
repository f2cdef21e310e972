import numpy as np
import pytest
import scipy.linalg
from scipy.interpolate import BSpline

from biharmonic_mg.geometry import builtin_domain
from biharmonic_mg.multigrid import (CycleSpec, build_hierarchy, default_level_min, mg_cycle,
                                     preconditioner, solve)


def galerkin_gap(H, i):
    P = H.prolongation_matrix(i).toarray()
    Af, Ac = H.levels[i].dense(), H.levels[i - 1].dense()
    return np.abs(P.T @ Af @ P - Ac).max() / np.abs(Ac).max()


@pytest.mark.parametrize("kind", ["gs", "mass", "hybrid"])
def test_three_level_galerkin_consistency(kind):
    H = build_hierarchy(3, 3, level_min=1, d=2, smoother_kind=kind)
    assert [L.level for L in H.levels] == [1, 2, 3]
    for i in (1, 2):
        assert galerkin_gap(H, i) < 1e-10


def test_mapped_domain_galerkin_gap_is_small():
    H = build_hierarchy(3, 3, level_min=2, d=2, geometry=builtin_domain("quarter-annulus-2d"))
    assert galerkin_gap(H, 1) < 1e-2


def test_prolongation_reproduces_coarse_splines():
    H = build_hierarchy(4, 3, level_min=2, d=2)
    coarse, fine = H.levels[0], H.levels[1]
    rng = np.random.default_rng(0)
    uc = rng.standard_normal(coarse.ndofs)
    uf = H.prolong(1, uc)
    pts = rng.uniform(0, 1, (20, 2))

    def evaluate(level, coeffs):
        s, free = level.spaces[0], level.frees[0]
        C = np.zeros((s.n, s.n))
        C[np.ix_(free, free)] = coeffs.reshape(level.dims)
        Bx = BSpline.design_matrix(pts[:, 0], s.knots, s.p).toarray()
        By = BSpline.design_matrix(pts[:, 1], s.knots, s.p).toarray()
        return np.einsum("qi,ij,qj->q", Bx, C, By)

    assert np.max(np.abs(evaluate(coarse, uc) - evaluate(fine, uf))) < 1e-12


def test_restriction_is_adjoint():
    H = build_hierarchy(3, 4, level_min=2, d=3)
    rng = np.random.default_rng(1)
    u = rng.standard_normal(H.levels[1].ndofs)
    v = rng.standard_normal(H.levels[2].ndofs)
    assert H.prolong(2, u) @ v == pytest.approx(u @ H.restrict(2, v), rel=1e-12)


def test_single_level_is_exact_solve():
    H = build_hierarchy(3, 3, level_min=3, d=2)
    f = np.random.default_rng(2).standard_normal(H.levels[0].ndofs)
    u = np.zeros_like(f)
    mg_cycle(H, CycleSpec(), 0, u, f)
    assert np.allclose(H.levels[0].dense() @ u, f, atol=1e-10 * np.abs(f).max())


@pytest.mark.parametrize("kind", ["gs", "mass", "hybrid"])
@pytest.mark.parametrize("cycle", ["v", "w", "two-grid"])
def test_cycle_fixes_exact_solution(kind, cycle):
    H = build_hierarchy(4, 4, d=2, smoother_kind=kind,
                        geometry=builtin_domain("quarter-annulus-2d") if kind != "mass" else None)
    A = H.levels[-1].dense()
    x = np.random.default_rng(3).standard_normal(A.shape[0])
    f = A @ x
    u = x.copy()
    mg_cycle(H, CycleSpec(cycle=cycle), len(H.levels) - 1, u, f)
    assert np.max(np.abs(u - x)) < 1e-10 * np.abs(x).max()


@pytest.mark.parametrize("kind", ["gs", "mass", "hybrid"])
@pytest.mark.parametrize("cycle", ["v", "w"])
def test_symmetric_preconditioner(kind, cycle):
    H = build_hierarchy(3, 3, d=2, smoother_kind=kind)
    P = preconditioner(H, CycleSpec(cycle=cycle))
    N = H.levels[-1].ndofs
    M = np.column_stack([P(e) for e in np.eye(N)])
    assert np.max(np.abs(M - M.T)) < 1e-10 * np.abs(M).max()
    assert np.linalg.eigvalsh(0.5 * (M + M.T)).min() > 0


def test_two_grid_mass_contracts():
    H = build_hierarchy(4, 4, level_min=3, d=2, smoother_kind="mass")
    A = H.levels[-1].dense()
    spec = CycleSpec(cycle="two-grid", nu_pre=4, nu_post=4)
    # power iteration on the error propagation in the energy norm
    e = np.random.default_rng(4).standard_normal(A.shape[0])
    zero = np.zeros_like(e)
    q = 0.0
    for _ in range(60):
        e = e / np.sqrt(e @ A @ e)
        e = mg_cycle(H, spec, 1, e.copy(), zero)
        q = np.sqrt(e @ A @ e)
    assert 0 < q < 1


def test_zero_rhs():
    H = build_hierarchy(3, 4, d=2)
    res = solve(H, rhs=np.zeros(H.levels[-1].ndofs))
    assert res.iterations == 0 and np.all(res.u == 0)


def test_non_convergence_flagged():
    H = build_hierarchy(8, 4, d=2)
    res = solve(H, max_iter=2)
    assert not res.converged and res.iterations == 2


def test_solution_matches_direct_solve():
    H = build_hierarchy(3, 3, d=2, smoother_kind="hybrid",
                        geometry=builtin_domain("quarter-annulus-2d"))
    f = np.random.default_rng(5).standard_normal(H.levels[-1].ndofs)
    res = solve(H, rhs=f, rel_tol=1e-12)
    ref = scipy.linalg.solve(H.fine_B.toarray(), f, assume_a="pos")
    assert np.allclose(res.u, ref, rtol=1e-8, atol=1e-10 * np.abs(ref).max())


def test_unit_square_gs_p3():
    assert abs(solve(build_hierarchy(3, 6, d=2)).iterations - 5) <= 2


def test_unit_cube_gs_p3_level4():
    assert abs(solve(build_hierarchy(3, 4, d=3)).iterations - 12) <= 2


def test_w_and_v_cycles_comparable():
    for p in (3, 4, 5):
        H = build_hierarchy(p, 5, d=2)
        v = solve(H, CycleSpec(cycle="v")).iterations
        w = solve(H, CycleSpec(cycle="w")).iterations
        assert abs(w - v) <= 0.2 * v + 1e-12


def test_seed_reproducible():
    H = build_hierarchy(4, 4, d=2, smoother_kind="mass")
    a, b = solve(H, seed=7), solve(H, seed=7)
    assert a.iterations == b.iterations and np.array_equal(a.u, b.u)


def test_invalid_inputs():
    with pytest.raises(ValueError):
        CycleSpec(cycle="f")
    with pytest.raises(ValueError):
        CycleSpec(nu_pre=0, nu_post=0)
    with pytest.raises(ValueError):
        build_hierarchy(3, 4, level_min=0)  # empty clamped space
    with pytest.raises(ValueError):
        build_hierarchy(3, 4, smoother_kind="jacobi")
    with pytest.raises(ValueError):
        build_hierarchy(2, 4)


def test_default_coarsest_level_nonempty():
    for p in range(3, 11):
        for kind in ("gs", "mass"):
            lv = default_level_min(p, kind)
            assert 2 ** lv + p - 4 >= 1
