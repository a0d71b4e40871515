import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from radonlab.analysis import (bump_family, cotlar_scan, fit_slope, l1_delta_modulus, maximal_check, op_norm_l2,
                               reconstruction_residual, remainder_scan, signed_combinations, square_function_check)
from radonlab.grid import Grid, GridFunction
from radonlab.operators import DiscretizedOperator


def weighted_svd(A, w):
    s = np.sqrt(w)
    return np.linalg.svd(s[:, None] * A / s[None, :], compute_uv=False)[0]


def test_identity_norm():
    g = Grid.uniform([[0, 1]] * 2, 9)
    assert abs(op_norm_l2(DiscretizedOperator.identity(g)).value - 1.0) < 1e-6


def test_diagonal_scaling_norm():
    g = Grid.uniform([[0, 1]], 30)
    assert abs(op_norm_l2(DiscretizedOperator.multiplier(g, np.full(30, 3.0))).value - 3.0) < 1e-6


def test_random_dense_matches_svd():
    g = Grid.uniform([[0, 1]], 200)
    A = np.random.default_rng(5).standard_normal((200, 200))
    op = DiscretizedOperator.from_matrix(g, A)
    est = op_norm_l2(op, tol=1e-10, max_iter=3000, dense_check=True)
    oracle = weighted_svd(A, g.weights)
    assert abs(est.value - oracle) / oracle < 1e-3
    assert abs(est.dense - oracle) / oracle < 1e-12


@settings(max_examples=10, deadline=None)
@given(st.floats(-5, 5).filter(lambda c: abs(c) > 0.1))
def test_norm_homogeneity(c):
    g = Grid.uniform([[0, 1]], 40)
    A = np.random.default_rng(1).standard_normal((40, 40))
    op = DiscretizedOperator.from_matrix(g, A)
    base = op_norm_l2(op, tol=1e-10, max_iter=2000).value
    assert abs(op_norm_l2(op.scaled(c), tol=1e-10, max_iter=2000).value - abs(c) * base) < 1e-6 * abs(c) * base


def test_c_star_identity(heis_factory):
    T = heis_factory.t_piece((1, 1))
    n = op_norm_l2(T, tol=1e-8, max_iter=500).value
    nn = op_norm_l2(T.compose(T.adjoint()), tol=1e-8, max_iter=500).value
    assert abs(nn - n * n) <= 2e-4 * n * n


def test_power_iteration_agrees_with_dense(heis_factory):
    est = op_norm_l2(heis_factory.t_piece((1, 0)), dense_check=True)
    assert abs(est.value - est.dense) / est.dense < 0.02


def test_cotlar_diagonal_is_norm_squared(heis_factory):
    scan = cotlar_scan(heis_factory, (1, 1), (0,), {"tol": 1e-8, "max_iter": 500})
    n = op_norm_l2(heis_factory.t_piece((1, 1)), tol=1e-8, max_iter=500).value
    assert abs(scan["rows"][0]["TjStarTk"] - n * n) < 1e-4 * n * n


def test_fit_is_order_invariant():
    x = [0, 1, 2, 3, 4]
    y = [1.0, 0.4, 0.26, 0.12, 0.05]
    perm = [3, 0, 4, 1, 2]
    assert fit_slope(x, y) == pytest.approx(fit_slope([x[i] for i in perm], [y[i] for i in perm]), abs=1e-12)
    assert fit_slope([0, 1, 2], [1, 0.5, 0.25]) == pytest.approx(-1.0)


def test_remainder_scan_shape(heis_factory):
    out = remainder_scan(heis_factory, 2, (0, 1))
    assert [r["M"] for r in out["rows"]] == [0, 1]


def test_square_function_reports_band(heis_factory):
    f = heis_factory.grid.sample(lambda p: np.exp(-np.sum(p * p, axis=1) / 0.1))
    out = square_function_check(heis_factory, 2, [f], sign_sets=5)
    assert 0 < out["lower"] <= out["upper"]
    assert out["signed_spread"] >= 1.0


def test_reconstruction_constant_on_plateau(heis_factory):
    # f = 1 has no oscillation: sum_j D_j f is psi0^4 f up to the cutoff edge
    f = GridFunction(heis_factory.grid, np.ones(heis_factory.grid.size))
    assert reconstruction_residual(heis_factory, 2, f)["relative"] < 0.2


def test_maximal_of_constant_is_volume(heis_factory):
    M = heis_factory.maximal([(1.0, 1.0), (0.5, 0.5)], 6)
    one = GridFunction(heis_factory.grid, np.ones(heis_factory.grid.size))
    Mf = M.apply(one).values
    np.testing.assert_allclose(Mf, M.psi * M.volume, rtol=1e-12)
    out = maximal_check(M, [one] + bump_family(heis_factory.grid, (0, 1)))
    assert out["linf_bound_holds"]


def test_signed_combinations_enumerate_small_cases():
    combos = signed_combinations(3, 20)
    assert len(combos) == 8 and len({tuple(c) for c in combos}) == 8


# L^1 translation modulus oracles


def _line(n=801):
    return Grid.uniform([[-2, 2]], n)


def test_modulus_of_step_is_exact():
    g = _line()
    h = g.sample(lambda p: ((p[:, 0] > -0.5) & (p[:, 0] < 0.5)).astype(float))
    # translating an indicator of an interval by z changes 2|z| of mass
    out = l1_delta_modulus(h, [(k,) for k in (1, 2, 4, 8, 16)])
    for row in out["rows"]:
        assert row["integral"] == pytest.approx(2 * row["norm_z"], rel=1e-9)
    assert out["modulus"]["1.0"] == pytest.approx(2.0, rel=1e-9)
    assert out["growth_exponent"] == pytest.approx(1.0, abs=1e-6)


def test_modulus_of_smooth_bump_is_gradient_norm():
    g = _line(2001)
    h = bump_family(g, [0], radius=0.5)[0]
    grad = np.abs(np.gradient(h.values, g.spacing[0]))
    out = l1_delta_modulus(h, [(1,), (2,)])
    assert out["modulus"]["1.0"] == pytest.approx(float(np.dot(g.weights, grad)), rel=0.02)


def test_singular_profile_has_small_exponent():
    g = _line(4001)
    x = g.points[:, 0]
    h = g.function(np.where(np.abs(x) < 1, np.abs(x + 1e-9) ** -0.5 * (1 - x * x) ** 2, 0.0))
    out = l1_delta_modulus(h, [(k,) for k in (1, 2, 4, 8, 16, 32)])
    assert out["growth_exponent"] < 0.8


def test_modulus_rejects_large_shift():
    g = _line(41)
    h = bump_family(g, [0], radius=0.3)[0]
    with pytest.raises(ValueError):
        l1_delta_modulus(h, [(20,)])


def test_modulus_rejects_zero_shift():
    g = _line(41)
    with pytest.raises(ValueError):
        l1_delta_modulus(bump_family(g, [0], radius=0.3)[0], [(0,)])
