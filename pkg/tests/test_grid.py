import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from radonlab.grid import (Cutoff, CutoffSet, Grid, GridError, GridFunction, interpolate, interpolation_matrix,
                           sigma, sigma_integral)


def test_weights_sum_to_volume():
    g = Grid(np.array([[-1, 1], [0, 3]]), (5, 7))
    assert abs(g.weights.sum() - 6.0) < 1e-12


def test_trapezoid_exact_on_linear():
    g = Grid.uniform([[0, 2], [0, 1]], 9)
    f = g.sample(lambda p: 1 + 2 * p[:, 0] - p[:, 1])
    assert abs(np.dot(g.weights, f.values) - (2 + 4 - 1)) < 1e-12


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4),
       st.lists(st.tuples(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1)), min_size=1, max_size=10))
def test_interpolation_exact_on_affine(c, pts):
    g = Grid.uniform([[-1, 1]] * 3, 6)
    f = g.sample(lambda p: c[0] + p @ np.array(c[1:]))
    pts = np.array(pts)
    assert np.max(np.abs(interpolate(f, pts) - (c[0] + pts @ np.array(c[1:])))) < 1e-10


def test_interpolation_clamps_outside():
    g = Grid.uniform([[0, 1]], 3)
    f = g.function([0.0, 1.0, 4.0])
    np.testing.assert_allclose(interpolate(f, np.array([[-5.0], [2.0]])), [0.0, 4.0])


def test_interpolation_rows_are_convex():
    g = Grid.uniform([[-1, 1]] * 2, 5)
    M = interpolation_matrix(g, np.random.default_rng(0).uniform(-1.5, 1.5, (50, 2)))
    assert np.all(M.data >= 0)
    np.testing.assert_allclose(np.asarray(M.sum(axis=1)).ravel(), 1.0)


def test_refined_halves_spacing():
    g = Grid.uniform([[0, 1]] * 2, 5)
    np.testing.assert_allclose(g.refined().spacing, g.spacing / 2)


@pytest.mark.parametrize("suffix", [".rlgf", ".csv"])
def test_grid_function_round_trip(tmp_path, suffix):
    g = Grid(np.array([[-1, 1], [0, 2]]), (4, 3))
    f = g.function(np.random.default_rng(3).standard_normal(g.size))
    path = tmp_path / f"f{suffix}"
    f.save(path)
    back = GridFunction.load(path)
    assert back.grid == g
    assert np.array_equal(back.values, f.values)


def test_corrupt_file_rejected():
    with pytest.raises(GridError):
        GridFunction.from_bytes(b"nope")


def test_non_finite_values_rejected():
    g = Grid.uniform([[0, 1]], 3)
    with pytest.raises(GridError):
        g.function([0.0, np.nan, 1.0])


def test_norms():
    g = Grid.uniform([[0, 1]], 11)
    f = g.function(np.full(11, 2.0))
    assert abs(f.norm(2) - 2.0) < 1e-12
    assert f.norm(np.inf) == 2.0


def test_default_cutoffs_nest():
    c = CutoffSet.for_box([[-1, 1]] * 3)
    assert c.psi0.dominates(c.psi1) and c.psi1.dominates(c.psi2)


def test_non_nesting_radii_rejected():
    with pytest.raises(GridError):
        CutoffSet.for_box([[-1, 1]], {"psi1": (0.4, 0.7)})


def test_cutoff_plateau_and_support():
    c = Cutoff((0.0,), (1.0,), 0.3, 0.6)
    np.testing.assert_allclose(c(np.array([[0.0], [0.29], [0.61], [0.9]])), [1, 1, 0, 0])


def test_sigma_integral_one_dimensional():
    # sigma0 is symmetric about |s| = 3/4 on the transition, so its integral is 3/2
    assert abs(sigma_integral(1) - 1.5) < 1e-10
    assert abs(sigma_integral(2) - 2.25) < 1e-10
    assert sigma(np.zeros(3)) == 1.0
