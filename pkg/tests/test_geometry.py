import numpy as np
import pytest
from scipy.spatial import ConvexHull, Delaunay

from radonlab.fields import DegreedField, FormalDegree, VectorField
from radonlab.geometry import (ChartConfig, GeometryError, ScaledFrame, build_chart, cc_ball_sample,
                               contained_fraction, linear_gamma, pullback_hormander_check, square_loop_controls,
                               uniformity_scan)
from radonlab.operators import _default_finite_set
from radonlab.scenarios import get_scenario


def coordinate_frame(n):
    return [DegreedField(VectorField.coordinate(n, i), FormalDegree((1,)), f"d{i}") for i in range(n)]


@pytest.fixture(scope="module")
def heis_base():
    return _default_finite_set(get_scenario("heisenberg").gamma)


@pytest.fixture(scope="module")
def heis_chart(heis_base):
    return build_chart(ScaledFrame(heis_base, (0, 0)), np.zeros(3))


def test_cloud_collapses_as_xi_shrinks():
    frame = ScaledFrame(get_scenario("heisenberg").gamma.pure(), (0, 0))
    for xi in (1e-2, 1e-4):
        cloud = cc_ball_sample(frame, np.zeros(3), xi, 200)
        assert np.max(np.linalg.norm(cloud.points, axis=1)) < 2 * xi


@pytest.mark.parametrize("segments", [1, 2])
def test_plane_cloud_hull_matches_brute_force(segments):
    frame = ScaledFrame(coordinate_frame(2), (0,))
    xi = 0.5
    cloud = cc_ball_sample(frame, np.zeros(2), xi, 2000, segments, seed=0)
    # exhaustive control grid for the same number of segments
    levels = np.linspace(-xi, xi, 5)
    grid = np.stack(np.meshgrid(*([levels] * (2 * segments)), indexing="ij"), -1).reshape(-1, segments, 2)
    brute = cc_ball_sample(frame, np.zeros(2), xi, controls=grid)
    a, b = ConvexHull(cloud.points).volume, ConvexHull(brute.points).volume
    assert abs(a - b) / b < 0.15


def test_square_loop_reaches_t_axis():
    frame = ScaledFrame(get_scenario("heisenberg").gamma.pure(), (0, 0))
    xi = 1.0
    ix, iy = frame.labels.index("X"), frame.labels.index("Y")
    loop = cc_ball_sample(frame, np.zeros(3), xi, controls=square_loop_controls(xi, 2, ix, iy))
    # X, Y, -X, -Y; each leg lasts 1/4 with speed xi: the loop encloses area xi^2/16
    np.testing.assert_allclose(loop.points[0], [0, 0, xi**2 / 16], atol=1e-12)


def test_random_cloud_reaches_t_axis():
    frame = ScaledFrame(get_scenario("heisenberg").gamma.pure(), (0, 0))
    cloud = cc_ball_sample(frame, np.zeros(3), 1.0, 2000, seed=0)
    assert np.max(np.abs(cloud.points[:, 2])) > 0.1


def test_clouds_are_nested():
    frame = ScaledFrame(get_scenario("heisenberg").gamma.pure(), (0, 0))
    small = cc_ball_sample(frame, np.zeros(3), 0.5, 1000, seed=1).points
    big = cc_ball_sample(frame, np.zeros(3), 1.0, 4000, seed=2).points
    inside = Delaunay(big).find_simplex(small) >= 0
    assert inside.mean() >= 0.99


def test_too_many_dropped_paths():
    frame = ScaledFrame(coordinate_frame(2), (0,))
    with pytest.raises(GeometryError):
        cc_ball_sample(frame, np.zeros(2), 1.0, 100, box=np.array([[-0.01, 0.01]] * 2))


def test_abelian_chart_is_affine():
    chart = build_chart(ScaledFrame(coordinate_frame(3), (0,)), np.array([0.1, 0.2, 0.3]))
    assert chart.n0 == 3 and chart.eta == 1.0
    assert chart.det_floor == pytest.approx(1.0, abs=1e-9)
    u = np.array([[0.2, -0.1, 0.3]])
    np.testing.assert_allclose(chart.phi(u)[0], [0.3, 0.1, 0.6], atol=1e-12)


def test_heisenberg_chart(heis_chart):
    assert heis_chart.n0 == 3
    assert sorted(heis_chart.to_dict()["selection"]) == ["X", "Y", "[X,Y]"]
    assert np.isfinite(heis_chart.c_bound) and heis_chart.det_floor > 0.5


def test_chart_is_deterministic(heis_base):
    a = build_chart(ScaledFrame(heis_base, (1, 0)), np.zeros(3)).to_dict()
    b = build_chart(ScaledFrame(heis_base, (1, 0)), np.zeros(3)).to_dict()
    assert a == b


def test_grushin_chart_at_origin():
    sc = get_scenario("grushin")
    pure = {d.label: d for d in sc.gamma.pure()}
    dx, xdy = pure["X"], pure["Y"]
    dy = DegreedField(VectorField.from_strings(["0", "1"], ["x", "y"]), FormalDegree((2,)), "dy")
    chart = build_chart(ScaledFrame([dx, xdy, dy], (0,)), np.zeros(2))
    assert chart.n0 == 2 and sorted(chart.to_dict()["selection"]) == ["X", "dy"]
    u = np.array([[0.0, s] for s in np.linspace(-0.5, 0.5, 5)])
    Y, _ = chart.pullback(xdy.field, u)
    assert np.max(np.abs(Y)) < 1e-8
    Y, _ = chart.pullback(xdy.field, np.array([[0.3, 0.1]]))
    np.testing.assert_allclose(Y[0], [0.0, 0.3], atol=1e-6)


def test_rank_deficiency_is_reported():
    zero = DegreedField(VectorField(["0", "0"]), FormalDegree((1,)), "Z")
    with pytest.raises(GeometryError):
        build_chart(ScaledFrame([zero], (0,)), np.zeros(2))


def test_ball_inside_chart(heis_chart, heis_base):
    frame = ScaledFrame(heis_base, (0, 0))
    cloud = cc_ball_sample(frame, np.zeros(3), 0.25, 200, seed=3)
    assert contained_fraction(heis_chart, cloud.points) >= 0.99


def test_scaled_brackets_stay_bounded(heis_base):
    probes = np.random.default_rng(0).uniform(-0.1, 0.1, (16, 3))
    coefs = [ScaledFrame(heis_base, j0).bracket_coefficients(probes)["max_coefficient"]
             for j0 in [(0, 0), (2, 1), (4, 4)]]
    assert max(coefs) / min(coefs) < 10


def test_abelian_uniformity_is_exactly_constant():
    out = uniformity_scan(coordinate_frame(2), np.zeros(2), [(0,), (1,), (3,)])
    for col in ("det_floor", "c_bound", "eta"):
        assert len({row[col] for row in out["rows"]}) == 1


def test_degenerate_flat_loses_uniformity():
    sc = get_scenario("degenerate-flat")
    out = uniformity_scan(sc.gamma.pure(), np.array([0.3, 0.0]), [(0, j) for j in range(5)] + [(4, 0)])
    assert out["bands"]["c_bound"] > 10
    assert out["bands"]["bracket_coefficient"] > 10


def test_pullback_hormander(heis_base):
    gamma = get_scenario("heisenberg").gamma
    chart = build_chart(ScaledFrame(heis_base, (0, 0)), np.zeros(3), ChartConfig(mesh_per_axis=5))
    mesh = chart.mesh[::7]
    rep = pullback_hormander_check(chart, gamma, (3, 0), (0, 3), points=mesh)
    assert rep.satisfied and rep.details["max_min_depth"] == 2
    assert rep.details["each_pure_power_unscaled_once"]
    assert rep.details["smallest_singular_value"] > 0.1
    same = pullback_hormander_check(chart, gamma, (0, 0), (0, 0))
    assert same.satisfied


def test_pullback_hormander_abelian_depth_one():
    chart = build_chart(ScaledFrame(coordinate_frame(3), (0,)), np.zeros(3))
    gamma = linear_gamma([VectorField.coordinate(3, i) for i in range(3)])
    rep = pullback_hormander_check(chart, gamma, (0,), (0,))
    assert rep.satisfied and rep.details["min_depth"] == 1


def test_pullback_hormander_needs_meet(heis_chart):
    with pytest.raises(GeometryError):
        pullback_hormander_check(heis_chart, get_scenario("heisenberg").gamma, (1, 1), (2, 2))
