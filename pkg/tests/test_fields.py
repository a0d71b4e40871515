import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from radonlab.fields import (FieldError, FormalDegree, GammaSpec, VectorField, check_algebraic,
                             check_finite_type, check_hormander, default_probes, flat_numeric,
                             generate_closure, lie_bracket, search_finite_type, span_fit)
from radonlab.scenarios import LIBRARY, get_scenario, scenario_from_dict

X = VectorField.from_strings(["1", "0", "-y/2"], ["x", "y", "t"])
Y = VectorField.from_strings(["0", "1", "x/2"], ["x", "y", "t"])
T = VectorField.from_strings(["0", "0", "1"], ["x", "y", "t"])


def test_heisenberg_bracket_is_T():
    B = lie_bracket(X, Y)
    assert B.is_symbolic
    assert [sp.simplify(c - e) for c, e in zip(B.coeffs, T.coeffs)] == [0, 0, 0]


def test_grushin_bracket():
    dx = VectorField.from_strings(["1", "0"], ["x", "y"])
    xdy = VectorField.from_strings(["0", "x"], ["x", "y"])
    B = lie_bracket(dx, xdy)
    np.testing.assert_allclose(B(np.array([[0.3, -0.2], [0.0, 0.5]])), [[0, 1], [0, 1]])


def test_numeric_bracket_matches_symbolic():
    Xn = VectorField.from_callable(3, X)
    Yn = VectorField.from_callable(3, Y)
    pts = default_probes(np.array([[-1, 1]] * 3), 20)
    np.testing.assert_allclose(lie_bracket(Xn, Yn)(pts), lie_bracket(X, Y)(pts), atol=1e-6)


poly = st.sampled_from(["x", "y", "x*y", "y**2", "1", "x**2 - y", "3*x*y**2"])


@settings(max_examples=25, deadline=None)
@given(a=st.lists(poly, min_size=2, max_size=2), b=st.lists(poly, min_size=2, max_size=2),
       c=st.lists(poly, min_size=2, max_size=2))
def test_bracket_antisymmetry_and_jacobi(a, b, c):
    A, B, C = (VectorField.from_strings(v, ["x", "y"]) for v in (a, b, c))
    pts = default_probes(np.array([[-1, 1]] * 2), 30)
    np.testing.assert_allclose(lie_bracket(A, B)(pts), -lie_bracket(B, A)(pts), atol=1e-12)
    jac = (lie_bracket(A, lie_bracket(B, C))(pts) + lie_bracket(B, lie_bracket(C, A))(pts)
           + lie_bracket(C, lie_bracket(A, B))(pts))
    assert np.max(np.abs(jac)) < 1e-9


@given(st.lists(st.integers(0, 5), min_size=2, max_size=2), st.lists(st.integers(0, 5), min_size=2, max_size=2))
def test_degree_addition_is_componentwise(a, b):
    d = FormalDegree(tuple(a)) + FormalDegree(tuple(b))
    assert d.components == tuple(x + y for x, y in zip(a, b))
    assert FormalDegree(tuple(a)) <= d


def test_negative_degree_rejected():
    with pytest.raises(FieldError):
        FormalDegree((1, -1))


def test_closure_degrees_add_along_brackets(heisenberg):
    probes = default_probes(heisenberg.box, 50)
    closure = generate_closure(heisenberg.gamma, max_depth=3, probes=probes)
    for e in closure:
        total = e.leaf_degrees[0]
        for d in e.leaf_degrees[1:]:
            total = total + d
        assert total == e.degree


def test_parse_rejects_unknown_functions():
    with pytest.raises(FieldError):
        VectorField.from_strings(["foo(x)", "0"], ["x", "y"])


def test_flat_function_values():
    x = np.array([0.0, 0.5, -0.5])
    np.testing.assert_allclose(flat_numeric(x), [0.0, np.exp(-4), np.exp(-4)])


def test_span_fit_exact_combination(rng):
    cols = [rng.standard_normal((5, 3)) for _ in range(2)]
    target = 2 * cols[0] - cols[1]
    res, coef = span_fit(target, cols)
    assert np.max(res) < 1e-10
    np.testing.assert_allclose(coef, np.sqrt(5), rtol=1e-8)


def _verdicts(name, depth=4):
    sc = get_scenario(name)
    probes = default_probes(sc.box, 100)
    cl = generate_closure(sc.gamma, max_depth=depth, probes=probes)
    return search_finite_type(cl, probes), check_algebraic(sc.gamma, cl, probes)


@pytest.mark.parametrize("name,finite,algebraic", [
    ("heisenberg", True, True),
    ("cubic-counterexample", True, False),
    ("euclidean-negative", True, False),
    ("degenerate-flat", False, True),
    ("grushin", True, True),
    ("abelian-translation", True, True),
])
def test_condition_verdicts(name, finite, algebraic):
    ft, al = _verdicts(name)
    assert ft.satisfied is finite
    assert al.satisfied is algebraic


@pytest.mark.parametrize("name", ["grushin", "abelian-translation", "degenerate-flat"])
def test_one_parameter_algebraic_is_vacuous(name):
    _, al = _verdicts(name)
    assert al.details["vacuous"]


def test_algebraic_failure_names_witness():
    _, al = _verdicts("cubic-counterexample")
    assert al.witness == "B"


def test_finite_type_needs_subset_of_closure(heisenberg):
    probes = default_probes(heisenberg.box, 20)
    cl = generate_closure(heisenberg.gamma, max_depth=2, probes=probes)
    foreign = heisenberg.gamma.non_pure()
    with pytest.raises(FieldError):
        check_finite_type(cl, foreign, probes)


def test_hormander_heisenberg_depth_two():
    rep = check_hormander([X, Y], np.zeros(3), 2)
    assert rep.satisfied
    assert not check_hormander([X, Y], np.zeros(3), 1).satisfied


def test_hormander_commuting_fields_fail():
    dx = VectorField.coordinate(3, 0)
    dy = VectorField.coordinate(3, 1)
    assert not check_hormander([dx, dy], np.zeros(3), 4).satisfied


def test_gamma_rejects_bad_multi_index():
    with pytest.raises(FieldError):
        GammaSpec((1, 1), {(1,): T})


def test_scenario_round_trip():
    for name in LIBRARY:
        sc = get_scenario(name)
        again = scenario_from_dict(sc.to_dict())
        assert again.to_dict() == sc.to_dict()


def test_unknown_scenario():
    with pytest.raises(KeyError):
        get_scenario("no-such-thing")
