import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from radonlab.kernels import (KernelError, ProductKernel, cancellation_audit, dilate, dilation_invariance,
                              integral, make_broken_family, make_cancelling_family, make_lp_family, mollifier,
                              mollifier_mass, size_exponent, validate_product_kernel)


@pytest.mark.parametrize("d", [1, 2, 3])
def test_mollifier_has_unit_mass(d):
    fam = make_lp_family((d,), 1.0, (0,))
    n = 200 if d == 1 else 60 if d == 2 else 24
    pts, w = fam.factor_grid(0, n)
    assert abs(np.dot(w, mollifier(pts, 0.5)) - 1.0) < 1e-3


def test_mollifier_mass_one_dimensional():
    # integral of exp(-1/(1-u^2)) over [-1, 1]
    from scipy.integrate import quad
    exact, _ = quad(lambda u: math.exp(-1 / (1 - u * u)), -1, 1, epsabs=1e-14)
    assert abs(mollifier_mass(1) - exact) < 1e-12


def test_cancellation_up_to_J8():
    audit = cancellation_audit(make_cancelling_family((1, 1), 0.25, (8, 8)))
    assert audit["max_rel_integral"] < 1e-12 and audit["passed"]


def test_broken_family_does_not_cancel():
    fam = make_broken_family((1,), 0.25, (2,))
    assert integral(fam.member((1,)), fam) > 0.1


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 8), st.integers(0, 8))
def test_dilation_preserves_integral(j1, j2):
    fam = make_cancelling_family((1, 1), 0.25, (8, 8))
    assert dilation_invariance(fam, (j1, j2))["difference"] < 1e-9


@pytest.mark.parametrize("dims", [(1, 1), (2, 1)])
def test_size_exponents(dims):
    K = ProductKernel(make_cancelling_family(dims, 0.25, (8, 8)))
    for mu, d in enumerate(dims):
        assert abs(size_exponent(K, mu)["slope"] + d) < 0.15


def test_lp_family_telescopes():
    fam = make_lp_family((1,), 1.0, (5,))
    K = ProductKernel(fam)
    u = np.linspace(-0.3, 0.3, 41)[:, None]
    target = dilate(lambda v: mollifier(v, fam.factor_radius / 2), (5,), (1,))(u)
    np.testing.assert_allclose(K.evaluate_separable(u), target, atol=1e-10 * target.max())


def test_members_are_tensor_products():
    fam = make_cancelling_family((1, 1), 0.5, (2, 2))
    t = np.array([[0.3, -0.2]])
    a = fam.member((1, 2))(t)
    b = fam.factor_piece(1)(t[:, :1]) * fam.factor_piece(2)(t[:, 1:])
    np.testing.assert_allclose(a, b)


def test_kernel_refuses_axis_points():
    K = ProductKernel(make_cancelling_family((1, 1), 0.5, (2, 2)))
    with pytest.raises(KernelError):
        K.evaluate(np.array([[0.0, 0.1]]))


def test_truncation_must_fit_family():
    with pytest.raises(KernelError):
        ProductKernel(make_cancelling_family((1, 1), 0.5, (2, 2)), (3, 1))


def test_validation_separates_cancelling_from_broken():
    good = validate_product_kernel(ProductKernel(make_cancelling_family((1, 1), 0.25, (8, 8))))
    bad = validate_product_kernel(ProductKernel(make_broken_family((1, 1), 0.25, (8, 8))))
    assert good.passed and not bad.passed


def test_family_round_trip():
    fam = make_cancelling_family((1, 2), 0.3, (3, 1))
    assert type(fam).from_dict(fam.to_dict()) == fam


def test_invalid_family_parameters():
    with pytest.raises(KernelError):
        make_cancelling_family((1,), -1.0, (2,))
    with pytest.raises(KernelError):
        make_cancelling_family((1, 1), 0.5, (2,))
