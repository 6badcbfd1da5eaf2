import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hjdisc.model import (
    ContactModel,
    DiscountSpec,
    HamiltonianSpec,
    SignClass,
    eval_hamiltonian,
    eval_lagrangian,
    model_constants,
    reflect,
)
from hjdisc.scenarios import SCENARIOS, get_scenario

from conftest import SQRT3

angles = st.floats(-10.0, 10.0, allow_nan=False)
moments = st.floats(-8.0, 8.0, allow_nan=False)
values = st.floats(-50.0, 50.0, allow_nan=False)


def pendulum(c=1.0):
    return get_scenario("pendulum-sine").model(c)


def quadratic(c=0.0):
    return get_scenario("quadratic-sine").model(c)


# oracle examples


def test_quadratic_hamiltonian_at_top_of_sine():
    assert eval_hamiltonian(quadratic(0.0), math.pi / 2, 0.0, 1.0) == pytest.approx(1.0, abs=1e-15)


def test_pendulum_hamiltonian_vanishes_at_fixed_point():
    # at h_p = 0 the u-equation of the characteristics forces H = 0
    x = math.acos(0.5)
    assert eval_hamiltonian(pendulum(1.0), x, 0.0, SQRT3) == pytest.approx(0.0, abs=1e-14)


@pytest.mark.parametrize("name", sorted(SCENARIOS))
@given(x=angles, p=moments)
def test_hamiltonian_at_zero_value_is_h_minus_c(name, x, p):
    m = get_scenario(name).model(0.7)
    assert eval_hamiltonian(m, x, p, 0.0) == pytest.approx(float(m.h(x % (2 * math.pi), p)) - 0.7, abs=1e-12)


def test_pendulum_lagrangian_at_rest():
    assert eval_lagrangian(pendulum(), 0.0, 0.0) == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("x", [0.0, 1.0, 4.0])
def test_quadratic_lagrangian(x):
    assert eval_lagrangian(quadratic(), x, 2.0) == pytest.approx(1.0, abs=1e-14)


def test_tabulated_half_square_lagrangian_matches_closed_form():
    h = HamiltonianSpec.tabulate(lambda x, p: 0.5 * p**2 + 0 * x)
    m = ContactModel(h, DiscountSpec.constant(1.0))
    assert abs(eval_lagrangian(m, 0.3, 1.5) - 1.125) < 1e-8


def test_pendulum_sine_constants():
    k = model_constants(pendulum())
    assert k.E0 == pytest.approx(0.0, abs=1e-12)
    assert k.e0 == pytest.approx(-2.0, abs=1e-6)
    assert (k.Lambda, k.lambda_plus, k.lambda_minus) == pytest.approx((1.0, 1.0, -1.0), abs=1e-6)
    assert k.sign_class is SignClass.PLUS_MINUS


def test_constant_discount_constants():
    k = model_constants(get_scenario("homogeneous").model(0.0))
    assert (k.Lambda, k.lambda_plus, k.lambda_minus) == (1.0, 1.0, 1.0)
    assert k.sign_class is SignClass.PLUS


def test_squared_discount_constants():
    k = model_constants(get_scenario("appendix-c").model(0.0))
    assert k.lambda_minus == pytest.approx(0.0, abs=1e-12)
    assert k.lambda_plus == pytest.approx(4.0, abs=1e-12)
    assert k.sign_class is SignClass.PLUS


def test_constants_need_dense_sampling():
    with pytest.raises(ValueError):
        model_constants(pendulum(), n=100)


def test_reflect_even_hamiltonian_negates_discount():
    m = pendulum(1.0)
    r = reflect(m)
    x = np.linspace(0, 2 * np.pi, 33)
    p = np.linspace(-3, 3, 33)
    assert np.array_equal(r.h(x, p), m.h(x, p))
    assert np.allclose(r.lam(x), -np.sin(x), atol=0, rtol=0)
    assert r.c == m.c


@pytest.mark.parametrize("name, cls", [("pendulum-sine", SignClass.PLUS_MINUS), ("homogeneous", SignClass.MINUS)])
def test_reflected_sign_class(name, cls):
    assert model_constants(reflect(get_scenario(name).model(0.0))).sign_class is cls


@pytest.mark.parametrize("name", sorted(SCENARIOS))
@given(x=angles, p=moments, u=values)
def test_reflect_is_an_involution(name, x, p, u):
    m = get_scenario(name).model(0.4)
    assert eval_hamiltonian(reflect(reflect(m)), x, p, u) == eval_hamiltonian(m, x, p, u)


@pytest.mark.parametrize("name", sorted(SCENARIOS))
def test_reflected_constants(name):
    m = get_scenario(name).model(0.0)
    k, kr = model_constants(m), model_constants(reflect(m))
    assert kr.lambda_plus == -k.lambda_minus
    assert (kr.E0, kr.e0) == pytest.approx((k.E0, k.e0), abs=1e-12)


# invariants


@pytest.mark.parametrize("name", sorted(SCENARIOS))
def test_hamiltonian_convex_and_superlinear(name):
    h = get_scenario(name).model(0.0).h
    x = np.linspace(0, 2 * np.pi, 64, endpoint=False)[:, None]
    p = np.linspace(-16, 16, 801)[None, :]
    hv = h(x, p)
    assert np.all(hv[:, 2:] - 2 * hv[:, 1:-1] + hv[:, :-2] > 0)
    for K in (1.0, 2.0):
        assert np.isfinite(np.max(K * np.abs(p) - hv))
    k = model_constants(get_scenario(name).model(0.0))
    assert hv.min() >= k.e0 - 1e-12
    assert np.all(h(x[:, 0], 0.0 * x[:, 0]) <= k.E0 + 1e-12)


@pytest.mark.parametrize("name", sorted(SCENARIOS))
@given(x=angles, p=moments, u=values, w=values)
def test_lipschitz_in_u_is_the_discount(name, x, p, u, w):
    m = get_scenario(name).model(0.0)
    diff = abs(eval_hamiltonian(m, x, p, u) - eval_hamiltonian(m, x, p, w))
    assert diff == pytest.approx(abs(float(m.lam(x % (2 * math.pi)))) * abs(u - w), rel=1e-9, abs=1e-9)
    assert diff <= model_constants(m).Lambda * abs(u - w) + 1e-9


@pytest.mark.parametrize("name", sorted(SCENARIOS))
def test_legendre_duality_on_samples(name):
    m = get_scenario(name).model(0.0)
    x = np.linspace(0, 2 * np.pi, 16, endpoint=False)
    p = np.linspace(-3, 3, 13)
    v = np.linspace(-20, 20, 40001)
    for xi in x:
        lv = m.lagrangian(np.full_like(v, xi), v)
        sup = np.max(p[:, None] * v[None, :] - lv[None, :], axis=1)
        assert np.allclose(sup, m.h(np.full_like(p, xi), p), atol=1e-6)


def test_tabulated_hamiltonian_is_periodic_and_finite():
    h = HamiltonianSpec.tabulate(lambda x, p: 0.5 * p**2 + np.cos(x))
    x = np.array([0.3, 0.3 + 2 * np.pi])
    assert np.all(np.isfinite(h(x, np.array([1.0, 1.0]))))
    assert h(x[0], 1.0) == pytest.approx(float(h(x[1], 1.0)), abs=1e-12)


def test_nonfinite_inputs_rejected():
    with pytest.raises(ValueError):
        eval_hamiltonian(pendulum(), np.nan, 0.0, 0.0)
    with pytest.raises(ValueError):
        ContactModel(HamiltonianSpec.quadratic(), DiscountSpec.sine(), math.inf)
