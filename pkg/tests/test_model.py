import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dampedkam.errors import ConvergenceError, DomainError
from dampedkam.model import (SQRT2, CallableHamiltonian, MechanicalHamiltonian, RigidRotation, ShearRotation, TrigPoly,
                             eval_hamiltonian, fig1, fig2, fig2_interp, get_example, hamiltonian_from_dict,
                             legendre_transform, pendulum, tonelli_check)

X = np.linspace(0, 2 * np.pi, 37)


def test_trigpoly_matches_direct_sum_and_derivatives():
    P = TrigPoly((0.5, 1.0, -0.25), (2.0, 0.3))
    direct = 0.5 + np.cos(X) - 0.25 * np.cos(2 * X) + 2 * np.sin(X) + 0.3 * np.sin(2 * X)
    np.testing.assert_allclose(P(X), direct, atol=1e-14)
    h = 1e-5
    np.testing.assert_allclose(P(X, 1), (P(X + h) - P(X - h)) / (2 * h), atol=1e-8)
    np.testing.assert_allclose(P(X, 2), (P(X + h, 1) - P(X - h, 1)) / (2 * h), atol=1e-8)


def test_trigpoly_algebra_and_dict_roundtrip():
    a = TrigPoly((1.0, 2.0), (3.0,))
    b = TrigPoly((0.0, 0.0, 1.0))
    np.testing.assert_allclose((a + b)(X), a(X) + b(X), atol=1e-14)
    np.testing.assert_allclose((2.5 * a)(X), 2.5 * a(X), atol=1e-14)
    assert TrigPoly.from_dict(a.to_dict()) == a
    with pytest.raises(DomainError):
        TrigPoly.from_dict({"cos": [1.0], "tan": [1.0]})


def test_fig1_closed_form():
    h = fig1()
    x = X[:, None]
    p = np.sin(X)[:, None] + 0.3
    expected = 0.5 * (p[:, 0] + 2) ** 2 - 2 * np.sin(X) + np.cos(X) / SQRT2 + 0.25 * np.cos(2 * X)
    np.testing.assert_allclose(h.H(x, p), expected, atol=1e-13)


def test_interpolated_family_endpoints():
    for a, ref in ((0.0, pendulum()), (1.0, fig1())):
        h = fig2_interp(a)
        x = X[:, None]
        p = np.cos(X)[:, None]
        np.testing.assert_allclose(h.H(x, p), ref.H(x, p), atol=1e-13)


def test_verbatim_family_formula():
    a = 0.37
    h = fig2(a)
    p = 0.4 * np.ones_like(X)
    expected = (0.5 * (p + 2 * a) ** 2 + (np.cos(X) - 1)
                + (3 - 2 * a + 2 * np.sin(X) - np.cos(X) + np.cos(X) / SQRT2 - 0.25 * np.cos(2 * X)) * a)
    np.testing.assert_allclose(h.H(X[:, None], p[:, None]), expected, atol=1e-13)
    with pytest.raises(DomainError):
        get_example("fig2")


def test_mechanical_lagrangian_matches_numeric_legendre():
    h = fig1()
    x = X[:, None]
    v = np.linspace(-3, 3, X.size)[:, None]
    closed = h.lagrangian(x, v)
    numeric = legendre_transform(h, x, v, method="numeric")
    np.testing.assert_allclose(numeric.value, closed, atol=1e-9)
    # the maximizer inverts v = H_p
    np.testing.assert_allclose(h.H_p(x, numeric.maximizer_p), v, atol=1e-9)


def test_legendre_of_shear_system():
    a = TrigPoly((1.5, 0.5))
    h = ShearRotation(0.7, a)
    x = X[:, None]
    v = np.linspace(-2, 2, X.size)[:, None]
    # L = (v - omega0)^2 / (2 a(x))
    expected = (v[:, 0] - 0.7) ** 2 / (2 * a(X))
    np.testing.assert_allclose(h.lagrangian(x, v), expected, atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(x=st.floats(0, 2 * np.pi), v=st.floats(-5, 5), p=st.floats(-5, 5))
def test_fenchel_inequality(x, v, p):
    h = fig1()
    L = h.lagrangian(np.array([[x]]), np.array([[v]]))[0]
    H = h.H(np.array([[x]]), np.array([[p]]))[0]
    assert L + H >= p * v - 1e-12


def test_non_finite_input_rejected():
    with pytest.raises(DomainError):
        eval_hamiltonian(fig1(), [[np.nan]], [[0.0]])


def test_legendre_failure_is_reported():
    # H = p^4/4 has a singular H_pp at the Newton start p = 0
    h = CallableHamiltonian(1, lambda x, p: (p ** 4 / 4)[..., 0], lambda x, p: 0 * p, lambda x, p: p ** 3,
                            lambda x, p: 3 * p[..., None] ** 2)
    with pytest.raises(ConvergenceError):
        legendre_transform(h, np.array([[0.0]]), np.array([[50.0]]), max_iter=1)


def test_tonelli_check():
    assert tonelli_check(fig1()).passed
    assert tonelli_check(pendulum()).passed
    assert not tonelli_check(RigidRotation(1.0)).passed
    rep = tonelli_check(fig1())
    assert all(b > a for a, b in zip(rep.growth_ratios, rep.growth_ratios[1:]))


def test_two_dimensional_separable_hamiltonian():
    V = TrigPoly((0.0, 1.0))
    h = MechanicalHamiltonian((1.0, -0.5), (V, V))
    x = np.array([[0.3, 1.2]])
    p = np.array([[0.1, 0.7]])
    expected = 0.5 * ((1.1) ** 2 + 0.2 ** 2) + math.cos(0.3) + math.cos(1.2)
    assert h.H(x, p)[0] == pytest.approx(expected, abs=1e-14)
    assert tonelli_check(h).passed


def test_hamiltonian_from_dict_roundtrip_and_rejection():
    h = fig1()
    h2 = hamiltonian_from_dict(h.to_dict())
    x = X[:, None]
    p = np.cos(X)[:, None]
    np.testing.assert_allclose(h2.H(x, p), h.H(x, p), atol=0)
    with pytest.raises(DomainError):
        hamiltonian_from_dict({"drift": [0.0], "mass": 2})
