import math

import numpy as np
import pytest
from scipy.integrate import quad

from dampedkam.errors import DivergenceError, DomainError
from dampedkam.flow import (DampedSystem, StepSpec, flow_map, graph_speed, integrate, rotation_number, tangent_flow)
from dampedkam.model import RigidRotation, ShearRotation, TrigPoly, fig1, pendulum

SIN = TrigPoly((0.0,), (1.0,))


def test_zero_damping_and_degenerate_systems_need_test_mode():
    with pytest.raises(DomainError):
        DampedSystem(fig1(), 0.0)
    with pytest.raises(DomainError):
        DampedSystem(RigidRotation(1.0), 0.5)
    DampedSystem(fig1(), 0.0, test_mode=True)
    with pytest.raises(DomainError):
        StepSpec(dt=0.0)
    with pytest.raises(DomainError):
        StepSpec(method="euler")


@pytest.mark.parametrize("method", ["strang", "yoshida4", "rk4"])
def test_conformal_factor_matches_abel(fig1_sys, lam, method, rng):
    x0 = rng.uniform(0, 2 * np.pi, 5)
    p0 = rng.uniform(-2, 2, 5)
    _, _, _, T, _ = integrate(fig1_sys, x0[:, None], p0[:, None], 2.0, StepSpec(1e-3, method), tangent=True,
                              record=False)
    det = np.linalg.det(T[-1])
    np.testing.assert_allclose(det, math.exp(-2 * lam), rtol=1e-9)


def test_torus_is_invariant_under_default_integrator(fig1_sys):
    x0 = np.linspace(0, 2 * np.pi, 16, endpoint=False)
    _, xs, ps, _, _ = integrate(fig1_sys, x0[:, None], np.sin(x0)[:, None], 10.0, record=False)
    assert np.max(np.abs(ps[-1, :, 0] - np.sin(xs[-1, :, 0]))) <= 1e-8


def test_rigid_rotation_closed_form(lam):
    sys = DampedSystem(RigidRotation(math.sqrt(2)), lam, test_mode=True)
    tr = tangent_flow(sys, [0.3], [1.5], 3.0, StepSpec(1e-2, "rk4"))
    assert tr.x[-1, 0] == pytest.approx(0.3 + 3 * math.sqrt(2), abs=1e-12)
    assert tr.p[-1, 0] == pytest.approx(1.5 * math.exp(-3 * lam), rel=1e-9)
    np.testing.assert_allclose(tr.tangent[-1], np.diag([1.0, math.exp(-3 * lam)]), atol=1e-9)


def test_shear_monodromy_closed_form(lam):
    # on p = 0: d(dx)/dt = a(x0 + w t) dp, dp = e^{-lam t} dp0
    a = TrigPoly((1.0, 0.5))
    w = math.sqrt(3)
    sys = DampedSystem(ShearRotation(w, a), lam)
    tr = tangent_flow(sys, [0.7], [0.0], 1.0, StepSpec(1e-3, "rk4"))
    shear = quad(lambda s: a(0.7 + w * s) * math.exp(-lam * s), 0, 1)[0]
    np.testing.assert_allclose(tr.tangent[-1], [[1.0, shear], [0.0, math.exp(-lam)]], atol=1e-10)


def test_yoshida_is_fourth_order(fig1_sys):
    ref = flow_map(fig1_sys, [0.4], [0.9], 2.0, StepSpec(1e-4, "rk4"))
    errs = []
    for dt in (0.04, 0.02):
        tr = flow_map(fig1_sys, [0.4], [0.9], 2.0, StepSpec(dt, "yoshida4"))
        errs.append(abs(tr.x[-1, 0] - ref.x[-1, 0]) + abs(tr.p[-1, 0] - ref.p[-1, 0]))
    assert errs[0] / errs[1] > 12


def test_strang_is_second_order(fig1_sys):
    ref = flow_map(fig1_sys, [0.4], [0.9], 2.0, StepSpec(1e-4, "rk4"))
    errs = []
    for dt in (0.02, 0.01):
        tr = flow_map(fig1_sys, [0.4], [0.9], 2.0, StepSpec(dt, "strang"))
        errs.append(abs(tr.x[-1, 0] - ref.x[-1, 0]) + abs(tr.p[-1, 0] - ref.p[-1, 0]))
    assert 3.5 < errs[0] / errs[1] < 4.5


def test_energy_conserved_without_damping():
    sys = DampedSystem(pendulum(), 0.0, test_mode=True)
    tr = flow_map(sys, [1.0], [0.5], 20.0, StepSpec(1e-2, "yoshida4"))
    H = sys.hamiltonian.H(tr.x, tr.p)
    assert np.ptp(H) < 1e-7


def test_pendulum_sink(pendulum_sys):
    tr = flow_map(pendulum_sys, [math.pi + 0.2], [0.1], 40.0, StepSpec(1e-2))
    assert abs(tr.x[-1, 0] - math.pi) < 1e-5 and abs(tr.p[-1, 0]) < 1e-5


def test_escape_detection(fig1_sys):
    spec = StepSpec(1e-2, escape_radius=3.0)
    with pytest.raises(DivergenceError):
        integrate(fig1_sys, [[0.0]], [[5.0]], 1.0, spec)
    _, xs, ps, _, esc = integrate(fig1_sys, [[0.0], [0.0]], [[5.0], [0.0]], 1.0, spec, raise_on_escape=False)
    assert esc.tolist() == [True, False]
    assert ps[-1, 0, 0] == ps[1, 0, 0]  # frozen after escaping


def test_backward_time_inverts_forward(fig1_sys):
    fwd = flow_map(fig1_sys, [1.0], [0.2], 1.5, StepSpec(1e-3))
    back = flow_map(fig1_sys, fwd.x[-1], fwd.p[-1], -1.5, StepSpec(1e-3))
    assert back.x[-1, 0] == pytest.approx(1.0, abs=1e-10)
    assert back.p[-1, 0] == pytest.approx(0.2, abs=1e-10)


def test_vector_field_jacobian_by_finite_differences(fig1_sys):
    x = np.array([[0.8]])
    p = np.array([[-0.3]])
    J = fig1_sys.jacobian(x, p)[0]
    h = 1e-6
    cols = []
    for dx, dp in ((h, 0), (0, h)):
        fp = np.concatenate(fig1_sys.vector_field(x + dx, p + dp), axis=-1)
        fm = np.concatenate(fig1_sys.vector_field(x - dx, p - dp), axis=-1)
        cols.append(((fp - fm) / (2 * h))[0])
    np.testing.assert_allclose(J, np.array(cols).T, atol=1e-7)


def test_rotation_number_of_kam_torus(fig1_sys):
    period_integral = quad(lambda x: 1.0 / (2.0 + math.sin(x)), 0, 2 * math.pi, epsabs=1e-14)[0]
    expected = 2 * math.pi / period_integral
    assert expected == pytest.approx(math.sqrt(3), abs=1e-12)
    assert rotation_number(fig1_sys, SIN) == pytest.approx(expected, abs=1e-10)
    np.testing.assert_allclose(graph_speed(fig1_sys, SIN, np.array([0.0, math.pi / 2])), [2.0, 3.0])


def test_rotation_number_with_rest_point(fig1_sys):
    # speed 0.5 sin x vanishes: every orbit settles on a rest point
    P = TrigPoly((-2.0,), (0.5,))
    assert abs(rotation_number(fig1_sys, P, horizon=400.0)) < 0.05
