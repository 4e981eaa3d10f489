import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from dampedkam.errors import DomainError, VelocityBoundError
from dampedkam.flow import DampedSystem
from dampedkam.model import CallableHamiltonian, MechanicalHamiltonian, TrigPoly, fig1
from dampedkam.solver import (GridFunction, PeriodicGrid, SolverParams, backward_characteristic, discount_weights,
                              evolve, finite_horizon_kernel, lo_step, minimize_step, stationary)

from oracles import brute_force_stationary, free_particle_kernel, random_trig

G256 = PeriodicGrid(256)
P1 = SolverParams(dt=1e-3)


def test_grid_and_params_validation():
    with pytest.raises(DomainError):
        PeriodicGrid(8)
    with pytest.raises(DomainError):
        SolverParams(dt=-1)
    with pytest.raises(DomainError):
        SolverParams(candidates=4)
    with pytest.raises(DomainError):
        SolverParams(dt=1e-3, v_max=6.0).speed(PeriodicGrid(512))  # 6e-3 < 2 dx
    assert SolverParams(dt=1e-3).reach(PeriodicGrid(512)) >= 2 * PeriodicGrid(512).dx


def test_grid_function_interpolation_is_periodic():
    u = GridFunction.sample(G256, np.sin)
    assert u(2 * math.pi + 0.1) == pytest.approx(u(0.1), abs=1e-15)
    assert u(G256.x[3]) == u.values[3]
    assert abs(u(0.123) - math.sin(0.123)) < G256.dx ** 2


def test_discount_weights(lam):
    q, w = discount_weights(lam, 0.01)
    assert q == pytest.approx(math.exp(-lam * 0.01))
    assert w == pytest.approx((1 - q) / lam)


def test_step_minimum_matches_dense_search(fig1_sys, rng):
    u = GridFunction(G256, random_trig(rng, G256.x))
    xq = rng.uniform(0, 2 * np.pi, 6)
    vals, ys, flags = minimize_step(u, fig1_sys, P1, xq)
    q, w = discount_weights(fig1_sys.lam, P1.dt)
    reach = P1.reach(G256)
    for x, val, y in zip(xq, vals, ys):
        yy = np.linspace(x - reach, x + reach, 400001)
        obj = q * u(yy) + w * fig1_sys.hamiltonian.lagrangian(0.5 * (x + yy)[:, None], ((x - yy) / P1.dt)[:, None])
        assert val <= obj.min() + 1e-12
        assert val >= obj.min() - 1e-9
    assert not flags.any()


def test_generic_path_matches_compiled_kernel(rng):
    h = fig1()
    generic = CallableHamiltonian(1, h.H, h.H_x, h.H_p, h.H_pp)
    sm, sg = DampedSystem(h, 0.7), DampedSystem(generic, 0.7)
    g = PeriodicGrid(64)
    params = SolverParams(dt=0.01)
    u = GridFunction(g, random_trig(rng, g.x))
    np.testing.assert_allclose(lo_step(u, sg, params).values, lo_step(u, sm, params).values, atol=1e-8)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1))
def test_semigroup_contraction_monotonicity_and_shift(seed):
    sys = DampedSystem(fig1(), 1 / math.sqrt(2))
    rng = np.random.default_rng(seed)
    g = PeriodicGrid(128)
    params = SolverParams(dt=2e-3)
    q, _ = discount_weights(sys.lam, params.dt)
    u = GridFunction(g, random_trig(rng, g.x))
    w = GridFunction(g, random_trig(rng, g.x))
    Tu, Tw = lo_step(u, sys, params), lo_step(w, sys, params)
    assert np.max(np.abs(Tu.values - Tw.values)) <= q * np.max(np.abs(u.values - w.values))
    above = GridFunction(g, u.values + np.abs(random_trig(rng, g.x)))
    assert np.all(lo_step(above, sys, params).values >= Tu.values)
    c = float(rng.normal())
    shifted = lo_step(u + c, sys, params)
    np.testing.assert_allclose(shifted.values, Tu.values + q * c, rtol=0, atol=1e-13)


def test_velocity_bound_is_reported(fig1_sys):
    g = PeriodicGrid(64)
    params = SolverParams(dt=0.01, v_max=20.0)
    steep = GridFunction.sample(g, lambda x: 50 * np.cos(x))
    with pytest.raises(VelocityBoundError) as info:
        lo_step(steep, fig1_sys, params)
    assert info.value.index is not None


def test_evolve_snapshots(fig1_sys):
    g = PeriodicGrid(64)
    params = SolverParams(dt=0.01)
    psi = GridFunction.sample(g, np.cos)
    u, snaps = evolve(psi, fig1_sys, 0.1, params, snapshot_times=[0.0, 0.05, 0.1])
    assert [t for t, _ in snaps] == [0.0, 0.05, 0.1]
    assert snaps[0][1] is psi
    np.testing.assert_array_equal(snaps[-1][1].values, u.values)
    five = psi
    for _ in range(5):
        five = lo_step(five, fig1_sys, params)
    np.testing.assert_array_equal(snaps[1][1].values, five.values)


def test_stationary_fig1_coarse(fig1_sys):
    g = PeriodicGrid(128)
    res = stationary(fig1_sys, g, SolverParams(dt=4e-3), tol=1e-5)
    exact = -np.cos(g.x) - 9 * math.sqrt(2) / 4
    assert np.max(np.abs(res.solution.values - exact)) < 0.05
    # the discrete fixed point: one more step moves it by at most tol (1 - q)
    again = lo_step(res.solution, fig1_sys, SolverParams(dt=4e-3))
    assert np.max(np.abs(again.values - res.solution.values)) <= 1e-5


def test_stationary_matches_brute_force_oracle_pendulum(pendulum_sys):
    g = PeriodicGrid(64)
    res = stationary(pendulum_sys, g, SolverParams(dt=0.01), tol=1e-6).solution
    _, ref = brute_force_stationary(pendulum_sys, 64, 0.01)
    assert np.max(np.abs(res.values - ref)) < 5e-2
    assert res.values[0] == pytest.approx(0.0, abs=1e-12)
    assert res.values.min() >= -1e-12


def test_free_particle_kernel():
    lam = 0.5
    sys = DampedSystem(MechanicalHamiltonian((0.0,), (TrigPoly((0.0,)),)), lam)
    errors = []
    for N, dt in ((256, 0.01), (512, 0.005)):
        g = PeriodicGrid(N)
        res = finite_horizon_kernel(sys, g, 0, 1.0, SolverParams(dt=dt, v_max=8.0))
        assert not res.unreachable.any()
        errors.append(np.max(np.abs(res.values.values - free_particle_kernel(lam, 1.0, 0.0, g.x))))
    # the point source converges at first order
    assert errors[0] < 0.03 and errors[0] / errors[1] > 1.5
    g = PeriodicGrid(256)
    params = SolverParams(dt=0.01, v_max=8.0)
    short = finite_horizon_kernel(sys, g, 0, 0.05, params)
    dist = np.minimum(g.x, 2 * math.pi - g.x)
    assert short.unreachable[dist > 8.0 * 0.05 + g.dx].all()
    assert not short.unreachable[dist < 0.2].any()


def test_backward_characteristic_follows_torus_flow(fig1_sys):
    g = PeriodicGrid(512)
    u = GridFunction.sample(g, lambda x: -np.cos(x) - 9 * math.sqrt(2) / 4)
    curve = backward_characteristic(u, fig1_sys, 1.0, 1.0, P1)
    sol = solve_ivp(lambda t, y: 2 + np.sin(y), (0, -1.0), [1.0], rtol=1e-11, atol=1e-12)
    assert curve.positions[-1] == pytest.approx(sol.y[0, -1], abs=1e-2)
    assert curve.times[-1] == pytest.approx(-1.0)
