import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from saltedkf.errors import ContractViolation, LinearizationError, NonTransverseCrossing
from saltedkf.hybrid import HybridSystem, NoiseModel
from saltedkf.integrate import (
    IntegratorConfig,
    flow_jacobian,
    integrate_batch,
    integrate_until_event,
    sample_gaussian,
    simulate_execution,
    stochastic_step,
)

from conftest import LinearSystem, identity_measurement


class GrazingSystem(HybridSystem):
    """``x2 = -(t - 1)^3`` from ``x = (-1, 1)``: crosses ``x2 = 0`` with zero rate at t = 1."""

    name = "grazing"
    modes = (1, 2)
    transitions = ((1, 2),)

    def state_dim(self, mode):
        return 2

    def vector_field(self, mode, t, x):
        x = np.asarray(x, dtype=float)
        return np.stack([np.ones(x.shape[:-1]), -3.0 * x[..., 0] ** 2], axis=-1)

    def guard_value(self, tr, t, x):
        return np.asarray(x)[..., 1]

    def guard_gradients(self, tr, t, x):
        x = np.asarray(x, dtype=float)
        d = np.zeros(x.shape)
        d[..., 1] = 1.0
        return d, np.zeros(x.shape[:-1])

    def reset(self, tr, t, x):
        return np.array(x, dtype=float)

    def reset_jacobians(self, tr, t, x):
        return np.eye(2), np.zeros(2)


A_ROT = np.array([[-0.1, 1.0], [-1.0, -0.1]])


def test_linear_flow_matches_matrix_exponential():
    sys = LinearSystem(A_ROT)
    x0 = np.array([1.0, 0.5])
    res = integrate_batch(sys, [1], 0.0, x0[None], 3.0)
    np.testing.assert_allclose(res.x[0], expm(3.0 * A_ROT) @ x0, rtol=1e-7, atol=1e-9)


def test_nonlinear_flow_matches_scipy(curved):
    # independent route: scipy's LSODA on the same vector field
    x0 = np.array([-1.0, 0.4])
    ref = solve_ivp(lambda t, x: curved.vector_field(1, t, x), (0.0, 0.4), x0, method="LSODA",
                    rtol=1e-11, atol=1e-13).y[:, -1]
    res = integrate_batch(curved, [1], 0.0, x0[None], 0.4, detect_events=False)
    np.testing.assert_allclose(res.x[0], ref, rtol=1e-7)


def test_event_located_on_constant_flow(cflow):
    t, x, ev = integrate_until_event(cflow, 1, 0.0, np.array([-0.3, 2.0]), 1.0)
    assert ev is not None and ev.transition == (1, 2)
    assert t == pytest.approx(0.3, abs=1e-9)
    np.testing.assert_allclose(x, [0.0, 1.7], atol=1e-9)
    # pre-impact state lies on the g <= 0 side
    assert cflow.guard_value((1, 2), t, x) <= 0.0


def test_event_time_matches_scipy_event(curved):
    x0 = np.array([-0.8, 0.3])
    ev_fun = lambda t, x: curved.guard_value((1, 2), t, x)  # noqa: E731
    ev_fun.terminal = True
    ref = solve_ivp(lambda t, x: curved.vector_field(1, t, x), (0, 5), x0, events=ev_fun,
                    rtol=1e-12, atol=1e-14)
    t, x, ev = integrate_until_event(curved, 1, 0.0, x0, 5.0)
    assert t == pytest.approx(ref.t_events[0][0], abs=1e-8)


def test_no_event_before_horizon(cflow):
    t, x, ev = integrate_until_event(cflow, 1, 0.0, np.array([-1.0, 0.0]), 0.5)
    assert ev is None and t == 0.5
    np.testing.assert_allclose(x, [-0.5, -0.5], atol=1e-12)


def test_grazing_crossing_is_reported():
    # the guard changes sign but its rate vanishes at the crossing
    with pytest.raises(NonTransverseCrossing):
        integrate_until_event(GrazingSystem(), 1, 0.0, np.array([-1.0, 1.0]), 2.0,
                              IntegratorConfig(max_step=0.3))


def test_flow_jacobian_linear():
    sys = LinearSystem(A_ROT)
    np.testing.assert_allclose(flow_jacobian(sys, 1, 0.0, np.array([0.2, 0.1]), 0.7),
                               expm(0.7 * A_ROT), atol=1e-8)


def test_flow_jacobian_uses_each_input_scale(aslip):
    # ASLIP flight has a closed-form flow; the inputs differ widely in magnitude
    from saltedkf.systems import flight_state

    x0 = flight_state(aslip, (0.0, 1.7, np.pi / 2), (0.5, 0.0, -1.0))
    d = 0.2

    def closed(x):
        qb = x[:3] + x[5:8] * d + np.array([0.0, -0.5 * 9.8 * d * d, 0.0])
        toe = x[3:5] + aslip.T_bt(qb) - aslip.T_bt(x[:3])
        return np.concatenate([qb, toe, x[5:8] + np.array([0.0, -9.8 * d, 0.0])])

    from saltedkf.hybrid import numerical_jacobian

    np.testing.assert_allclose(flow_jacobian(aslip, 1, 0.0, x0, d), numerical_jacobian(closed, x0), atol=1e-7)


def test_flow_jacobian_rejects_interior_event(cflow):
    with pytest.raises(LinearizationError):
        flow_jacobian(cflow, 1, 0.0, np.array([-0.1, 0.0]), 0.5)
    # a window ending on the guard is fine
    A = flow_jacobian(cflow, 1, 0.0, np.array([-0.1, 0.0]), 0.1)
    np.testing.assert_allclose(A, np.eye(2), atol=1e-9)


def test_zero_length_step():
    sys = LinearSystem(A_ROT)
    np.testing.assert_array_equal(flow_jacobian(sys, 1, 0.0, np.ones(2), 0.0), np.eye(2))
    with pytest.raises(ContractViolation):
        integrate_batch(sys, [1], 1.0, np.ones((1, 2)), 0.5)


def test_sample_gaussian_covariance():
    rng = np.random.default_rng(1)
    cov = np.array([[2.0, 0.6], [0.6, 0.5]])
    s = sample_gaussian(rng, cov, 200_000)
    np.testing.assert_allclose(np.cov(s.T), cov, rtol=0.02, atol=0.01)
    # singular covariances are allowed
    s = sample_gaussian(rng, np.diag([1.0, 0.0]), 10)
    assert np.all(s[:, 1] == 0.0)


def test_stochastic_step_moments(cflow):
    # velocity noise held over the step: displacement covariance is W_rate dt^2
    dt = 0.1
    noise = NoiseModel.isotropic(cflow, dt, 0.04 * dt**2, 1.0, {1: 2, 2: 2})
    N = 40_000
    x = np.tile([-5.0, 0.0], (N, 1))
    out = stochastic_step(cflow, noise, np.ones(N, dtype=int), 0.0, x, dt, np.random.default_rng(3))
    disp = out.x - (x + dt * np.array([1.0, -1.0]))
    np.testing.assert_allclose(disp.mean(0), 0.0, atol=3e-4)
    np.testing.assert_allclose(np.cov(disp.T), 0.04 * dt**2 * np.eye(2), rtol=0.03, atol=1e-5)


def test_stochastic_step_crosses_and_resets(cflow):
    noise = NoiseModel.isotropic(cflow, 0.05, 0.0, 1.0, {1: 2, 2: 2})
    out = stochastic_step(cflow, noise, [1, 1], 0.0, np.array([[-0.025, 1.0], [-1.0, 0.0]]), 0.05,
                          np.random.default_rng(0))
    np.testing.assert_array_equal(out.modes, [2, 1])
    np.testing.assert_allclose(out.x[0], [0.025, 1.0], atol=1e-9)
    assert len(out.events) == 1 and out.events[0][0] == 0


def test_simulate_execution_deterministic(cflow):
    noise = NoiseModel.isotropic(cflow, 0.05, 0.01 * 0.05**2, 1.0, {1: 2, 2: 2})
    meas = identity_measurement()
    a = simulate_execution(cflow, noise, meas, 1, [-0.5, 0.0], 0.05, 1.0, 7)
    b = simulate_execution(cflow, noise, meas, 1, [-0.5, 0.0], 0.05, 1.0, 7)
    assert len(a) == 21
    for sa, sb in zip(a.states, b.states):
        np.testing.assert_array_equal(sa, sb)
    assert a.modes[0] == 1 and a.modes[-1] == 2
    assert len(a.events) == 1 and a.events[0].t_impact == pytest.approx(0.5, abs=0.05)


@settings(max_examples=40, deadline=None)
@given(st.floats(-2.0, -0.01), st.floats(-3, 3), st.floats(0.01, 1.0))
def test_event_iff_crossing_within_horizon(x1, x2, horizon):
    from saltedkf.systems import ConstantFlowSystem

    sys = ConstantFlowSystem()
    t, x, ev = integrate_until_event(sys, 1, 0.0, np.array([x1, x2]), horizon)
    crosses = -x1 <= horizon - 1e-9
    if abs(-x1 - horizon) > 1e-8:
        assert (ev is not None) == crosses
    if ev is not None:
        assert t == pytest.approx(-x1, abs=1e-9)
        assert x[1] == pytest.approx(x2 + x1, abs=1e-9)
