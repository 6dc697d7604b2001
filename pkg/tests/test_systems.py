import numpy as np
import pytest
from scipy.optimize import root

from saltedkf.bench.config import ExperimentConfig
from saltedkf.bench.experiments import hybrid_flow
from saltedkf.errors import SingularConfiguration
from saltedkf.hybrid import numerical_jacobian
from saltedkf.integrate import IntegratorConfig, integrate_batch, integrate_until_event
from saltedkf.saltation import saltation_context, saltation_matrix
from saltedkf.systems import (
    AslipParams,
    analytic_saltation,
    constrained_flight_covariance,
    flight_state,
    get_system,
)

TIGHT = IntegratorConfig(rel_tol=1e-12, abs_tol=1e-14, event_tol=1e-14)
PI = np.pi


def _rand_leg(rng, n):
    return np.column_stack([rng.uniform(0.3, PI - 0.3, n), rng.uniform(-1.0, 1.0, n), rng.uniform(0.4, 1.4, n)])


def _rand_stance(rng, n):
    return np.column_stack([_rand_leg(rng, n), rng.uniform(-1, 1, (n, 2)), rng.uniform(-2, 2, (n, 3))])


def _rand_flight(sys, rng, n):
    qb = np.column_stack([rng.uniform(-1, 1, n), rng.uniform(1.2, 2.0, n), rng.uniform(1.0, 2.2, n)])
    toe = sys.T_bt(qb) + rng.uniform(-0.05, 0.05, (n, 2))
    return np.column_stack([qb, toe, rng.uniform(-2, 2, (n, 3))])


def _fd_close(analytic, fd, rtol=1e-5):
    scale = max(1.0, np.abs(fd).max())
    assert np.abs(analytic - fd).max() <= rtol * scale


# -- constant flow ------------------------------------------------------------

def test_constant_flow_generic_saltation(cflow):
    xi = saltation_matrix(saltation_context(cflow, (1, 2), 0.0, np.zeros(2)))
    np.testing.assert_allclose(xi, analytic_saltation(), atol=1e-12)


def test_constant_flow_fields(cflow):
    x = np.zeros((3, 2))
    np.testing.assert_array_equal(cflow.vector_field(1, 0.0, x), np.tile([1.0, -1.0], (3, 1)))
    np.testing.assert_array_equal(cflow.vector_field(2, 0.0, x), np.tile([1.0, 1.0], (3, 1)))


# -- ASLIP parameters and coordinate changes ------------------------------------

def test_params_are_positive():
    p = AslipParams()
    assert (p.m_b, p.I_b, p.k_l, p.k_theta, p.l_b, p.a_g, p.l_l0) == (1, 1, 1000, 400, 0.5, 9.8, 1)
    assert p.theta_h0 == pytest.approx(-PI / 8)
    with pytest.raises(ValueError):
        AslipParams(k_l=0.0)


def test_T_lb_axis_aligned(aslip):
    np.testing.assert_allclose(aslip.T_lb([PI / 2, 0.0, 1.0], [0.0, 0.0]), [0.0, 1.5, PI / 2], atol=1e-15)


def test_T_bt_example(aslip):
    np.testing.assert_allclose(aslip.T_bt([0.0, 1.5, PI / 2]), [0.38268343, 0.07612047], atol=1e-8)


def test_T_bl_rest_leg(aslip):
    qb = np.array([0.0, 1.5, PI / 2])
    np.testing.assert_allclose(aslip.T_bl(qb, aslip.T_bt(qb)), [5 * PI / 8, -PI / 8, 1.0], atol=1e-12)


def test_T_bl_zero_leg_is_singular(aslip):
    # hip exactly on the toe
    qb = np.array([0.5, 0.0, 0.0])
    with pytest.raises(SingularConfiguration):
        aslip.T_bl(qb, np.zeros(2))


def test_coordinate_round_trip(aslip):
    rng = np.random.default_rng(0)
    ql = _rand_leg(rng, 1000)
    qt = rng.uniform(-2, 2, (1000, 2))
    np.testing.assert_allclose(aslip.T_bl(aslip.T_lb(ql, qt), qt), ql, atol=1e-10)


def test_velocity_maps_are_inverse(aslip):
    rng = np.random.default_rng(1)
    ql = _rand_leg(rng, 1000)
    qt = rng.uniform(-2, 2, (1000, 2))
    prod = aslip.J_lb(ql, qt) @ aslip.J_bl(aslip.T_lb(ql, qt), qt)
    np.testing.assert_allclose(prod, np.broadcast_to(np.eye(3), prod.shape), atol=1e-8)
    np.testing.assert_array_equal(aslip.leg_to_body_velocity(ql[0], qt[0], np.zeros(3)), np.zeros(3))


def test_transform_jacobians_match_finite_differences(aslip):
    rng = np.random.default_rng(2)
    for ql, qt in zip(_rand_leg(rng, 20), rng.uniform(-1, 1, (20, 2))):
        _fd_close(aslip.J_lb(ql, qt), numerical_jacobian(lambda q: aslip.T_lb(q, qt), ql))
        qb = aslip.T_lb(ql, qt)
        _fd_close(aslip.J_bl(qb, qt), numerical_jacobian(lambda q: aslip.T_bl(q, qt), qb))
        _fd_close(aslip.DT_bt(qb), numerical_jacobian(aslip.T_bt, qb))


def test_rest_leg_inverse_identity(aslip):
    rng = np.random.default_rng(3)
    p = aslip.params
    for th_t, qt in zip(rng.uniform(0.3, PI - 0.3, 50), rng.uniform(-2, 2, (50, 2))):
        qb = aslip.T_lb([th_t, p.theta_h0, p.l_l0], qt)
        np.testing.assert_allclose(aslip.T_bt(qb), qt, atol=1e-10)


# -- ASLIP dynamics ------------------------------------------------------------

def test_flight_field_rows(aslip):
    rng = np.random.default_rng(4)
    x = _rand_flight(aslip, rng, 50)
    f = aslip.vector_field(1, 0.0, x)
    np.testing.assert_array_equal(f[:, 5:8], np.tile([0.0, -9.8, 0.0], (50, 1)))
    x[:, 7] = 0.0
    f = aslip.vector_field(1, 0.0, x)
    np.testing.assert_allclose(f[:, 3:5], x[:, 5:7], atol=1e-15)


def test_projectile_apex(aslip):
    x0 = flight_state(aslip, [0.0, 5.0, PI / 2], [1.0, 2.0, 0.0])
    t_apex = 2.0 / 9.8
    res = integrate_batch(aslip, [1], 0.0, x0[None], t_apex, TIGHT)
    assert res.x[0, 6] == pytest.approx(0.0, abs=1e-12)
    assert res.x[0, 0] == pytest.approx(t_apex, abs=1e-12)
    assert res.x[0, 1] == pytest.approx(5.0 + 2.0**2 / (2 * 9.8), abs=1e-12)


def test_stance_equilibrium(aslip):
    # oracle: find the static pose numerically and check the generated EOM at it
    def accel(q):
        x = np.concatenate([q, [0.0, 0.0], np.zeros(3)])
        return aslip.vector_field(2, 0.0, x)[5:8]

    sol = root(accel, [PI / 2, 0.0, 0.99], method="hybr", options={"xtol": 1e-12})
    assert sol.success
    q = sol.x
    x = np.concatenate([q, [0.0, 0.0], np.zeros(3)])
    assert np.abs(aslip.vector_field(2, 0.0, x)).max() <= 1e-8
    # gravity on the body is carried by the leg spring: vertical force balance
    p = aslip.params
    body = aslip.T_lb(q, [0.0, 0.0])
    assert body[1] > 0 and q[2] < p.l_l0
    np.testing.assert_allclose(aslip.stance_accelerations_newton(x), 0.0, atol=1e-8)


def test_stance_eom_matches_newton_route(aslip):
    rng = np.random.default_rng(5)
    x = _rand_stance(rng, 200)
    np.testing.assert_allclose(aslip.vector_field(2, 0.0, x)[:, 5:8], aslip.stance_accelerations_newton(x),
                               rtol=1e-9, atol=1e-9)


def _stance_start():
    sys = get_system("aslip").build()
    x0 = np.array(ExperimentConfig.default("aslip").initial_mean)
    t, x, ev = integrate_until_event(sys, 1, 0.0, x0, 1.0, TIGHT)
    return sys, ev


def test_stance_energy_conserved():
    sys, ev = _stance_start()
    x = ev.x_post
    # integrate part of the stance phase with events disabled
    res = integrate_batch(sys, [2], 0.0, x[None], 0.1, TIGHT, detect_events=False)
    e0, e1 = sys.energy(2, x), sys.energy(2, res.x[0])
    assert abs(e1 - e0) <= 1e-6 * abs(e0)


def test_stance_accelerations_match_trajectory_curvature():
    sys, ev = _stance_start()
    x = ev.x_post
    h = 1e-3
    ts = np.array([0.02 - h, 0.02, 0.02 + h])
    pos = []
    for t in ts:
        pos.append(integrate_batch(sys, [2], 0.0, x[None], t, TIGHT, detect_events=False).x[0])
    pos = np.array(pos)
    fd_acc = (pos[2, 0:3] - 2 * pos[1, 0:3] + pos[0, 0:3]) / h**2
    acc = sys.vector_field(2, 0.02, pos[1])[5:8]
    np.testing.assert_allclose(fd_acc, acc, rtol=1e-4, atol=1e-4 * np.abs(acc).max())


def test_full_hop_returns_energy(aslip):
    x0 = np.array(ExperimentConfig.default("aslip").initial_mean)
    mode, x, events = hybrid_flow(aslip, 1, 0.0, x0, 0.5, TIGHT)
    assert [e.transition for e in events] == [(1, 2), (2, 1)] and mode == 1
    e0, e1 = aslip.energy(1, x0), aslip.energy(1, x)
    assert abs(e1 - e0) <= 1e-5 * abs(e0)


def test_default_nominal_hops_twice(aslip):
    cfg = ExperimentConfig.default("aslip")
    _, _, events = hybrid_flow(aslip, 1, 0.0, np.array(cfg.initial_mean), cfg.t_final, TIGHT)
    assert [e.transition for e in events] == [(1, 2), (2, 1), (1, 2), (2, 1)]


# -- resets, guards, measurements ----------------------------------------------

def _touchdown_states(sys, rng, n):
    x = _rand_flight(sys, rng, n)
    x[:, 4] = 0.0
    return x


def test_resets_are_inverse_on_guards(aslip):
    rng = np.random.default_rng(6)
    for x in _touchdown_states(aslip, rng, 50):
        np.testing.assert_allclose(aslip.reset((2, 1), 0.0, aslip.reset((1, 2), 0.0, x)), x, atol=1e-10)


def test_measurement_continuous_across_touchdown(aslip, aslip_meas):
    rng = np.random.default_rng(7)
    for x in _touchdown_states(aslip, rng, 50):
        np.testing.assert_allclose(aslip_meas(2, aslip.reset((1, 2), 0.0, x)), aslip_meas(1, x), atol=1e-10)


def test_guard_values(aslip):
    x = _touchdown_states(aslip, np.random.default_rng(8), 1)[0]
    assert aslip.guard_value((1, 2), 0.0, x) == 0.0
    s = np.array([PI / 2, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.3])
    assert aslip.guard_value((2, 1), 0.0, s) == 0.0


def test_callback_jacobians_match_finite_differences(aslip, aslip_meas):
    rng = np.random.default_rng(9)
    flight = _rand_flight(aslip, rng, 100)
    stance = _rand_stance(rng, 100)
    for x1, x2 in zip(flight, stance):
        for mode, x, tr in ((1, x1, (1, 2)), (2, x2, (2, 1))):
            _fd_close(aslip.reset_jacobians(tr, 0.0, x)[0], numerical_jacobian(lambda z: aslip.reset(tr, 0.0, z), x))
            _fd_close(aslip.guard_gradients(tr, 0.0, x)[0][None],
                      numerical_jacobian(lambda z: np.atleast_1d(aslip.guard_value(tr, 0.0, z)), x))
            _fd_close(aslip_meas.jacobian(mode, x), numerical_jacobian(lambda z: aslip_meas(mode, z), x))


def test_constrained_covariance(aslip):
    qb = np.array([0.0, 1.7, PI / 2])
    cov = constrained_flight_covariance(aslip, qb, 1e-4 * np.eye(6))
    D = aslip.DT_bt(qb)
    np.testing.assert_allclose(cov[3:5, 3:5], 1e-4 * D @ D.T)
    np.testing.assert_allclose(cov[0:3, 0:3], 1e-4 * np.eye(3))
    np.testing.assert_allclose(cov[3:5, 0:3], 1e-4 * D)
    assert np.linalg.eigvalsh(cov).min() > -1e-18


def test_to_common_maps_stance_into_flight_chart(aslip):
    rng = np.random.default_rng(10)
    x = _touchdown_states(aslip, rng, 1)[0]
    np.testing.assert_allclose(aslip.to_common(2, aslip.reset((1, 2), 0.0, x)), x, atol=1e-10)
    np.testing.assert_array_equal(aslip.to_common(1, x), x)
