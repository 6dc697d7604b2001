"""Asymmetric spring-loaded inverted pendulum (ASLIP) hopper.

A rigid body of mass ``m_b`` and inertia ``I_b`` carries, at a hip offset
``l_b`` behind its center of mass, a massless telescoping leg with a linear
spring (``k_l``, rest length ``l_l0``) and a torsional hip spring
(``k_theta``, rest angle ``theta_h0``).

Mode 1 (flight) state: ``(x_b, y_b, theta_b, x_t, y_t, xd_b, yd_b, thetad_b)``.
The toe rides along with the body at the rest leg configuration.

Mode 2 (stance) state: ``(theta_t, theta_h, l_l, x_t, y_t, thetad_t, thetad_h, ld_l)``.
The toe is pinned to the ground and the body swings about it.

Touchdown happens when the toe height ``y_t`` reaches zero; liftoff when the
leg spring returns to its rest length.  The liftoff guard is written as
``l_l0 - l_l`` so that both guards decrease through zero along the flow.

The stance equations of motion are generated from the Lagrangian with sympy
the first time a parameter set is used and cached afterwards.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np
import sympy as sp

from ..errors import SingularConfiguration
from ..hybrid import HybridSystem, MeasurementModel


@dataclass(frozen=True)
class AslipParams:
    m_b: float = 1.0
    I_b: float = 1.0
    k_l: float = 1000.0
    k_theta: float = 400.0
    l_b: float = 0.5
    a_g: float = 9.8
    l_l0: float = 1.0
    theta_h0: float = -math.pi / 8

    def __post_init__(self):
        for name in ("m_b", "I_b", "k_l", "k_theta", "l_b", "a_g", "l_l0"):
            if not getattr(self, name) > 0:
                raise ValueError(f"AslipParams.{name} must be strictly positive")


def _vectorized(expr: sp.Matrix, args):
    shape = expr.shape if expr.shape[1] > 1 else (expr.shape[0],)
    flat = list(expr)
    fn = sp.lambdify(args, flat, modules="numpy", cse=True)
    nargs = len(args)

    def call(x):
        x = np.asarray(x, dtype=float)
        cols = fn(*[x[..., i] for i in range(nargs)])
        out = np.empty(x.shape[:-1] + (len(flat),))
        for i, c in enumerate(cols):
            out[..., i] = c
        return out.reshape(x.shape[:-1] + shape)

    return call


@lru_cache(maxsize=8)
def _compile(params: AslipParams) -> dict:
    p = params
    xb, yb, thb, xt, yt, vxb, vyb, wb = sp.symbols("x_b y_b theta_b x_t y_t xd_b yd_b thetad_b")
    tht, thh, ll, dtht, dthh, dll = sp.symbols("theta_t theta_h l_l thetad_t thetad_h ld_l")
    x1 = sp.Matrix([xb, yb, thb, xt, yt, vxb, vyb, wb])
    x2 = sp.Matrix([tht, thh, ll, xt, yt, dtht, dthh, dll])
    qb, qdb = sp.Matrix([xb, yb, thb]), sp.Matrix([vxb, vyb, wb])
    ql, qdl = sp.Matrix([tht, thh, ll]), sp.Matrix([dtht, dthh, dll])

    lb, l0, th0 = sp.Float(p.l_b), sp.Float(p.l_l0), sp.Float(p.theta_h0)

    T_lb = sp.Matrix([
        ll * sp.cos(tht) + lb * sp.cos(tht + thh) + xt,
        ll * sp.sin(tht) + lb * sp.sin(tht + thh) + yt,
        tht + thh,
    ])
    dx = xb - lb * sp.cos(thb) - xt
    dy = yb - lb * sp.sin(thb) - yt
    T_bl = sp.Matrix([sp.atan2(dy, dx), thb - sp.atan2(dy, dx), sp.sqrt(dx**2 + dy**2)])
    J_lb = T_lb.jacobian(ql)
    J_bl = T_bl.jacobian(qb)
    T_bt = sp.Matrix([
        xb - lb * sp.cos(thb) - l0 * sp.cos(th0 - thb),
        yb - lb * sp.sin(thb) + l0 * sp.sin(th0 - thb),
    ])
    DT_bt = T_bt.jacobian(qb)

    F1 = sp.Matrix.vstack(qdb, DT_bt * qdb, sp.Matrix([0, -sp.Float(p.a_g), 0]))

    R12 = sp.Matrix.vstack(T_bl, sp.Matrix([xt, yt]), J_bl * qdb)
    R21 = sp.Matrix.vstack(T_lb, sp.Matrix([xt, yt]), J_lb * qdl)
    h2 = sp.Matrix.vstack(T_lb, J_lb * qdl)

    # Stance Lagrangian in leg coordinates with the toe pinned.
    vb = J_lb * qdl
    kinetic = sp.Rational(1, 2) * (p.m_b * (vb[0] ** 2 + vb[1] ** 2) + p.I_b * vb[2] ** 2)
    potential = (p.m_b * p.a_g * T_lb[1]
                 + sp.Rational(1, 2) * p.k_l * (l0 - ll) ** 2
                 + sp.Rational(1, 2) * p.k_theta * (th0 - thh) ** 2)
    lag = kinetic - potential
    dL_dqd = sp.Matrix([sp.diff(lag, v) for v in qdl])
    mass = dL_dqd.jacobian(qdl)
    forcing = sp.Matrix([sp.diff(lag, q) for q in ql]) - dL_dqd.jacobian(ql) * qdl
    mass = sp.simplify(mass)

    args1 = list(x1)
    args2 = list(x2)
    return {
        "T_lb": _vectorized(T_lb, [tht, thh, ll, xt, yt]),
        "J_lb": _vectorized(J_lb, [tht, thh, ll, xt, yt]),
        "T_bl": _vectorized(T_bl, [xb, yb, thb, xt, yt]),
        "J_bl": _vectorized(J_bl, [xb, yb, thb, xt, yt]),
        "T_bt": _vectorized(T_bt, [xb, yb, thb]),
        "DT_bt": _vectorized(DT_bt, [xb, yb, thb]),
        "F1": _vectorized(F1, args1),
        "R12": _vectorized(R12, args1),
        "DR12": _vectorized(R12.jacobian(x1), args1),
        "R21": _vectorized(R21, args2),
        "DR21": _vectorized(R21.jacobian(x2), args2),
        "h2": _vectorized(h2, args2),
        "Dh2": _vectorized(h2.jacobian(x2), args2),
        "mass": _vectorized(mass, args2),
        "forcing": _vectorized(forcing, args2),
        "stance_energy": _vectorized(sp.Matrix([kinetic + potential]), args2),
    }


def _check_leg(l, what):
    if np.any(np.asarray(l) <= 0.0):
        raise SingularConfiguration(f"non-positive leg length in {what}")


class AslipSystem(HybridSystem):
    name = "aslip"
    modes = (1, 2)
    transitions = ((1, 2), (2, 1))

    def __init__(self, params: AslipParams = AslipParams()):
        self.params = params
        self._fn = _compile(params)

    def state_dim(self, mode):
        return 8

    # -- coordinate changes ------------------------------------------------
    def T_lb(self, q_l, q_t):
        """Leg configuration ``(theta_t, theta_h, l_l)`` to body pose ``(x_b, y_b, theta_b)``."""
        return self._fn["T_lb"](np.concatenate([np.asarray(q_l, float), np.asarray(q_t, float)], axis=-1))

    def T_bl(self, q_b, q_t):
        z = np.concatenate([np.asarray(q_b, float), np.asarray(q_t, float)], axis=-1)
        out = self._fn["T_bl"](z)
        _check_leg(out[..., 2], "T_bl")
        return out

    def J_lb(self, q_l, q_t):
        return self._fn["J_lb"](np.concatenate([np.asarray(q_l, float), np.asarray(q_t, float)], axis=-1))

    def J_bl(self, q_b, q_t):
        z = np.concatenate([np.asarray(q_b, float), np.asarray(q_t, float)], axis=-1)
        _check_leg(self._fn["T_bl"](z)[..., 2], "D T_bl")
        return self._fn["J_bl"](z)

    def leg_to_body_velocity(self, q_l, q_t, qd_l):
        return np.einsum("...ij,...j->...i", self.J_lb(q_l, q_t), np.asarray(qd_l, float))

    def body_to_leg_velocity(self, q_b, q_t, qd_b):
        return np.einsum("...ij,...j->...i", self.J_bl(q_b, q_t), np.asarray(qd_b, float))

    def T_bt(self, q_b):
        """Toe position for the rest leg hanging from body pose ``q_b``."""
        return self._fn["T_bt"](q_b)

    def DT_bt(self, q_b):
        return self._fn["DT_bt"](q_b)

    # -- hybrid-system callbacks --------------------------------------------
    def vector_field(self, mode, t, x):
        x = np.asarray(x, dtype=float)
        if mode == 1:
            return self._fn["F1"](x)
        _check_leg(x[..., 2], "stance dynamics")
        qdd = np.linalg.solve(self._fn["mass"](x), self._fn["forcing"](x)[..., None])[..., 0]
        out = np.zeros(x.shape)
        out[..., 0:3] = x[..., 5:8]
        out[..., 5:8] = qdd
        return out

    def guard_value(self, transition, t, x):
        x = np.asarray(x, dtype=float)
        if transition == (1, 2):
            return x[..., 4].copy()
        return self.params.l_l0 - x[..., 2]

    def guard_gradients(self, transition, t, x):
        x = np.asarray(x, dtype=float)
        dxg = np.zeros(x.shape)
        if transition == (1, 2):
            dxg[..., 4] = 1.0
        else:
            dxg[..., 2] = -1.0
        return dxg, np.zeros(x.shape[:-1])

    def reset(self, transition, t, x):
        x = np.asarray(x, dtype=float)
        if transition == (1, 2):
            out = self._fn["R12"](x)
            _check_leg(out[..., 2], "touchdown reset")
            return out
        return self._fn["R21"](x)

    def reset_jacobians(self, transition, t, x):
        x = np.asarray(x, dtype=float)
        key = "DR12" if transition == (1, 2) else "DR21"
        return self._fn[key](x), np.zeros(x.shape)

    def to_common(self, mode, x):
        x = np.asarray(x, dtype=float)
        return x.copy() if mode == 1 else self._fn["R21"](x)

    def constrain(self, mode, x):
        x = np.array(x, dtype=float, copy=True)
        if mode == 1:
            x[..., 3:5] = self.T_bt(x[..., 0:3])
        return x

    # -- diagnostics ----------------------------------------------------------
    def energy(self, mode, x):
        """Total mechanical energy; in flight the springs sit at rest."""
        x = np.asarray(x, dtype=float)
        p = self.params
        if mode == 2:
            return self._fn["stance_energy"](x)[..., 0]
        return (0.5 * p.m_b * (x[..., 5] ** 2 + x[..., 6] ** 2) + 0.5 * p.I_b * x[..., 7] ** 2
                + p.m_b * p.a_g * x[..., 1])

    def stance_accelerations_newton(self, x):
        """Stance accelerations from a force balance on the body.

        Independent of the Lagrangian route: the body is driven by gravity, the
        axial leg spring force and the hip torque transmitted through the
        massless leg.  Used to cross-check the generated equations of motion.
        """
        x = np.asarray(x, dtype=float)
        p = self.params
        th_t, th_h, l = x[..., 0], x[..., 1], x[..., 2]
        dth_t, dth_h, dl = x[..., 5], x[..., 6], x[..., 7]
        J = self.J_lb(x[..., 0:3], x[..., 3:5])
        # generalized spring forces in leg coordinates
        Q = np.zeros(x.shape[:-1] + (3,))
        Q[..., 1] = p.k_theta * (p.theta_h0 - th_h)
        Q[..., 2] = p.k_l * (p.l_l0 - l)
        body_force = np.linalg.solve(np.swapaxes(J, -1, -2), Q[..., None])[..., 0]
        body_force[..., 1] -= p.m_b * p.a_g
        acc_b = body_force / np.array([p.m_b, p.m_b, p.I_b])
        a, b = th_t, th_t + th_h
        da, db = dth_t, dth_t + dth_h
        jdot_qd = np.zeros_like(acc_b)
        jdot_qd[..., 0] = (-2 * dl * da * np.sin(a) - l * da**2 * np.cos(a)
                           - p.l_b * db**2 * np.cos(b))
        jdot_qd[..., 1] = (2 * dl * da * np.cos(a) - l * da**2 * np.sin(a)
                           - p.l_b * db**2 * np.sin(b))
        return np.linalg.solve(J, (acc_b - jdot_qd)[..., None])[..., 0]


def aslip_measurement(system: AslipSystem) -> MeasurementModel:
    """Body pose and velocity in both modes (mapped from leg coordinates in stance)."""
    h1_jac = np.zeros((6, 8))
    h1_jac[0:3, 0:3] = np.eye(3)
    h1_jac[3:6, 5:8] = np.eye(3)

    def h(mode, x):
        x = np.asarray(x, dtype=float)
        if mode == 1:
            return np.concatenate([x[..., 0:3], x[..., 5:8]], axis=-1)
        return system._fn["h2"](x)

    def h_jac(mode, x):
        x = np.asarray(x, dtype=float)
        if mode == 1:
            return np.broadcast_to(h1_jac, x.shape[:-1] + (6, 8)).copy()
        return system._fn["Dh2"](x)

    return MeasurementModel(h=h, h_jacobian=h_jac, dims={1: 6, 2: 6})


def flight_state(system: AslipSystem, q_b, qd_b) -> np.ndarray:
    """Mode-1 state with the toe placed by the rest-leg constraint."""
    q_b = np.asarray(q_b, dtype=float)
    return np.concatenate([q_b, system.T_bt(q_b), np.asarray(qd_b, dtype=float)])


def constrained_flight_covariance(system: AslipSystem, q_b, body_cov) -> np.ndarray:
    """Push a 6x6 body covariance over ``(q_b, qd_b)`` through the toe constraint.

    The toe rows/columns become ``DT_bt Sigma DT_bt^T`` blocks (and the matching
    cross terms), i.e. the linearized image of the body uncertainty.
    """
    G = np.zeros((8, 6))
    G[0:3, 0:3] = np.eye(3)
    G[3:5, 0:3] = system.DT_bt(np.asarray(q_b, dtype=float))
    G[5:8, 3:6] = np.eye(3)
    return G @ np.asarray(body_cov, dtype=float) @ G.T


def params_dict(params: AslipParams) -> dict:
    return asdict(params)
