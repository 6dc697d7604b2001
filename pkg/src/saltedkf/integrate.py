"""Event-locating Runge-Kutta integration of hybrid executions.

The core is a Dormand-Prince 5(4) integrator that advances a *batch* of states
at once.  Every row carries its own mode, time, step size and (optionally) a
constant additive velocity perturbation, so the same code path serves a single
filter mean, the finite-difference perturbations of a flow linearization, and a
whole particle cloud.  Guard crossings are located by bisection on the
continuous extension of the accepted step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import ContractViolation, IntegrationError, LinearizationError, NonTransverseCrossing
from .hybrid import EPS_TRANSVERSE, HybridSystem, MeasurementModel, NoiseModel, Transition

# Dormand-Prince 5(4) tableau (FSAL); E is the difference between the 5th and
# embedded 4th order weights, P the coefficients of the 4th order continuous
# extension in powers of the step fraction.
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
_E = np.array([-71 / 57600, 0.0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])
_P = np.array([
    [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])
_ORDER = 4  # of the error estimator, for step-size control

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0


@dataclass(frozen=True)
class IntegratorConfig:
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    event_tol: float = 1e-10
    max_step: float = math.inf
    max_steps: int = 200_000

    def __post_init__(self):
        for name in ("rel_tol", "abs_tol", "event_tol", "max_step"):
            if not getattr(self, name) > 0:
                raise ContractViolation(f"IntegratorConfig.{name} must be strictly positive")

    def to_dict(self) -> dict:
        return {
            "rel_tol": self.rel_tol,
            "abs_tol": self.abs_tol,
            "event_tol": self.event_tol,
            "max_step": None if math.isinf(self.max_step) else self.max_step,
            "max_steps": self.max_steps,
        }

    @classmethod
    def from_dict(cls, d: Optional[dict]) -> "IntegratorConfig":
        d = dict(d or {})
        if d.get("max_step") is None:
            d["max_step"] = math.inf
        return cls(**d)


@dataclass(frozen=True)
class TransitionEvent:
    """A located guard crossing; ``x_post`` is the noise-free reset of ``x_pre``."""

    transition: Transition
    t_impact: float
    x_pre: np.ndarray
    x_post: np.ndarray


@dataclass
class BatchResult:
    t: np.ndarray
    x: np.ndarray
    transition: np.ndarray  # index into sys.transitions, -1 when no event


def _eval_field(sys, modes, t, x, drift):
    out = np.empty_like(x)
    for m in np.unique(modes):
        rows = modes == m
        out[rows] = sys.vector_field(int(m), t[rows], x[rows])
    if drift is not None:
        out += drift
    return out


def _rms_norm(a, scale):
    return np.sqrt(np.mean((a / scale) ** 2, axis=-1))


def _initial_step(sys, modes, t, x, f0, span, drift, cfg):
    scale = cfg.abs_tol + cfg.rel_tol * np.abs(x)
    d0 = _rms_norm(x, scale)
    d1 = _rms_norm(f0, scale)
    with np.errstate(divide="ignore", invalid="ignore"):
        h0 = np.where((d0 < 1e-5) | (d1 < 1e-5), 1e-6, 0.01 * d0 / d1)
    h0 = np.minimum(h0, span)
    x1 = x + h0[:, None] * f0
    f1 = _eval_field(sys, modes, t + h0, x1, drift)
    d2 = _rms_norm(f1 - f0, scale) / h0
    dmax = np.maximum(d1, d2)
    with np.errstate(divide="ignore", invalid="ignore"):
        h1 = np.where(dmax <= 1e-15, np.maximum(1e-6, h0 * 1e-3),
                      (0.01 / dmax) ** (1.0 / (_ORDER + 1)))
    return np.minimum.reduce([100 * h0, h1, span, np.full_like(h0, cfg.max_step)])


def _dense(x_old, h, K, sigma):
    # K: (r, 7, n); sigma: (r,)
    Q = np.einsum("rsn,sp->rnp", K, _P)
    powers = np.cumprod(np.repeat(sigma[:, None], 4, axis=1), axis=1)
    return x_old + h[:, None] * np.einsum("rnp,rp->rn", Q, powers)


def _transversality(sys, tr, t, x, drift):
    dxg, dtg = sys.guard_gradients(tr, t, x)
    f = sys.vector_field(tr[0], t, x)
    if drift is not None:
        f = f + drift
    return dtg + np.sum(dxg * f, axis=-1)


def integrate_batch(
    sys: HybridSystem,
    modes,
    t0,
    x0,
    t_end,
    cfg: IntegratorConfig = IntegratorConfig(),
    drift: Optional[np.ndarray] = None,
    detect_events: bool = True,
    common_step: bool = False,
) -> BatchResult:
    """Integrate every row until ``t_end`` or until it reaches one of its guards.

    Parameters
    ----------
    modes : int array, shape (N,)
    t0, t_end : float or array, shape (N,)
    x0 : array, shape (N, n)
    drift : optional array (N, n), constant perturbation added to the vector field.
    detect_events : when False the mode vector fields are integrated straight
        through their guards.
    common_step : force one shared step-size sequence across rows (rows are
        accepted or rejected together).  Finite-difference linearizations rely on
        this so that they differentiate one fixed discrete map.
    """
    x = np.array(x0, dtype=float, copy=True)
    if x.ndim != 2:
        raise ContractViolation("integrate_batch expects a 2-D array of states")
    N, n = x.shape
    modes = np.broadcast_to(np.asarray(modes, dtype=int), (N,)).copy()
    t = np.broadcast_to(np.asarray(t0, dtype=float), (N,)).copy()
    t_end = np.broadcast_to(np.asarray(t_end, dtype=float), (N,)).copy()
    if drift is not None:
        drift = np.broadcast_to(np.asarray(drift, dtype=float), (N, n))
    tr_index = {tr: i for i, tr in enumerate(sys.transitions)}
    outgoing = {int(m): sys.outgoing(int(m)) for m in np.unique(modes)}
    event = np.full(N, -1, dtype=int)

    def g_values(rows, tt, xx):
        # guard values for every outgoing transition of each row, (r, max_out)
        width = max((len(v) for v in outgoing.values()), default=0)
        out = np.full((rows.size, width), np.inf)
        ms = modes[rows]
        for m in np.unique(ms):
            sel = ms == m
            for j, tr in enumerate(outgoing[int(m)]):
                out[sel, j] = sys.guard_value(tr, tt[sel], xx[sel])
        return out

    active = t < t_end
    if not np.all(t <= t_end):
        raise ContractViolation("t_end must not precede t0")

    # Guards already met (transversally) at the start: immediate event.
    if detect_events and np.any(active):
        rows = np.flatnonzero(active)
        g0 = g_values(rows, t[rows], x[rows])
        for k, r in enumerate(rows):
            best = None
            for j, tr in enumerate(outgoing[int(modes[r])]):
                if g0[k, j] <= 0.0:
                    d = None if drift is None else drift[r]
                    rate = float(_transversality(sys, tr, t[r], x[r], d))
                    if rate < -EPS_TRANSVERSE and (best is None or rate < best[1]):
                        best = (tr, rate)
            if best is not None:
                event[r] = tr_index[best[0]]
                active[r] = False

    rows = np.flatnonzero(active)
    if rows.size == 0:
        return BatchResult(t, x, event)

    d_act = None if drift is None else drift[rows]
    f = _eval_field(sys, modes[rows], t[rows], x[rows], d_act)
    h = _initial_step(sys, modes[rows], t[rows], x[rows], f, t_end[rows] - t[rows], d_act, cfg)
    if common_step:
        h[:] = h.min()
    g_prev = g_values(rows, t[rows], x[rows]) if detect_events else None

    n_steps = 0
    while rows.size:
        n_steps += 1
        if n_steps > cfg.max_steps:
            raise IntegrationError(f"exceeded {cfg.max_steps} integration steps")
        tr_ = t[rows]
        xr = x[rows]
        mr = modes[rows]
        dr = None if drift is None else drift[rows]
        span = t_end[rows] - tr_
        h = np.minimum(np.minimum(h, cfg.max_step), span)
        # avoid leaving a sliver that would force a microscopic final step
        h = np.where(span - h < 1e-12 * np.maximum(1.0, np.abs(tr_)), span, h)
        if np.any(h <= 1e-14 * np.maximum(1.0, np.abs(tr_))):
            raise IntegrationError("step size underflow")

        K = np.empty((rows.size, 7, n))
        K[:, 0] = f
        for s in range(1, 6):
            dx = np.einsum("s,rsn->rn", np.asarray(_A[s]), K[:, :s]) * h[:, None]
            K[:, s] = _eval_field(sys, mr, tr_ + _C[s] * h, xr + dx, dr)
        x_new = xr + h[:, None] * np.einsum("s,rsn->rn", _B, K[:, :6])
        t_new = tr_ + h
        f_new = _eval_field(sys, mr, t_new, x_new, dr)
        K[:, 6] = f_new
        err = h[:, None] * np.einsum("s,rsn->rn", _E, K)
        scale = cfg.abs_tol + cfg.rel_tol * np.maximum(np.abs(xr), np.abs(x_new))
        norm = _rms_norm(err, scale)
        if not np.all(np.isfinite(x_new)):
            bad = ~np.all(np.isfinite(x_new), axis=1)
            if np.all(h[bad] <= 1e-10):
                raise IntegrationError("non-finite state during integration")
            norm = np.where(bad, np.inf, norm)
        if common_step:
            worst = norm.max()
            accept = np.full(rows.size, worst <= 1.0)
            norm = np.full_like(norm, worst)
        else:
            accept = norm <= 1.0
        with np.errstate(divide="ignore"):
            factor = np.where(norm == 0.0, _MAX_FACTOR,
                              _SAFETY * norm ** (-1.0 / (_ORDER + 1)))
        factor = np.clip(factor, _MIN_FACTOR, _MAX_FACTOR)
        h_next = np.where(accept, h * factor, h * np.minimum(factor, 1.0))
        h_next = np.where(np.isfinite(h_next), h_next, h * _MIN_FACTOR)

        stopped = np.zeros(rows.size, dtype=bool)
        if detect_events and np.any(accept):
            acc = np.flatnonzero(accept)
            g_new = g_values(rows[acc], t_new[acc], x_new[acc])
            crossed = (g_prev[acc] > 0.0) & (g_new <= 0.0)
            hits = np.flatnonzero(crossed.any(axis=1))
            if hits.size:
                loc = acc[hits]
                t_hit, x_hit, which = _locate(
                    sys, rows[loc], mr[loc], tr_[loc], xr[loc], h[loc], K[loc],
                    crossed[hits], outgoing, cfg,
                )
                for k, r in enumerate(rows[loc]):
                    tr = which[k]
                    d = None if drift is None else drift[r]
                    rate = float(_transversality(sys, tr, t_hit[k], x_hit[k], d))
                    if not rate < -EPS_TRANSVERSE:
                        raise NonTransverseCrossing(
                            f"grazing crossing of guard {tr} at t={t_hit[k]:.6g} "
                            f"(d/dt g = {rate:.3g})"
                        )
                    t[r] = t_hit[k]
                    x[r] = x_hit[k]
                    event[r] = tr_index[tr]
                stopped[loc] = True
            g_prev[acc] = g_new

        move = accept & ~stopped
        t[rows[move]] = t_new[move]
        x[rows[move]] = x_new[move]
        done = move & (t_new >= t_end[rows])
        t[rows[done]] = t_end[rows[done]]
        keep = ~(done | stopped)
        f = np.where(accept[:, None], f_new, f)[keep]
        h = h_next[keep]
        if common_step and h.size:
            h[:] = h.min()
        if detect_events:
            g_prev = g_prev[keep]
        rows = rows[keep]

    return BatchResult(t, x, event)


def _locate(sys, rows, modes, t_old, x_old, h, K, crossed, outgoing, cfg):
    """Bisect each row's step for its earliest crossing; returns (t, x, transition)."""
    r = rows.size
    width = crossed.shape[1]
    best_sigma = np.full(r, np.inf)
    best_x = np.empty_like(x_old)
    which: List[Optional[Transition]] = [None] * r
    n_iter = int(np.ceil(np.log2(max(float(h.max()), cfg.event_tol) / cfg.event_tol))) + 1
    for j in range(width):
        for m in np.unique(modes):
            out = outgoing[int(m)]
            if j >= len(out):
                continue
            sel = np.flatnonzero((modes == m) & crossed[:, j])
            if sel.size == 0:
                continue
            tr = out[j]
            lo = np.zeros(sel.size)
            hi = np.ones(sel.size)
            for _ in range(n_iter):
                mid = 0.5 * (lo + hi)
                xm = _dense(x_old[sel], h[sel], K[sel], mid)
                gm = sys.guard_value(tr, t_old[sel] + mid * h[sel], xm)
                inside = gm <= 0.0
                hi = np.where(inside, mid, hi)
                lo = np.where(inside, lo, mid)
                if np.all((hi - lo) * h[sel] <= cfg.event_tol):
                    break
            x_hi = _dense(x_old[sel], h[sel], K[sel], hi)
            for k, s in enumerate(sel):
                if hi[k] < best_sigma[s]:
                    best_sigma[s] = hi[k]
                    best_x[s] = x_hi[k]
                    which[s] = tr
    return t_old + best_sigma * h, best_x, which


def integrate_until_event(
    sys: HybridSystem,
    mode: int,
    t0: float,
    x0,
    t_end: float,
    cfg: IntegratorConfig = IntegratorConfig(),
    drift=None,
) -> Tuple[float, np.ndarray, Optional[TransitionEvent]]:
    """Integrate one state in ``mode`` until ``t_end`` or the first guard crossing.

    The reset is *not* applied to the returned state; the event reports the
    pre-impact state together with its noise-free reset.
    """
    x0 = sys.check_state(mode, x0)
    if not t_end > t0:
        raise ContractViolation("t_end must exceed t0")
    d = None if drift is None else np.asarray(drift, dtype=float)[None, :]
    res = integrate_batch(sys, [mode], t0, x0[None, :], t_end, cfg, drift=d)
    t_stop, x_stop = float(res.t[0]), res.x[0].copy()
    if res.transition[0] < 0:
        return t_stop, x_stop, None
    tr = sys.transitions[res.transition[0]]
    ev = TransitionEvent(tr, t_stop, x_stop, np.asarray(sys.reset(tr, t_stop, x_stop), dtype=float))
    return t_stop, x_stop, ev


def flow_jacobian(
    sys: HybridSystem,
    mode: int,
    t0: float,
    x0,
    dt: float,
    cfg: IntegratorConfig = IntegratorConfig(),
    check_events: bool = True,
) -> np.ndarray:
    """Jacobian of the time-``dt`` flow of ``mode`` by central differences.

    Perturbed copies are integrated through the mode's vector field with a shared
    step sequence and without event detection, so a segment that ends exactly
    on a guard can be linearized.  With ``check_events`` the nominal segment is
    integrated first and must not contain an interior event.
    """
    x0 = sys.check_state(mode, x0)
    n = x0.size
    if dt <= 0:
        return np.eye(n)
    if check_events:
        t_stop, _, ev = integrate_until_event(sys, mode, t0, x0, t0 + dt, cfg)
        if ev is not None and t_stop < t0 + dt - max(cfg.event_tol, 1e-12 * dt):
            raise LinearizationError(
                f"guard {ev.transition} reached at t={t_stop:.6g} inside the linearization window"
            )
    delta = 1e-6 * (1.0 + np.abs(x0))
    pert = np.concatenate([x0 + np.diag(delta), x0 - np.diag(delta)])
    res = integrate_batch(sys, np.full(2 * n, mode), t0, pert, t0 + dt, cfg,
                          detect_events=False, common_step=True)
    return ((res.x[:n] - res.x[n:]) / (2 * delta)[:, None]).T


def gaussian_factor(cov: np.ndarray) -> np.ndarray:
    """A square factor ``L`` with ``L @ L.T == cov`` for a symmetric PSD ``cov``."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    w, v = np.linalg.eigh(0.5 * (cov + cov.T))
    return v * np.sqrt(np.clip(w, 0.0, None))


def sample_gaussian(rng: np.random.Generator, cov: np.ndarray, size: int) -> np.ndarray:
    L = gaussian_factor(cov)
    return rng.standard_normal((size, L.shape[0])) @ L.T


@dataclass
class StepOutcome:
    modes: np.ndarray
    x: np.ndarray
    events: List[Tuple[int, TransitionEvent]] = field(default_factory=list)


def stochastic_step(
    sys: HybridSystem,
    noise: NoiseModel,
    modes,
    t0: float,
    x,
    dt: float,
    rng: np.random.Generator,
    cfg: IntegratorConfig = IntegratorConfig(),
    max_events: int = 16,
) -> StepOutcome:
    """Advance a batch of states one timestep under the piecewise-constant noise model.

    Each row draws a velocity perturbation ``omega ~ N(0, W_rate)`` that is held
    constant while integrating; at a guard crossing the reset plus a reset-noise
    draw is applied and a fresh ``omega`` is drawn for the rest of the step.
    """
    modes = np.array(modes, dtype=int, copy=True)
    x = np.array(x, dtype=float, copy=True)
    N = x.shape[0]
    t = np.full(N, float(t0))
    t_end = t0 + dt
    events: List[Tuple[int, TransitionEvent]] = []

    def draw_omega(rows):
        om = np.zeros((rows.size, x.shape[1]))
        for m in np.unique(modes[rows]):
            sel = modes[rows] == m
            om[sel] = sample_gaussian(rng, noise.process_rate(int(m)), int(sel.sum()))
        return om

    pending = np.arange(N)
    omega = draw_omega(pending)
    for _ in range(max_events + 1):
        res = integrate_batch(sys, modes[pending], t[pending], x[pending], t_end, cfg, drift=omega)
        t[pending] = res.t
        x[pending] = res.x
        hit = res.transition >= 0
        if not np.any(hit):
            return StepOutcome(modes, x, events)
        rows = pending[hit]
        for idx in np.unique(res.transition[hit]):
            tr = sys.transitions[idx]
            sel = rows[res.transition[hit] == idx]
            x_pre = x[sel].copy()
            x_post = np.asarray(sys.reset(tr, t[sel], x_pre), dtype=float)
            for k, r in enumerate(sel):
                events.append((int(r), TransitionEvent(tr, float(t[r]), x_pre[k], x_post[k].copy())))
            x_post = x_post + sample_gaussian(rng, noise.reset_cov(tr, sys.state_dim(tr[1])), sel.size)
            if x_post.shape[1] != x.shape[1]:
                raise ContractViolation("batched propagation needs equal state dimensions across modes")
            x[sel] = x_post
            modes[sel] = tr[1]
        pending = rows
        omega = draw_omega(pending)
        # rows that reset exactly at t_end are finished
        live = t[pending] < t_end
        pending = pending[live]
        omega = omega[live]
        if pending.size == 0:
            return StepOutcome(modes, x, events)
    raise IntegrationError(f"more than {max_events} hybrid transitions within one timestep")


@dataclass
class SimulatedTrajectory:
    """Ground truth and measurements on the grid ``t_k = t0 + k dt``."""

    times: np.ndarray
    modes: np.ndarray
    states: List[np.ndarray]
    measurements: List[np.ndarray]
    events: List[TransitionEvent]

    def __len__(self):
        return len(self.times)


def simulate_execution(
    sys: HybridSystem,
    noise: NoiseModel,
    meas: MeasurementModel,
    mode0: int,
    x0,
    dt: float,
    t_final: float,
    rng,
    cfg: IntegratorConfig = IntegratorConfig(),
    t0: float = 0.0,
) -> SimulatedTrajectory:
    """Simulate a noisy hybrid execution and its measurements.

    ``rng`` may be a seed or a ``numpy.random.Generator``.  The measurement at
    every grid time (including ``t0``) is ``h(x) + v`` with ``v ~ N(0, V)``.
    """
    if not dt > 0:
        raise ContractViolation("dt must be positive")
    rng = np.random.default_rng(rng)
    x = sys.check_state(mode0, x0).copy()
    K = int(round((t_final - t0) / dt))
    times = t0 + dt * np.arange(K + 1)
    modes = [int(mode0)]
    states = [x.copy()]
    events: List[TransitionEvent] = []
    mode = int(mode0)
    for k in range(K):
        out = stochastic_step(sys, noise, [mode], times[k], x[None, :], dt, rng, cfg)
        mode = int(out.modes[0])
        x = out.x[0]
        events.extend(ev for _, ev in out.events)
        modes.append(mode)
        states.append(x.copy())
    measurements = []
    for m, s in zip(modes, states):
        v = sample_gaussian(rng, noise.measurement_cov(m), 1)[0]
        measurements.append(np.asarray(meas(m, s), dtype=float) + v)
    return SimulatedTrajectory(times, np.array(modes), states, measurements, events)


__all__: Sequence[str] = [
    "BatchResult",
    "IntegratorConfig",
    "SimulatedTrajectory",
    "StepOutcome",
    "TransitionEvent",
    "flow_jacobian",
    "gaussian_factor",
    "integrate_batch",
    "integrate_until_event",
    "sample_gaussian",
    "simulate_execution",
    "stochastic_step",
]
