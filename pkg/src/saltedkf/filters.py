"""Kalman-type filters with hybrid transitions, and a hybrid bootstrap particle filter.

The salted filter (SKF) maps its covariance through every transition with the
saltation matrix; the Jacobian-of-the-reset filter (JRKF) runs the identical
algorithm with the reset Jacobian in its place.  Both are extended Kalman
filters inside each mode: the flow is linearized by finite differences and the
measurement function by its analytic Jacobian.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np
import scipy.linalg
from scipy.special import logsumexp

from .errors import ConditioningError, ContractViolation, DegeneracyError, IntegrationError
from .hybrid import GaussianBelief, HybridSystem, MeasurementModel, NoiseModel, guard_triggered, symmetrize
from .integrate import (
    IntegratorConfig,
    TransitionEvent,
    flow_jacobian,
    integrate_until_event,
    sample_gaussian,
    stochastic_step,
)
from .saltation import propagate_covariance, reset_moment_update

Observer = Callable[[GaussianBelief, TransitionEvent], None]


class Kind(str, enum.Enum):
    SKF = "skf"
    JRKF = "jrkf"
    PF = "pf"


@dataclass(frozen=True)
class FilterKind:
    """Which estimator to run; ``particles`` is only meaningful for the PF."""

    kind: Kind
    particles: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.kind is Kind.PF:
            if self.particles is None or int(self.particles) < 1:
                raise ContractViolation("a particle filter needs particle_count >= 1")
            object.__setattr__(self, "particles", int(self.particles))
        elif self.particles is not None:
            raise ContractViolation(f"{self.kind.value} does not take a particle count")

    @property
    def label(self) -> str:
        return f"pf{self.particles}" if self.kind is Kind.PF else self.kind.value

    @classmethod
    def parse(cls, text: str) -> "FilterKind":
        """Parse ``skf``, ``jrkf``, ``pf`` (2000 particles), ``pf:500`` or ``pf500``."""
        t = text.strip().lower()
        if t in ("skf", "jrkf"):
            return cls(Kind(t))
        if t.startswith("pf"):
            rest = t[2:].lstrip(":")
            return cls(Kind.PF, int(rest) if rest else 2000)
        raise ContractViolation(f"unknown filter {text!r}")

    def __str__(self):
        return self.label


SKF = FilterKind(Kind.SKF)
JRKF = FilterKind(Kind.JRKF)

_MAX_EVENTS_PER_STEP = 16


def skf_predict(
    sys: HybridSystem,
    noise: NoiseModel,
    belief: GaussianBelief,
    t_k: float,
    dt: float,
    cfg: IntegratorConfig = IntegratorConfig(),
    salted: bool = True,
    observer: Optional[Observer] = None,
) -> Tuple[GaussianBelief, List[TransitionEvent]]:
    """A-priori update over one timestep, splitting the step at every mean transition.

    Each segment of length ``d`` updates the covariance with the flow Jacobian
    over ``d`` plus ``W_rate d^2``; each transition maps the belief through the
    reset (see :func:`reset_moment_update`).  ``observer`` is called with the
    pre-reset belief at every transition.
    """
    belief.check(sys)
    t = float(t_k)
    t_end = t_k + dt
    events: List[TransitionEvent] = []
    while t < t_end:
        mode, mean, cov = belief.mode, belief.mean, belief.cov
        t_stop, x_stop, ev = integrate_until_event(sys, mode, t, mean, t_end, cfg)
        seg = t_stop - t
        if seg > 0:
            A = flow_jacobian(sys, mode, t, mean, seg, cfg, check_events=False)
            cov = propagate_covariance(cov, A, noise.process_cov_for(mode, seg))
        belief = GaussianBelief(mode, x_stop, cov)
        t = t_stop
        if ev is None:
            break
        if len(events) >= _MAX_EVENTS_PER_STEP:
            raise IntegrationError("too many hybrid transitions of the mean within one step")
        if observer is not None:
            observer(belief, ev)
        belief = reset_moment_update(belief, ev, sys, noise, salted=salted)
        events.append(ev)
    return belief, events


def kalman_gain(cov: np.ndarray, C: np.ndarray, V: np.ndarray) -> np.ndarray:
    """``cov C^T (C cov C^T + V)^-1`` via a Cholesky solve."""
    S = symmetrize(C @ cov @ C.T + V)
    try:
        factor = scipy.linalg.cho_factor(S, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise ConditioningError("innovation covariance is not positive definite") from exc
    return scipy.linalg.cho_solve(factor, C @ cov).T


def skf_update(
    sys: HybridSystem,
    noise: NoiseModel,
    meas: MeasurementModel,
    prior: GaussianBelief,
    y,
    t: float,
    salted: bool = True,
    observer: Optional[Observer] = None,
) -> GaussianBelief:
    """A-posteriori update, then at most one transition if the mean lands in a guard."""
    mode, mean, cov = prior.mode, prior.mean, prior.cov
    y = np.asarray(y, dtype=float)
    if y.shape != (meas.dims[mode],):
        raise ContractViolation(f"measurement of shape {y.shape} does not match mode {mode}")
    C = np.asarray(meas.jacobian(mode, mean), dtype=float)
    K = kalman_gain(cov, C, noise.measurement_cov(mode))
    mean = mean + K @ (y - np.asarray(meas(mode, mean), dtype=float))
    cov = symmetrize(cov - K @ C @ cov)
    post = GaussianBelief(mode, mean, cov)
    hit = guard_triggered(sys, mode, t, mean)
    if hit is None:
        return post
    tr = hit[0]
    ev = TransitionEvent(tr, float(t), mean, np.asarray(sys.reset(tr, t, mean), dtype=float))
    if observer is not None:
        observer(post, ev)
    return reset_moment_update(post, ev, sys, noise, salted=salted)


def skf_step(
    sys: HybridSystem,
    noise: NoiseModel,
    meas: MeasurementModel,
    belief: GaussianBelief,
    t_k: float,
    dt: float,
    y_next,
    kind: FilterKind = SKF,
    cfg: IntegratorConfig = IntegratorConfig(),
    observer: Optional[Observer] = None,
) -> GaussianBelief:
    """One predict/update cycle of the SKF (or of the JRKF baseline)."""
    if kind.kind is Kind.PF:
        raise ContractViolation("skf_step runs the Kalman variants only")
    salted = kind.kind is Kind.SKF
    prior, _ = skf_predict(sys, noise, belief, t_k, dt, cfg, salted=salted, observer=observer)
    return skf_update(sys, noise, meas, prior, y_next, t_k + dt, salted=salted, observer=observer)


@dataclass
class ParticleSet:
    """Weighted particles, each with its own discrete mode."""

    modes: np.ndarray
    states: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.modes = np.asarray(self.modes, dtype=int)
        self.states = np.asarray(self.states, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        n = self.modes.shape[0]
        if self.states.shape[0] != n or self.weights.shape != (n,) or n == 0:
            raise ContractViolation("particle arrays must be non-empty and of equal length")

    def __len__(self):
        return self.modes.shape[0]

    @classmethod
    def from_gaussian(cls, sys: HybridSystem, mode: int, mean, cov, count: int,
                      rng: np.random.Generator) -> "ParticleSet":
        mean = sys.check_state(mode, mean)
        states = mean + sample_gaussian(rng, cov, count)
        states = sys.constrain(mode, states)
        return cls(np.full(count, mode), states, np.full(count, 1.0 / count))


def systematic_resample(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Indices drawn by systematic resampling (one uniform offset, N evenly spaced points)."""
    n = weights.size
    positions = (rng.uniform() + np.arange(n)) / n
    cdf = np.cumsum(weights)
    cdf[-1] = 1.0
    return np.minimum(np.searchsorted(cdf, positions, side="right"), n - 1)


def _log_likelihood(meas, noise, modes, states, y):
    out = np.empty(modes.shape[0])
    for m in np.unique(modes):
        sel = modes == m
        V = noise.measurement_cov(int(m))
        r = y - np.asarray(meas(int(m), states[sel]), dtype=float)
        try:
            cf = scipy.linalg.cho_factor(V, lower=True)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise ConditioningError("measurement covariance is singular") from exc
        z = scipy.linalg.solve_triangular(cf[0], r.T, lower=True)
        logdet = 2 * np.sum(np.log(np.diag(cf[0])))
        out[sel] = -0.5 * np.sum(z**2, axis=0) - 0.5 * (logdet + V.shape[0] * np.log(2 * np.pi))
    return out


def pf_step(
    sys: HybridSystem,
    noise: NoiseModel,
    meas: MeasurementModel,
    pset: ParticleSet,
    t_k: float,
    dt: float,
    y_next,
    rng: np.random.Generator,
    cfg: IntegratorConfig = IntegratorConfig(),
) -> ParticleSet:
    """Resample, propagate every particle through the stochastic hybrid dynamics, reweight.

    The returned set carries normalized likelihood weights; the next call
    resamples it systematically before propagating.
    """
    n = len(pset)
    if np.ptp(pset.weights) > 0:
        idx = systematic_resample(pset.weights, rng)
        modes, states = pset.modes[idx], pset.states[idx]
    else:
        modes, states = pset.modes, pset.states
    out = stochastic_step(sys, noise, modes, t_k, states, dt, rng, cfg)
    logw = _log_likelihood(meas, noise, out.modes, out.x, np.asarray(y_next, dtype=float))
    total = logsumexp(logw)
    if not np.isfinite(total) or total < np.log(np.finfo(float).tiny):
        raise DegeneracyError(f"all particle likelihoods vanished at t={t_k + dt:.6g}")
    w = np.exp(logw - total)
    return ParticleSet(out.modes, out.x, w / w.sum())


def pf_estimate(pset: ParticleSet, sys: Optional[HybridSystem] = None) -> Tuple[int, np.ndarray]:
    """Majority-weight mode and the weighted mean of that mode's particles.

    With ``sys`` the estimate is returned in the system's common chart.
    """
    modes = np.unique(pset.modes)
    mass = np.array([pset.weights[pset.modes == m].sum() for m in modes])
    mode = int(modes[np.argmax(mass)])
    sel = pset.modes == mode
    w = pset.weights[sel]
    est = (w[:, None] * pset.states[sel]).sum(axis=0) / w.sum()
    if sys is not None:
        est = sys.to_common(mode, est)
    return mode, est
