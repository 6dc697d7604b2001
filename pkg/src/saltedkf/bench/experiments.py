"""Diagnostics beyond plain Monte-Carlo MSE runs.

* :func:`fig1_dataset` pushes a Gaussian sample cloud through the constant-flow
  guard and compares its covariance with the saltation and reset-Jacobian maps.
* :func:`first_order_check` measures how the across-event linearization error
  scales with the perturbation size.
* :func:`transition_mass` records the filter covariance at its first transition.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..errors import ContractViolation
from ..filters import SKF, skf_step
from ..hybrid import GaussianBelief, HybridSystem, NoiseModel
from ..integrate import IntegratorConfig, flow_jacobian, integrate_until_event, stochastic_step
from ..saltation import saltation_context, saltation_matrix
from ..systems import ConstantFlowSystem, get_system
from .config import ExperimentConfig
from .harness import sample_initial_state, trial_rng


def _rel_frobenius(a, ref) -> float:
    return float(np.linalg.norm(a - ref) / np.linalg.norm(ref))


def fig1_dataset(n_samples: int = 100_000, variance: float = 0.01, lead: float = 1.0,
                 seed: int = 0, cfg: IntegratorConfig = IntegratorConfig()) -> dict:
    """Sample cloud carried across the constant-flow guard.

    The cloud has covariance ``variance * I`` and a mean that reaches the guard
    point (0, 0) after ``lead`` seconds.  Every sample is integrated for
    ``2 * lead`` seconds; all flow Jacobians are the identity, so the exact
    post-event covariance is the pre-event one mapped by the transition matrix.
    """
    sys = ConstantFlowSystem()
    rng = np.random.default_rng(seed)
    cov = variance * np.eye(2)
    mean = -lead * np.array([1.0, -1.0])
    before = mean + rng.multivariate_normal(np.zeros(2), cov, size=n_samples)
    if np.any(before[:, 0] >= 0):
        raise ContractViolation("lead too short: some samples start past the guard")
    quiet = NoiseModel.isotropic(sys, 2 * lead, 0.0, 1.0, {1: 2, 2: 2})
    out = stochastic_step(sys, quiet, np.ones(n_samples, dtype=int), 0.0, before, 2 * lead, rng, cfg)
    if np.any(out.modes != 2):
        raise ContractViolation("horizon too short: some samples did not cross")
    after = out.x
    xi = saltation_matrix(saltation_context(sys, (1, 2), lead, np.zeros(2)))
    jac = sys.reset_jacobians((1, 2), lead, np.zeros(2))[0]
    empirical = np.cov(after, rowvar=False)
    salted = xi @ cov @ xi.T
    naive = jac @ cov @ jac.T
    return {
        "samples_before": before,
        "samples_after": after,
        "prior_cov": cov,
        "empirical_cov": empirical,
        "saltation_cov": salted,
        "jacobian_cov": naive,
        "saltation_error": _rel_frobenius(salted, empirical),
        "jacobian_error": _rel_frobenius(naive, empirical),
    }


def hybrid_flow(sys: HybridSystem, mode: int, t0: float, x0, horizon: float,
                cfg: IntegratorConfig, max_events: int = 8):
    """Noise-free hybrid execution over ``horizon``; returns (mode, state, events)."""
    t, x, events = t0, np.asarray(x0, dtype=float), []
    t_end = t0 + horizon
    while t < t_end:
        t, x, ev = integrate_until_event(sys, mode, t, x, t_end, cfg)
        if ev is None:
            break
        if len(events) == max_events:
            raise ContractViolation("too many events in the hybrid flow")
        events.append(ev)
        mode, x = ev.transition[1], ev.x_post
    return mode, x, events


@dataclass
class OrderFit:
    deltas: np.ndarray
    residuals: np.ndarray
    slope: float
    exact: bool

    def summary(self) -> str:
        if self.exact:
            return f"linearization exact to roundoff (max residual {self.residuals.max():.2e})"
        return f"fitted order {self.slope:.3f}"


def first_order_check(
    sys: HybridSystem,
    mode: int,
    x0,
    horizon: float,
    t0: float = 0.0,
    deltas: Optional[Sequence[float]] = None,
    directions: int = 8,
    seed: int = 0,
    cfg: IntegratorConfig = IntegratorConfig(rel_tol=1e-12, abs_tol=1e-14, event_tol=1e-14),
    roundoff: float = 1e-11,
) -> OrderFit:
    """Scaling of ``|phi(x0 + d) - phi(x0) - Phi d|`` with ``|d|`` across one event.

    ``phi`` is the hybrid flow over ``horizon`` (exactly one transition) and
    ``Phi`` composes the pre-event flow Jacobian, the saltation matrix and the
    post-event flow Jacobian.  The slope of the log-log fit is the order of the
    residual; a first-order accurate linearization gives 2.
    """
    x0 = sys.check_state(mode, x0)
    m_end, x_end, events = hybrid_flow(sys, mode, t0, x0, horizon, cfg)
    if len(events) != 1:
        raise ContractViolation(f"nominal flow has {len(events)} events, need exactly one")
    ev = events[0]
    tr, tb = ev.transition, ev.t_impact
    A_pre = flow_jacobian(sys, mode, t0, x0, tb - t0, cfg, check_events=False)
    xi = saltation_matrix(saltation_context(sys, tr, tb, ev.x_pre))
    A_post = flow_jacobian(sys, tr[1], tb, ev.x_post, t0 + horizon - tb, cfg, check_events=False)
    Phi = A_post @ xi @ A_pre
    if deltas is None:
        deltas = np.logspace(-4, -2, 7)
    deltas = np.asarray(deltas, dtype=float)
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((directions, x0.size))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    res = np.zeros(deltas.size)
    for i, d in enumerate(deltas):
        errs = []
        for u in dirs:
            m, x, evs = hybrid_flow(sys, mode, t0, sys.constrain(mode, x0 + d * u), horizon, cfg)
            if m != m_end or len(evs) != 1:
                raise ContractViolation(f"perturbation {d:g} changed the event sequence")
            # constrain may move the perturbation; use the realized one
            dx = sys.constrain(mode, x0 + d * u) - x0
            errs.append(np.linalg.norm(x - x_end - Phi @ dx))
        res[i] = np.mean(errs)
    exact = bool(np.all(res <= roundoff * np.maximum(deltas, 1.0)))
    slope = float("nan") if exact else float(np.polyfit(np.log(deltas), np.log(res), 1)[0])
    return OrderFit(deltas, res, slope, exact)


def default_order_check(name: str, **kwargs) -> OrderFit:
    """First-order check on a registered system from a nominal pre-event state."""
    entry = get_system(name)
    sys = entry.build()
    if name == "constant_flow":
        return first_order_check(sys, 1, np.array([-0.5, 0.3]), 1.0, **kwargs)
    if name == "aslip":
        cfg = ExperimentConfig.default("aslip")
        # one touchdown: the nominal lands at about 0.215 s and stance lasts 0.11 s
        return first_order_check(sys, 1, np.array(cfg.initial_mean), 0.26, **kwargs)
    raise ContractViolation(f"no nominal for system {name!r}")


def transition_mass(cfg: ExperimentConfig, trials: int = 10) -> List[Tuple[GaussianBelief, tuple, float]]:
    """Pre-reset SKF belief at the first transition of each trial.

    Returns ``(belief, transition, t_impact)`` per trial.  The Kalman covariance
    does not depend on the measurements here, but the crossing time does, so
    several trials are run.
    """
    from ..integrate import simulate_execution

    sys, meas, noise, belief0 = cfg.build()
    out = []
    for trial in range(trials):
        x0 = sample_initial_state(sys, belief0.mode, belief0.mean, belief0.cov,
                                  trial_rng(cfg.base_seed, trial, 0))
        traj = simulate_execution(sys, noise, meas, belief0.mode, x0, cfg.dt, cfg.t_final,
                                  trial_rng(cfg.base_seed, trial, 1), cfg.integrator)
        hits = []
        observer = lambda b, ev: hits.append((b, ev.transition, ev.t_impact))  # noqa: E731
        belief = belief0
        for k in range(len(traj.times) - 1):
            belief = skf_step(sys, noise, meas, belief, traj.times[k], cfg.dt, traj.measurements[k + 1],
                              SKF, cfg.integrator, observer)
            if hits:
                out.append(hits[0])
                break
    return out
