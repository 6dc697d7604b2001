"""Error metrics, the paired sign test and the transition-mass metric."""

from __future__ import annotations

from typing import Sequence, Tuple

import numpy as np
from scipy.stats import binom, norm

from ..errors import ContractViolation, NonTransverseCrossing
from ..hybrid import EPS_TRANSVERSE, GaussianBelief, HybridSystem, Transition

Z_995 = float(norm.ppf(0.995))


def squared_errors(truth, est) -> np.ndarray:
    truth = np.asarray(truth, dtype=float)
    est = np.asarray(est, dtype=float)
    if truth.shape != est.shape:
        raise ContractViolation(f"shape mismatch {truth.shape} vs {est.shape}")
    return np.sum((truth - est) ** 2, axis=-1)


def mse(truth, est) -> float:
    """Mean over timesteps of the squared Euclidean state error.

    Parameters
    ----------
    truth, est : array_like, shape (K, n)
        State sequences in a common chart.
    """
    err = squared_errors(np.atleast_2d(truth), np.atleast_2d(est))
    if err.size == 0:
        raise ContractViolation("need at least one timestep")
    return float(np.mean(err))


def sign_test(diffs: Sequence[float]) -> float:
    """Two-sided exact binomial sign test of a zero median paired difference.

    Zero differences are dropped; an empty remainder gives ``p = 1``.
    """
    d = np.asarray(diffs, dtype=float)
    if d.size == 0:
        raise ContractViolation("sign test needs at least one pair")
    if np.any(np.isnan(d)):
        raise ContractViolation("sign test received NaN differences")
    n = int(np.count_nonzero(d))
    if n == 0:
        return 1.0
    k = int(np.sum(d > 0))
    p = 2.0 * min(float(binom.cdf(min(k, n - k), n, 0.5)), 0.5)
    return float(min(max(p, 0.0), 1.0))


def mass_transition_ratio(
    belief: GaussianBelief, sys: HybridSystem, transition: Transition, dt: float, t: float = 0.0,
    z: float = Z_995,
) -> Tuple[float, float]:
    """Covariance size at a transition and the time for 99% of the mass to cross.

    Returns ``(spectral norm of cov, Delta_T / dt)`` where ``Delta_T`` is the
    width of the central interval of the belief along the guard normal divided
    by the normal speed of the mean.
    """
    if belief.mode != transition[0]:
        raise ContractViolation("belief is not in the transition's source mode")
    dxg, dtg = sys.guard_gradients(transition, t, belief.mean)
    dxg = np.asarray(dxg, dtype=float)
    gnorm = np.linalg.norm(dxg)
    rate = float(dtg) + dxg @ np.asarray(sys.vector_field(transition[0], t, belief.mean))
    if gnorm == 0 or not rate < -EPS_TRANSVERSE:
        raise NonTransverseCrossing(f"guard rate {rate:.3g} is not transverse")
    n = dxg / gnorm
    sigma_n = float(np.sqrt(max(n @ belief.cov @ n, 0.0)))
    delta_t = 2.0 * z * sigma_n / abs(rate / gnorm)
    return float(np.linalg.norm(belief.cov, 2)), delta_t / dt
