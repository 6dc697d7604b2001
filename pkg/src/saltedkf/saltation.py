"""Saltation matrices and moment updates at hybrid transitions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonTransverseCrossing
from .integrate import TransitionEvent
from .hybrid import EPS_TRANSVERSE, GaussianBelief, HybridSystem, NoiseModel, Transition, symmetrize


@dataclass(frozen=True)
class SaltationContext:
    """Everything the saltation matrix needs, evaluated at one impact point.

    ``F_I`` is the pre-impact vector field at the impact state and ``F_J`` the
    post-impact vector field at its reset image.
    """

    F_I: np.ndarray
    F_J: np.ndarray
    DxR: np.ndarray
    DtR: np.ndarray
    Dxg: np.ndarray
    Dtg: float

    @property
    def denominator(self) -> float:
        return float(self.Dtg + self.Dxg @ self.F_I)


def saltation_context(sys: HybridSystem, transition: Transition, t: float, x) -> SaltationContext:
    x = sys.check_state(transition[0], x)
    dxr, dtr = sys.reset_jacobians(transition, t, x)
    dxg, dtg = sys.guard_gradients(transition, t, x)
    return SaltationContext(
        F_I=np.asarray(sys.vector_field(transition[0], t, x), dtype=float),
        F_J=np.asarray(sys.vector_field(transition[1], t, sys.reset(transition, t, x)), dtype=float),
        DxR=np.asarray(dxr, dtype=float),
        DtR=np.asarray(dtr, dtype=float),
        Dxg=np.asarray(dxg, dtype=float),
        Dtg=float(dtg),
    )


def saltation_matrix(ctx: SaltationContext, eps: float = EPS_TRANSVERSE) -> np.ndarray:
    """First-order map of state perturbations across a transverse guard crossing.

    ``DxR + (F_J - DxR F_I - DtR) Dxg / (Dtg + Dxg F_I)``.  Raises
    :class:`NonTransverseCrossing` when the denominator is within ``eps`` of zero.
    """
    denom = ctx.denominator
    if abs(denom) <= eps:
        raise NonTransverseCrossing(f"saltation denominator {denom:.3g} is not transverse")
    jump = ctx.F_J - ctx.DxR @ ctx.F_I - ctx.DtR
    return ctx.DxR + np.outer(jump, ctx.Dxg) / denom


def transition_matrix(sys: HybridSystem, transition: Transition, t: float, x, salted: bool = True) -> np.ndarray:
    """Covariance map at a transition: the saltation matrix, or ``DxR`` when not ``salted``."""
    if salted:
        return saltation_matrix(saltation_context(sys, transition, t, x))
    x = sys.check_state(transition[0], x)
    return np.asarray(sys.reset_jacobians(transition, t, x)[0], dtype=float)


def propagate_covariance(cov: np.ndarray, jac: np.ndarray, added: np.ndarray = None) -> np.ndarray:
    out = jac @ cov @ jac.T
    if added is not None:
        out = out + added
    return symmetrize(out)


def reset_moment_update(
    belief: GaussianBelief,
    event: TransitionEvent,
    sys: HybridSystem,
    noise: NoiseModel = None,
    salted: bool = True,
) -> GaussianBelief:
    """Map a Gaussian belief through the reset of ``event.transition``.

    The mean is reset through the nonlinear map; the covariance is propagated by
    the saltation matrix evaluated at the mean (or by the reset Jacobian when
    ``salted`` is False), then the reset noise covariance is added.
    """
    transition, t = event.transition, event.t_impact
    if belief.mode != transition[0]:
        raise ValueError(f"belief is in mode {belief.mode}, transition leaves {transition[0]}")
    mean = belief.mean
    jac = transition_matrix(sys, transition, t, mean, salted=salted)
    dim = sys.state_dim(transition[1])
    w_r = noise.reset_cov(transition, dim) if noise is not None else np.zeros((dim, dim))
    return GaussianBelief(
        mode=transition[1],
        mean=np.asarray(sys.reset(transition, t, mean), dtype=float),
        cov=propagate_covariance(belief.cov, jac, w_r),
    )
