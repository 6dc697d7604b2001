"""Hybrid dynamical system abstraction and the belief types shared by filters.

A hybrid system is a finite set of modes, each with its own vector field on its
own state space, plus a directed set of transitions.  Every transition
``(I, J)`` carries a guard function ``g`` (the transition fires when ``g <= 0``
while the flow is driving ``g`` downwards) and a reset map ``R`` that
re-initializes the state in the target mode.

All state-valued callbacks accept arrays of shape ``(..., n)`` so that the same
model can be evaluated on a single state or on a whole particle cloud.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import ContractViolation

Transition = Tuple[int, int]

#: Absolute threshold below which ``d/dt g`` is considered non-transverse.
EPS_TRANSVERSE = 1e-9


class HybridSystem(abc.ABC):
    """Base class for hybrid dynamical systems.

    Subclasses fill in ``modes``, ``transitions`` and the per-mode / per-transition
    callbacks.  Instances are treated as immutable once constructed.
    """

    name: str = "hybrid"
    modes: Tuple[int, ...] = ()
    transitions: Tuple[Transition, ...] = ()

    @abc.abstractmethod
    def state_dim(self, mode: int) -> int:
        ...

    @abc.abstractmethod
    def vector_field(self, mode: int, t, x: np.ndarray) -> np.ndarray:
        """Evaluate ``F_mode(t, x)``; ``x`` has shape ``(..., n)``."""

    @abc.abstractmethod
    def guard_value(self, transition: Transition, t, x: np.ndarray) -> np.ndarray:
        ...

    @abc.abstractmethod
    def guard_gradients(self, transition: Transition, t, x: np.ndarray):
        """Return ``(D_x g, D_t g)`` at ``(t, x)``."""

    @abc.abstractmethod
    def reset(self, transition: Transition, t, x: np.ndarray) -> np.ndarray:
        ...

    @abc.abstractmethod
    def reset_jacobians(self, transition: Transition, t, x: np.ndarray):
        """Return ``(D_x R, D_t R)`` at ``(t, x)``."""

    def outgoing(self, mode: int) -> Tuple[Transition, ...]:
        return tuple(tr for tr in self.transitions if tr[0] == mode)

    def to_common(self, mode: int, x: np.ndarray) -> np.ndarray:
        """Map a state into the chart used for error metrics (identity by default)."""
        return np.asarray(x, dtype=float)

    def constrain(self, mode: int, x: np.ndarray) -> np.ndarray:
        """Project a sampled initial state onto any holonomic constraint of ``mode``."""
        return np.asarray(x, dtype=float)

    def in_domain(self, mode: int, t, x: np.ndarray) -> bool:
        """True when ``x`` is strictly inside the domain of ``mode`` (no guard is met)."""
        return all(float(self.guard_value(tr, t, x)) > 0.0 for tr in self.outgoing(mode))

    def check_state(self, mode: int, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if mode not in self.modes:
            raise ContractViolation(f"unknown mode {mode!r} for system {self.name}")
        if x.shape[-1:] != (self.state_dim(mode),):
            raise ContractViolation(
                f"state of shape {x.shape} does not match mode {mode} "
                f"dimension {self.state_dim(mode)}"
            )
        return x


def transversality_lhs(sys: HybridSystem, transition: Transition, t, x) -> float:
    """``D_t g + D_x g . F_I`` for the transition at ``(t, x)``.

    Negative values certify that the flow crosses the guard transversally.
    """
    x = sys.check_state(transition[0], x)
    dxg, dtg = sys.guard_gradients(transition, t, x)
    f = sys.vector_field(transition[0], t, x)
    return float(dtg + np.dot(dxg, f))


def guard_triggered(
    sys: HybridSystem, mode: int, t, x, eps: float = EPS_TRANSVERSE
) -> Optional[Tuple[Transition, float]]:
    """Return ``(transition, g)`` for a guard that ``x`` satisfies, else ``None``.

    A guard is satisfied when ``g <= 0`` and the flow is strictly transverse
    (``d/dt g < -eps``).  When several guards qualify, the one with the most
    negative transversality value wins.
    """
    x = sys.check_state(mode, x)
    best = None
    for tr in sys.outgoing(mode):
        g = float(sys.guard_value(tr, t, x))
        if g > 0.0:
            continue
        rate = transversality_lhs(sys, tr, t, x)
        if rate < -eps and (best is None or rate < best[2]):
            best = (tr, g, rate)
    if best is None:
        return None
    return best[0], best[1]


def symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


@dataclass(frozen=True)
class GaussianBelief:
    """Mode-conditioned Gaussian belief ``(mode, mean, cov)``."""

    mode: int
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float)
        cov = np.array(self.cov, dtype=float)
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise ContractViolation(
                f"belief mean {mean.shape} and covariance {cov.shape} are inconsistent"
            )
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    def check(self, sys: HybridSystem) -> "GaussianBelief":
        sys.check_state(self.mode, self.mean)
        return self

    def is_valid(self, sym_tol: float = 1e-12, psd_tol: float = 1e-10) -> bool:
        """Check the symmetry and positive-semidefiniteness invariants."""
        cov = self.cov
        scale = np.max(np.abs(cov)) if cov.size else 0.0
        if np.max(np.abs(cov - cov.T), initial=0.0) > sym_tol * max(scale, 1e-300):
            return False
        eig = np.linalg.eigvalsh(symmetrize(cov))
        return bool(eig.min(initial=0.0) >= -psd_tol * max(eig.max(initial=0.0), 1e-300))


def _as_mode_map(value, modes) -> dict:
    if isinstance(value, Mapping):
        return {k: np.atleast_2d(np.asarray(v, dtype=float)) for k, v in value.items()}
    return {m: np.atleast_2d(np.asarray(value, dtype=float)) for m in modes}


@dataclass(frozen=True)
class NoiseModel:
    """Process, reset and measurement covariances.

    ``process`` holds the covariance of the process noise accumulated over one
    full timestep ``dt`` (``W_{I,dt}``).  The noise is a velocity perturbation held
    constant over the step, so its covariance scales with the square of the
    elapsed time; :meth:`process_cov_for` rescales it for partial steps.
    """

    dt: float
    process: Mapping[int, np.ndarray]
    measurement: Mapping[int, np.ndarray]
    reset: Mapping[Transition, np.ndarray] = field(default_factory=dict)

    def process_cov(self, mode: int) -> np.ndarray:
        return self.process[mode]

    def process_rate(self, mode: int) -> np.ndarray:
        """Covariance of the constant velocity perturbation ``omega``."""
        return self.process[mode] / self.dt**2

    def process_cov_for(self, mode: int, duration: float) -> np.ndarray:
        return self.process_rate(mode) * duration**2

    def reset_cov(self, transition: Transition, dim: int) -> np.ndarray:
        w = self.reset.get(transition)
        return np.zeros((dim, dim)) if w is None else w

    def measurement_cov(self, mode: int) -> np.ndarray:
        return self.measurement[mode]

    @classmethod
    def isotropic(
        cls,
        sys: HybridSystem,
        dt: float,
        process_scale: float,
        measurement_scale: float,
        measurement_dims: Mapping[int, int],
        reset_scale: float = 0.0,
    ) -> "NoiseModel":
        """Scaled identity covariances, the parameterization used in the experiments."""
        process = {m: process_scale * np.eye(sys.state_dim(m)) for m in sys.modes}
        meas = {m: measurement_scale * np.eye(measurement_dims[m]) for m in sys.modes}
        reset = {}
        if reset_scale:
            reset = {tr: reset_scale * np.eye(sys.state_dim(tr[1])) for tr in sys.transitions}
        return cls(dt=dt, process=process, measurement=meas, reset=reset)


@dataclass(frozen=True)
class MeasurementModel:
    """Mode-indexed measurement functions ``h_I`` and their Jacobians."""

    h: Callable[[int, np.ndarray], np.ndarray]
    h_jacobian: Callable[[int, np.ndarray], np.ndarray]
    dims: Mapping[int, int]

    def __call__(self, mode: int, x: np.ndarray) -> np.ndarray:
        return self.h(mode, x)

    def jacobian(self, mode: int, x: np.ndarray) -> np.ndarray:
        return self.h_jacobian(mode, x)


def numerical_jacobian(fun: Callable[[np.ndarray], np.ndarray], x: np.ndarray,
                       rel_step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian, used to cross-check analytic derivatives."""
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(x.size):
        h = rel_step * (1.0 + abs(x[j]))
        e = np.zeros_like(x)
        e[j] = h
        cols.append((np.asarray(fun(x + e)) - np.asarray(fun(x - e))) / (2 * h))
    return np.stack(cols, axis=-1)


__all__: Sequence[str] = [
    "EPS_TRANSVERSE",
    "GaussianBelief",
    "HybridSystem",
    "MeasurementModel",
    "NoiseModel",
    "Transition",
    "guard_triggered",
    "numerical_jacobian",
    "symmetrize",
    "transversality_lhs",
]
