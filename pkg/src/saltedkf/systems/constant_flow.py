"""Two half-planes with constant, distinct flows separated by the line x1 = 0."""

import numpy as np

from ..hybrid import HybridSystem, MeasurementModel

FLOWS = {1: np.array([1.0, -1.0]), 2: np.array([1.0, 1.0])}


class ConstantFlowSystem(HybridSystem):
    """Mode 1 lives in ``x1 < 0`` and flows along (1, -1); mode 2 flows along (1, 1).

    Both transitions use the identity reset.  The guard out of mode 1 is
    ``g = -x1`` and the guard out of mode 2 is ``g = x1``; the latter is never
    transverse for the given flows, so executions cross the line once.
    """

    name = "constant_flow"
    modes = (1, 2)
    transitions = ((1, 2), (2, 1))

    _sign = {(1, 2): -1.0, (2, 1): 1.0}

    def state_dim(self, mode):
        return 2

    def vector_field(self, mode, t, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(FLOWS[mode], x.shape).copy()

    def guard_value(self, transition, t, x):
        return self._sign[transition] * np.asarray(x, dtype=float)[..., 0]

    def guard_gradients(self, transition, t, x):
        x = np.asarray(x, dtype=float)
        dxg = np.zeros(x.shape)
        dxg[..., 0] = self._sign[transition]
        return dxg, np.zeros(x.shape[:-1])

    def reset(self, transition, t, x):
        return np.array(x, dtype=float, copy=True)

    def reset_jacobians(self, transition, t, x):
        x = np.asarray(x, dtype=float)
        eye = np.broadcast_to(np.eye(2), x.shape[:-1] + (2, 2)).copy()
        return eye, np.zeros(x.shape)


def constant_flow_measurement() -> MeasurementModel:
    """Full-state measurement ``y = x`` in both modes."""

    def h(mode, x):
        return np.array(x, dtype=float, copy=True)

    def h_jac(mode, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.eye(2), x.shape[:-1] + (2, 2)).copy()

    return MeasurementModel(h=h, h_jacobian=h_jac, dims={1: 2, 2: 2})


def analytic_saltation() -> np.ndarray:
    """Saltation matrix of the 1 -> 2 crossing, worked out by hand."""
    return np.array([[1.0, 0.0], [2.0, 1.0]])
