"""Benchmark hybrid systems, addressable by name.

Each entry bundles the system, its measurement model, the initial-covariance
rule and the default experiment settings for that system.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict

import numpy as np

from ..hybrid import HybridSystem, MeasurementModel
from .aslip import AslipParams, AslipSystem, aslip_measurement, constrained_flight_covariance, flight_state
from .constant_flow import ConstantFlowSystem, analytic_saltation, constant_flow_measurement

# Flight state of the shipped ASLIP nominal: body at (0, 1.7) pointing up,
# moving forward at 0.5 m/s, with the body rate tuned so the hip spring is at
# rest at the first liftoff (two full hops within 1.25 s).
ASLIP_NOMINAL_QB = (0.0, 1.7, np.pi / 2)
ASLIP_NOMINAL_QDB = (0.5, 0.0, -1.0767754565572756)


@dataclass(frozen=True)
class SystemEntry:
    name: str
    build: Callable[[], HybridSystem]
    measurement: Callable[[HybridSystem], MeasurementModel]
    initial_covariance: Callable[[HybridSystem, int, np.ndarray, float], np.ndarray]
    defaults: Callable[[], dict]


def _isotropic_cov(sys, mode, mean, scale):
    return scale * np.eye(sys.state_dim(mode))


def _aslip_cov(sys, mode, mean, scale):
    if mode != 1:
        return _isotropic_cov(sys, mode, mean, scale)
    return constrained_flight_covariance(sys, mean[:3], scale * np.eye(6))


def _constant_flow_defaults():
    return dict(
        system="constant_flow",
        dt=0.05,
        t_final=5.0,
        process_scale=0.01,
        measurement_scale=1.0,
        reset_scale=0.0,
        initial_mode=1,
        initial_mean=[-2.5, 0.0],
        initial_cov=0.1,
        trials=200,
        base_seed=0,
        filters=["skf", "jrkf"],
    )


def _aslip_defaults():
    sys = get_system("aslip").build()
    mean = flight_state(sys, ASLIP_NOMINAL_QB, ASLIP_NOMINAL_QDB)
    return dict(
        system="aslip",
        dt=0.005,
        t_final=1.25,
        process_scale=0.01,
        measurement_scale=0.005,
        reset_scale=0.0,
        initial_mode=1,
        initial_mean=[float(v) for v in mean],
        initial_cov=1e-4,
        trials=50,
        base_seed=0,
        filters=["skf", "jrkf"],
    )


_aslip_cache: Dict[str, AslipSystem] = {}


def _build_aslip():
    if "default" not in _aslip_cache:
        _aslip_cache["default"] = AslipSystem(AslipParams())
    return _aslip_cache["default"]


REGISTRY: Dict[str, SystemEntry] = {
    "constant_flow": SystemEntry(
        "constant_flow", ConstantFlowSystem, lambda s: constant_flow_measurement(), _isotropic_cov,
        _constant_flow_defaults,
    ),
    "aslip": SystemEntry("aslip", _build_aslip, aslip_measurement, _aslip_cov, _aslip_defaults),
}


def get_system(name: str) -> SystemEntry:
    try:
        return REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown system {name!r}; choose from {sorted(REGISTRY)}") from None


__all__ = [
    "AslipParams",
    "AslipSystem",
    "ConstantFlowSystem",
    "REGISTRY",
    "SystemEntry",
    "analytic_saltation",
    "aslip_measurement",
    "constant_flow_measurement",
    "constrained_flight_covariance",
    "flight_state",
    "get_system",
]
