"""Experiment configuration: a JSON document mirroring :class:`ExperimentConfig`."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import List, Optional, Union

import numpy as np

from ..errors import ContractViolation
from ..filters import FilterKind
from ..hybrid import GaussianBelief, NoiseModel
from ..integrate import IntegratorConfig
from ..systems import get_system

SEED_ENV = "SKF_SEED"


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one Monte-Carlo batch.

    ``process_scale`` multiplies ``dt**2 * I`` to give the per-step process
    covariance; ``measurement_scale`` and ``reset_scale`` multiply the identity.
    ``initial_cov`` is either a scalar (handed to the system's initial-covariance
    rule) or a full matrix.
    """

    system: str
    dt: float
    t_final: float
    process_scale: float
    measurement_scale: float
    initial_mode: int
    initial_mean: List[float]
    initial_cov: Union[float, List[List[float]]]
    reset_scale: float = 0.0
    trials: int = 1
    base_seed: int = 0
    filters: List[str] = field(default_factory=lambda: ["skf", "jrkf"])
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)

    def __post_init__(self):
        get_system(self.system)
        if not self.dt > 0:
            raise ContractViolation("dt must be positive")
        if not self.t_final >= self.dt:
            raise ContractViolation("t_final must be at least dt")
        if int(self.trials) < 1:
            raise ContractViolation("need at least one trial")
        if min(self.process_scale, self.measurement_scale, self.reset_scale) < 0:
            raise ContractViolation("noise scales must be nonnegative")
        if not self.filters:
            raise ContractViolation("no filters configured")
        kinds = [FilterKind.parse(f) for f in self.filters]
        labels = [k.label for k in kinds]
        if len(set(labels)) != len(labels):
            raise ContractViolation(f"duplicate filters in {labels}")
        object.__setattr__(self, "filters", labels)
        object.__setattr__(self, "trials", int(self.trials))
        object.__setattr__(self, "base_seed", int(self.base_seed))
        object.__setattr__(self, "initial_mode", int(self.initial_mode))
        object.__setattr__(self, "initial_mean", [float(v) for v in self.initial_mean])
        if np.isscalar(self.initial_cov):
            object.__setattr__(self, "initial_cov", float(self.initial_cov))
        else:
            object.__setattr__(self, "initial_cov", np.asarray(self.initial_cov, dtype=float).tolist())

    @property
    def steps(self) -> int:
        return int(round(self.t_final / self.dt))

    @property
    def filter_kinds(self) -> List[FilterKind]:
        return [FilterKind.parse(f) for f in self.filters]

    def build(self):
        """Instantiate ``(system, measurement, noise, initial belief)``."""
        entry = get_system(self.system)
        sys = entry.build()
        meas = entry.measurement(sys)
        noise = NoiseModel.isotropic(
            sys, self.dt, self.process_scale * self.dt**2, self.measurement_scale, meas.dims,
            reset_scale=self.reset_scale,
        )
        mean = sys.check_state(self.initial_mode, self.initial_mean)
        if np.isscalar(self.initial_cov):
            cov = entry.initial_covariance(sys, self.initial_mode, mean, float(self.initial_cov))
        else:
            cov = np.asarray(self.initial_cov, dtype=float)
        return sys, meas, noise, GaussianBelief(self.initial_mode, mean, cov)

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["integrator"] = self.integrator.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: dict, apply_env: bool = True) -> "ExperimentConfig":
        """Fill missing keys from the system defaults; ``SKF_SEED`` overrides the seed."""
        if "system" not in data:
            raise ContractViolation("config needs a 'system' entry")
        merged = get_system(data["system"]).defaults()
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ContractViolation(f"unknown config keys {sorted(unknown)}")
        merged.update(data)
        integ = data.get("integrator")
        if not isinstance(integ, IntegratorConfig):
            integ = IntegratorConfig.from_dict(integ)
        merged["integrator"] = integ
        if apply_env and os.environ.get(SEED_ENV, "").strip():
            try:
                merged["base_seed"] = int(os.environ[SEED_ENV])
            except ValueError:
                raise ContractViolation(f"{SEED_ENV} must be an integer") from None
        return cls(**merged)

    @classmethod
    def default(cls, system: str, **overrides) -> "ExperimentConfig":
        return cls.from_dict({"system": system, **overrides}, apply_env=False)

    def replace(self, **changes) -> "ExperimentConfig":
        d = self.to_dict()
        d.update(changes)
        return ExperimentConfig.from_dict(d, apply_env=False)


def load_config(path: Optional[Union[str, Path]], system: Optional[str] = None) -> ExperimentConfig:
    """Read a JSON config, or the defaults of ``system`` when ``path`` is None."""
    if path is None:
        return ExperimentConfig.from_dict({"system": system or "constant_flow"})
    with open(path) as fh:
        data = json.load(fh)
    return ExperimentConfig.from_dict(data)
