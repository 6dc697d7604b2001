"""Monte-Carlo trials: ground truth, every configured filter, and persisted results."""

from __future__ import annotations

import itertools
import json
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .. import __version__
from ..errors import ContractViolation, HybridError
from ..filters import Kind, ParticleSet, pf_estimate, pf_step, skf_step
from ..integrate import sample_gaussian, simulate_execution
from .config import ExperimentConfig
from .stats import sign_test, squared_errors

_MAX_REJECTIONS = 100
_STREAM_INIT, _STREAM_TRUTH = 0, 1


def trial_rng(base_seed: int, trial: int, stream: int) -> np.random.Generator:
    """Counter-based stream: the same (seed, trial, stream) always gives the same draws."""
    return np.random.default_rng(np.random.SeedSequence(entropy=base_seed, spawn_key=(trial, stream)))


def _filter_stream(label: str) -> int:
    return 2 + zlib.crc32(label.encode())


@dataclass
class FilterRun:
    """Output of one filter on one trial, rows ``k = 1..K``."""

    label: str
    modes: np.ndarray
    estimates: np.ndarray
    sq_err: np.ndarray
    runtime: float
    error: Optional[str] = None
    event_times: List[float] = field(default_factory=list)

    @property
    def mse(self) -> float:
        return float(np.mean(self.sq_err)) if self.error is None else float("nan")


@dataclass
class TrialRecord:
    trial: int
    times: np.ndarray
    modes: np.ndarray
    states: np.ndarray        # common chart, rows k = 0..K
    measurements: np.ndarray
    event_times: List[float]
    runs: Dict[str, FilterRun]

    @property
    def mse(self) -> Dict[str, float]:
        return {k: r.mse for k, r in self.runs.items()}


def sample_initial_state(sys, mode, mean, cov, rng) -> np.ndarray:
    """Draw from ``N(mean, cov)``, projected by the system constraint, rejecting guard violations."""
    for _ in range(_MAX_REJECTIONS):
        x = sys.constrain(mode, mean + sample_gaussian(rng, cov, 1)[0])
        if sys.in_domain(mode, 0.0, x):
            return x
    raise ContractViolation(f"no valid initial state after {_MAX_REJECTIONS} draws")


def _run_filter(kind, sys, meas, noise, belief0, traj, cfg, rng) -> FilterRun:
    K = len(traj.times) - 1
    n = traj.states[0].size
    modes = np.full(K, -1)
    est = np.full((K, n), np.nan)
    events: List[float] = []
    observer = lambda b, ev: events.append(float(ev.t_impact))  # noqa: E731
    error = None
    start = time.perf_counter()
    try:
        if kind.kind is Kind.PF:
            pset = ParticleSet.from_gaussian(sys, belief0.mode, belief0.mean, belief0.cov, kind.particles, rng)
        belief = belief0
        for k in range(K):
            t_k, y = traj.times[k], traj.measurements[k + 1]
            if kind.kind is Kind.PF:
                pset = pf_step(sys, noise, meas, pset, t_k, cfg.dt, y, rng, cfg.integrator)
                modes[k], est[k] = pf_estimate(pset, sys)
            else:
                belief = skf_step(sys, noise, meas, belief, t_k, cfg.dt, y, kind, cfg.integrator, observer)
                modes[k], est[k] = belief.mode, sys.to_common(belief.mode, belief.mean)
    except (HybridError, np.linalg.LinAlgError) as exc:
        error = f"{type(exc).__name__}: {exc}"
    runtime = time.perf_counter() - start
    truth = np.array([sys.to_common(m, x) for m, x in zip(traj.modes[1:], traj.states[1:])])
    return FilterRun(kind.label, modes, est, squared_errors(truth, est), runtime, error, events)


def run_trial(cfg: ExperimentConfig, trial: int) -> TrialRecord:
    """Simulate one ground-truth execution and run every configured filter on it."""
    sys, meas, noise, belief0 = cfg.build()
    x0 = sample_initial_state(sys, belief0.mode, belief0.mean, belief0.cov,
                              trial_rng(cfg.base_seed, trial, _STREAM_INIT))
    traj = simulate_execution(sys, noise, meas, belief0.mode, x0, cfg.dt, cfg.t_final,
                              trial_rng(cfg.base_seed, trial, _STREAM_TRUTH), cfg.integrator)
    runs = {}
    for kind in cfg.filter_kinds:
        rng = trial_rng(cfg.base_seed, trial, _filter_stream(kind.label))
        runs[kind.label] = _run_filter(kind, sys, meas, noise, belief0, traj, cfg, rng)
    states = np.array([sys.to_common(m, x) for m, x in zip(traj.modes, traj.states)])
    return TrialRecord(trial, traj.times, traj.modes, states, np.array(traj.measurements),
                       [float(e.t_impact) for e in traj.events], runs)


def _run_one(args):
    cfg, trial = args
    return run_trial(cfg, trial)


def run_trials(cfg: ExperimentConfig, workers: int = 1) -> List[TrialRecord]:
    jobs = [(cfg, i) for i in range(cfg.trials)]
    if workers <= 1:
        records = [_run_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    return sorted(records, key=lambda r: r.trial)


def _fmt(v) -> str:
    return repr(int(v)) if isinstance(v, (int, np.integer)) else format(float(v), ".17g")


def csv_header(cfg: ExperimentConfig, records: Sequence[TrialRecord]) -> List[str]:
    n = records[0].states.shape[1]
    m = records[0].measurements.shape[1]
    cols = ["trial", "k", "t", "mode_true"]
    cols += [f"x_true_{i}" for i in range(n)] + [f"y_{i}" for i in range(m)]
    for label in cfg.filters:
        cols += [f"{label}_mode_est"] + [f"{label}_x_est_{i}" for i in range(n)] + [f"{label}_sq_err"]
    return cols


def write_trials_csv(path, cfg: ExperimentConfig, records: Sequence[TrialRecord]) -> None:
    """Rows ``k = 1..K`` of every trial, sorted by (trial, k), floats to 17 significant digits."""
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(csv_header(cfg, records)) + "\n")
        for rec in sorted(records, key=lambda r: r.trial):
            for k in range(1, len(rec.times)):
                row = [rec.trial, k, rec.times[k], int(rec.modes[k])]
                row += list(rec.states[k]) + list(rec.measurements[k])
                for label in cfg.filters:
                    run = rec.runs[label]
                    row += [int(run.modes[k - 1])] + list(run.estimates[k - 1]) + [run.sq_err[k - 1]]
                fh.write(",".join(_fmt(v) for v in row) + "\n")


def _finite_or_none(v):
    return float(v) if np.isfinite(v) else None


def summarize(cfg: ExperimentConfig, records: Sequence[TrialRecord]) -> dict:
    """Deterministic aggregate: per-filter MSE distributions and pairwise sign tests."""
    filters = {}
    for label in cfg.filters:
        per = np.array([r.runs[label].mse for r in records])
        ok = per[np.isfinite(per)]
        filters[label] = {
            "mse_mean": _finite_or_none(ok.mean()) if ok.size else None,
            "mse_median": _finite_or_none(np.median(ok)) if ok.size else None,
            "mse_std": _finite_or_none(ok.std(ddof=1)) if ok.size > 1 else None,
            "n_ok": int(ok.size),
            "n_failed": int(per.size - ok.size),
            "failures": {str(r.trial): r.runs[label].error for r in records if r.runs[label].error},
            "per_trial_mse": [_finite_or_none(v) for v in per],
        }
    comparisons = []
    for a, b in itertools.combinations(cfg.filters, 2):
        da = np.array([r.runs[a].mse for r in records])
        db = np.array([r.runs[b].mse for r in records])
        both = np.isfinite(da) & np.isfinite(db)
        diff = da[both] - db[both]
        comparisons.append({
            "a": a,
            "b": b,
            "n_pairs": int(diff.size),
            "a_lower": int(np.sum(diff < 0)),
            "b_lower": int(np.sum(diff > 0)),
            "median_diff": _finite_or_none(np.median(diff)) if diff.size else None,
            "p_value": sign_test(diff) if diff.size else None,
        })
    return {
        "version": __version__,
        "config": cfg.to_dict(),
        "trials": len(records),
        "filters": filters,
        "comparisons": comparisons,
        "events": {
            str(r.trial): {
                "truth": r.event_times,
                **{label: r.runs[label].event_times for label in cfg.filters},
            }
            for r in records
        },
    }


def timing(cfg: ExperimentConfig, records: Sequence[TrialRecord]) -> dict:
    out = {}
    for label in cfg.filters:
        rt = np.array([r.runs[label].runtime for r in records])
        out[label] = {"mean_s": float(rt.mean()), "total_s": float(rt.sum()), "per_trial_s": rt.tolist()}
    return out


def write_json(path, data) -> None:
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def run_monte_carlo(cfg: ExperimentConfig, out_dir=None, workers: int = 1) -> dict:
    """Run all trials and return the summary; with ``out_dir`` also write it to disk.

    ``summary.json`` and ``trials.csv`` depend only on the config; wall-clock
    figures go to ``timing.json`` so the other two stay byte-identical across
    runs and worker counts.
    """
    records = run_trials(cfg, workers)
    summary = summarize(cfg, records)
    summary["timing"] = timing(cfg, records)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_trials_csv(out / "trials.csv", cfg, records)
        write_json(out / "summary.json", {k: v for k, v in summary.items() if k != "timing"})
        write_json(out / "timing.json", summary["timing"])
    return summary
