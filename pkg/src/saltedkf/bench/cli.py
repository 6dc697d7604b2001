"""Command-line entry point: ``saltedkf <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from ..errors import HybridError
from ..filters import FilterKind, Kind
from ..integrate import simulate_execution
from .config import ExperimentConfig, load_config
from .experiments import default_order_check, fig1_dataset
from .harness import _fmt, run_monte_carlo, sample_initial_state, trial_rng, write_json


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config, args.system)
    if getattr(args, "trials", None):
        cfg = cfg.replace(trials=args.trials)
    return cfg


def _print_summary(summary: dict) -> None:
    for label, f in summary["filters"].items():
        mse = f["mse_mean"]
        print(f"{label:>8}: mean MSE {mse if mse is None else format(mse, '.6g')}  "
              f"failed {f['n_failed']}/{summary['trials']}")
    for c in summary["comparisons"]:
        p = c["p_value"]
        print(f"{c['a']} vs {c['b']}: {c['a']} lower in {c['a_lower']}/{c['n_pairs']}, "
              f"sign-test p = {p if p is None else format(p, '.4g')}")


def cmd_simulate(args) -> int:
    cfg = _config(args)
    sys_, meas, noise, belief0 = cfg.build()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    events = {}
    rows = []
    for trial in range(cfg.trials):
        x0 = sample_initial_state(sys_, belief0.mode, belief0.mean, belief0.cov, trial_rng(cfg.base_seed, trial, 0))
        traj = simulate_execution(sys_, noise, meas, belief0.mode, x0, cfg.dt, cfg.t_final,
                                  trial_rng(cfg.base_seed, trial, 1), cfg.integrator)
        events[str(trial)] = [{"transition": list(e.transition), "t": e.t_impact} for e in traj.events]
        for k, (t, m, x, y) in enumerate(zip(traj.times, traj.modes, traj.states, traj.measurements)):
            rows.append([trial, k, t, int(m), *sys_.to_common(int(m), x), *y])
    n, mdim = len(rows[0]) - 4 - len(traj.measurements[0]), len(traj.measurements[0])
    header = ["trial", "k", "t", "mode_true"] + [f"x_true_{i}" for i in range(n)] + [f"y_{i}" for i in range(mdim)]
    with open(out / "trials.csv", "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    write_json(out / "summary.json", {"config": cfg.to_dict(), "events": events})
    print(f"simulated {cfg.trials} trial(s) into {out}")
    return 0


def cmd_filter(args) -> int:
    cfg = _config(args)
    kind = FilterKind.parse(args.filter)
    if kind.kind is Kind.PF and args.particles:
        kind = FilterKind(Kind.PF, args.particles)
    summary = run_monte_carlo(cfg.replace(filters=[kind.label]), args.out, workers=args.workers)
    _print_summary(summary)
    return 0


def cmd_montecarlo(args) -> int:
    summary = run_monte_carlo(_config(args), args.out, workers=args.workers)
    _print_summary(summary)
    return 0


def cmd_saltation_check(args) -> int:
    fit = default_order_check(args.system)
    for d, r in zip(fit.deltas, fit.residuals):
        print(f"  |delta| = {d:.3e}  residual = {r:.3e}")
    print(f"{args.system}: {fit.summary()}")
    return 0


def cmd_fig1(args) -> int:
    data = fig1_dataset(n_samples=args.samples, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    np.savetxt(out / "samples.csv", np.hstack([data["samples_before"], data["samples_after"]]),
               delimiter=",", header="x0_before,x1_before,x0_after,x1_after", comments="", fmt="%.17g")
    write_json(out / "covariances.json", {
        k: (v.tolist() if isinstance(v, np.ndarray) else v)
        for k, v in data.items() if not k.startswith("samples")
    })
    print(f"saltation error {data['saltation_error']:.4f}, reset-Jacobian error {data['jacobian_error']:.4f}")
    return 0


def cmd_config(args) -> int:
    json.dump(ExperimentConfig.default(args.system).to_dict(), sys.stdout, indent=2)
    print()
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="saltedkf", description="Hybrid Kalman filtering experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    def add_cfg(sp, with_out=True):
        sp.add_argument("--config", help="JSON experiment config (defaults of --system when omitted)")
        sp.add_argument("--system", default="constant_flow", help="system used when no config is given")
        sp.add_argument("--trials", type=int, help="override the trial count")
        if with_out:
            sp.add_argument("--out", required=True, help="output directory")

    sp = sub.add_parser("simulate", help="ground truth and measurements only")
    add_cfg(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("filter", help="run a single filter over the configured trials")
    add_cfg(sp)
    sp.add_argument("--filter", required=True, help="skf, jrkf, pf or pf:<particles>")
    sp.add_argument("--particles", type=int, help="particle count for --filter pf")
    sp.add_argument("--workers", type=int, default=1)
    sp.set_defaults(func=cmd_filter)

    sp = sub.add_parser("montecarlo", help="run every configured filter and compare them")
    add_cfg(sp)
    sp.add_argument("--workers", type=int, default=1)
    sp.set_defaults(func=cmd_montecarlo)

    sp = sub.add_parser("saltation-check", help="order of the across-event linearization error")
    sp.add_argument("--system", required=True, choices=["constant_flow", "aslip"])
    sp.set_defaults(func=cmd_saltation_check)

    sp = sub.add_parser("fig1", help="sample cloud mapped across the constant-flow guard")
    sp.add_argument("--out", required=True)
    sp.add_argument("--samples", type=int, default=100_000)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_fig1)

    sp = sub.add_parser("config", help="print the default config of a system")
    sp.add_argument("--system", required=True)
    sp.set_defaults(func=cmd_config)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (HybridError, KeyError, OSError, json.JSONDecodeError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
