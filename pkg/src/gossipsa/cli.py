"""Command-line entry point: ``gossipsa <command> --config file.toml``.

Exit codes: 0 pass, 1 configuration or precondition error, 2 divergence,
3 a tolerance check failed.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
from dataclasses import replace

import numpy as np

from . import analysis
from .config import build_experiment, load_config, output_dir
from .engine import RunOptions, replica_seeds, run_ensemble, run_trajectory
from .errors import ConfigurationError, DivergenceError, PreconditionError, SingularityError
from .gossip import validate_scheme

log = logging.getLogger("gossipsa")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_TOLERANCE = 0, 1, 2, 3


def _gain_for(exp):
    g = exp.config.run.gain
    if g is None:
        return None
    if g == "optimal":
        if exp.schedule.regime != "critical":
            raise ConfigurationError("the optimal gain is defined for xi = 1 only")
        h, _ = exp.problem.clt_data()
        return analysis.optimal_gain(h, exp.schedule.gamma_star)[0]
    return np.atleast_2d(np.asarray(g, dtype=float))


def _options(exp, averaging=None):
    run = exp.config.run
    return RunOptions(
        averaging=run.averaging if averaging is None else averaging,
        gain=_gain_for(exp),
        snapshots=run.snapshots,
    )


def cmd_rho(exp, args, out) -> int:
    report = validate_scheme(exp.scheme)
    text = analysis.report_to_json(report)
    print(text)
    (out / "rho.json").write_text(text + "\n")
    if report.rho >= 1.0 - 1e-12:
        log.warning("contraction condition violated: rho = 1, gossip does not contract disagreement")
    return EXIT_OK if report.assumption1_ok else EXIT_CONFIG


def cmd_simulate(exp, args, out) -> int:
    run = exp.config.run
    traj = run_trajectory(
        exp.problem, exp.scheme, exp.schedule, run.n_steps, exp.init, run.root_seed,
        record_at=exp.record_at, options=_options(exp),
    )
    path = out / "trajectory.csv"
    traj.record.to_csv(path)
    print(f"wrote {path}")
    return EXIT_OK


def _final_states_csv(res, star, path):
    d = res.final_theta.shape[-1]
    head = ["run_id", "diverged_at", *[f"mean_{k + 1}" for k in range(d)]]
    if res.final_avg is not None:
        head += [f"avg_mean_{k + 1}" for k in range(d)]
    lines = [",".join(head)]
    mean = res.final_theta.mean(axis=1)
    avg = None if res.final_avg is None else res.final_avg.mean(axis=1)
    for r in range(res.n_runs):
        row = [str(r), str(int(res.diverged_at[r]))]
        row += [repr(float(v)) for v in mean[r]]
        if avg is not None:
            row += [repr(float(v)) for v in avg[r]]
        lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n")


def cmd_montecarlo(exp, args, out) -> int:
    run = exp.config.run
    if run.n_runs < 2:
        raise ConfigurationError("montecarlo needs n_runs >= 2")
    res = run_ensemble(
        exp.problem, exp.scheme, exp.schedule, run.n_steps, exp.init,
        replica_seeds(run.root_seed, run.n_runs), record_at=exp.record_at,
        options=_options(exp), workers=args.threads,
    )
    ok = res.finite
    n_bad = int((~ok).sum())
    if n_bad:
        log.warning("%d of %d replicas diverged and are excluded", n_bad, res.n_runs)
    star = getattr(exp.problem, "theta_star", None)
    _final_states_csv(res, star, out / "final_states.csv")
    summary = {"n_runs": res.n_runs, "n_diverged": n_bad, "n_steps": res.n_steps}
    if star is not None and ok.sum() >= 2 and run.n_steps >= 1:
        z = (res.final_theta[ok].mean(axis=1) - star) / math.sqrt(float(exp.schedule(run.n_steps)))
        analysis.histogram_csv(z, out / "normalized_errors.csv")
        est = analysis.empirical_covariance(z)
        summary["normalized_error_mean"] = est.mean
        summary["normalized_error_cov"] = est.cov
        summary["normalized_error_cov_se"] = est.std_error
        try:
            summary["predicted_cov"] = analysis.predict_clt(exp.problem, exp.schedule).sigma
        except ValueError as exc:
            summary["predicted_cov"] = None
            log.info("no prediction: %s", exc)
    if res.sq_error_per_node is not None and len(res.steps) and ok.any():
        summary["median_sq_error_per_node_final"] = float(np.median(res.sq_error_per_node[ok, -1]))
    text = analysis.report_to_json(summary, out / "summary.json")
    print(text)
    return EXIT_OK


def cmd_clt(exp, args, out) -> int:
    run = exp.config.run
    if exp.config.run.init == "box":
        init = None  # near-theta* start is the default for this check
    else:
        init = exp.init
    report = analysis.clt_check(
        exp.problem, exp.scheme, exp.schedule, run.n_steps, run.n_runs, run.root_seed,
        init=init, workers=args.threads,
    )
    analysis.histogram_csv(report.normalized_errors, out / "normalized_errors.csv")
    print(analysis.report_to_json(report, out / "clt.json"))
    return EXIT_OK if report.passed else EXIT_TOLERANCE


def cmd_rate(exp, args, out) -> int:
    run = exp.config.run
    init = None if run.init == "box" and getattr(exp.problem, "theta_star", None) is not None else exp.init
    report = analysis.disagreement_rate_check(
        exp.problem, exp.scheme, exp.schedule, run.n_steps, run.n_runs, run.root_seed,
        init=init, record_at=exp.record_at, workers=args.threads,
    )
    print(analysis.report_to_json(report, out / "rate.json"))
    return EXIT_OK if report.passed else EXIT_TOLERANCE


def cmd_efficiency(exp, args, out) -> int:
    if not hasattr(exp.problem, "fisher_information"):
        raise ConfigurationError("efficiency needs a localization problem")
    try:
        report = analysis.efficiency_report(exp.problem, exp.schedule.gamma0)
    except ValueError as exc:
        raise PreconditionError(str(exc)) from None
    print(analysis.report_to_json(report, out / "efficiency.json"))
    return EXIT_OK if report.psd and report.factorization_error < 1e-8 else EXIT_TOLERANCE


COMMANDS = {
    "rho": cmd_rho,
    "simulate": cmd_simulate,
    "montecarlo": cmd_montecarlo,
    "clt": cmd_clt,
    "rate": cmd_rate,
    "efficiency": cmd_efficiency,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gossipsa", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__name__.replace("cmd_", ""))
        p.add_argument("--config", required=True, help="experiment TOML file")
        p.add_argument("--threads", type=int, default=1, help="worker processes for replicas")
        p.add_argument("--out", default=None, help="output directory (overrides the config)")
        p.add_argument("--seed", type=int, default=None, help="root seed (overrides the config)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigurationError("--seed must be an unsigned 64-bit integer")
            cfg = replace(cfg, run=replace(cfg.run, root_seed=args.seed))
        if args.threads < 1:
            raise ConfigurationError("--threads must be at least 1")
        exp = build_experiment(cfg)
        out = output_dir(cfg, args.out)
        return COMMANDS[args.command](exp, args, out)
    except (ConfigurationError, PreconditionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, SingularityError) as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
