"""How often a uniform start on [0, 50]^2 reaches the source within the horizon.

For many root seeds, runs the localization recursion from a uniform start
and reports the fraction of trajectories whose square error per node drops
by at least a factor 100 between n = 100 and the last step.
"""
import argparse
from pathlib import Path

import numpy as np

from gossipsa.config import build_experiment, load_config
from gossipsa.engine import RunOptions, replica_seeds, run_ensemble

ROOT = Path(__file__).resolve().parents[1]

parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
parser.add_argument("--config", default=ROOT / "configs" / "localization.toml")
parser.add_argument("--runs", type=int, default=200)
parser.add_argument("--seed", type=int, default=1)
args = parser.parse_args()

exp = build_experiment(load_config(args.config))
n = exp.config.run.n_steps
res = run_ensemble(
    exp.problem, exp.scheme, exp.schedule, n, exp.init, replica_seeds(args.seed, args.runs),
    record_at=[100, n], options=RunOptions(averaging=False, record_lyapunov=False),
)
e = res.sq_error_per_node
drop = e[:, 0] / e[:, 1]
print(f"replicas: {args.runs}, diverged: {(res.diverged_at > 0).sum()}")
print(f"drop >= 100: {np.mean(drop >= 100):.3f}")
print(f"final square error per node < 1: {np.mean(e[:, 1] < 1):.3f}")
print(f"median final square error per node: {np.median(e[:, 1]):.3g}")
