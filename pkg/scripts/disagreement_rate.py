"""Normalized disagreement gamma_n^{-2} E|theta_perp,n|^2 for pairwise and broadcast gossip."""
import argparse

import numpy as np

from gossipsa.analysis import disagreement_rate_check
from gossipsa.engine import StepSchedule
from gossipsa.gossip import Broadcast, NetworkGraph, Pairwise
from gossipsa.problems import QuadraticGaussianProblem

parser = argparse.ArgumentParser(description=__doc__)
parser.add_argument("--steps", type=int, default=100_000)
parser.add_argument("--runs", type=int, default=200)
parser.add_argument("--seed", type=int, default=7)
args = parser.parse_args()

problem = QuadraticGaussianProblem(np.eye(1), np.zeros(1), 1.0, 5)
schedule = StepSchedule(0.5, 0.8)
graph = NetworkGraph.complete(5)
for name, scheme in [("pairwise", Pairwise(graph)), ("broadcast", Broadcast(graph, 0.5))]:
    r = disagreement_rate_check(problem, scheme, schedule, args.steps, args.runs, args.seed)
    print(f"{name}: rho = {r.rho:.4f}, C = {r.c_hat:.4f}, bound = {r.bound:.3f}, flat = {r.flat}")
    for n, v, se in zip(r.steps[-8:], r.normalized_disagreement[-8:], r.std_error[-8:]):
        print(f"  n = {n:>7d}  {v:.4f} +- {se:.4f}")
