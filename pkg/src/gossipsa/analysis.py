"""Asymptotic predictions (covariances, gains, efficiency) and Monte-Carlo checks.

Scalings. For gamma_n = gamma0 / n**xi:

* ``sigma`` is the limit covariance of gamma_n^{-1/2}(<theta_n> - theta*);
* ``sigma_avg`` is the limit covariance of sqrt(n)(avg_n - theta*), defined
  only for xi < 1.

In the critical regime (xi = 1, gamma* = gamma0) the covariance of
sqrt(n)(<theta_n> - theta*) solves
``(2 gamma* H + I) S + S (2 gamma* H + I)^T = -2 gamma*^2 Upsilon``
and ``sigma = S / gamma*``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, is_dataclass

import numpy as np

from .engine import (
    EnsembleResult,
    NearStarInit,
    RunOptions,
    StepSchedule,
    log_record_plan,
    replica_seeds,
    run_ensemble,
)
from .errors import PreconditionError
from .gossip import GossipScheme, contraction_coefficient, validate_scheme
from .problems import LocalizationProblem, ProblemModel, check_clt_data

PSD_TOL = 1e-10


def _as_matrix(x) -> np.ndarray:
    return np.atleast_2d(np.asarray(x, dtype=float))


def _sym(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def is_psd(m, tol: float = PSD_TOL) -> bool:
    m = _as_matrix(m)
    return bool(np.allclose(m, m.T, atol=tol) and np.linalg.eigvalsh(_sym(m)).min() >= -tol)


def _check_hurwitz(h: np.ndarray, what: str = "H"):
    if np.linalg.eigvals(h).real.max() >= 0:
        raise ValueError(f"{what} must be Hurwitz (all eigenvalues with negative real part)")


def _check_square_pair(h, u):
    if h.shape[0] != h.shape[1] or u.shape != h.shape:
        raise ValueError("H and Upsilon must be square matrices of the same size")


def _vec_solve(h: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve h S + S h^T = rhs via the d^2 x d^2 Kronecker system."""
    d = h.shape[0]
    eye = np.eye(d)
    op = np.kron(eye, h) + np.kron(h, eye)
    s = np.linalg.solve(op, rhs.reshape(-1, order="F")).reshape(d, d, order="F")
    return _sym(s)


def lyapunov_residual(h, sigma, u) -> float:
    h, sigma, u = map(_as_matrix, (h, sigma, u))
    return float(np.abs(h @ sigma + sigma @ h.T + u).max())


def solve_lyapunov(h, u) -> np.ndarray:
    """Sigma with H Sigma + Sigma H^T = -Upsilon, for Hurwitz H."""
    h, u = _as_matrix(h), _as_matrix(u)
    _check_square_pair(h, u)
    _check_hurwitz(h)
    return _vec_solve(h, -u)


def stability_margin(h) -> float:
    """L such that -L is the largest real part of the spectrum of H."""
    return float(-np.linalg.eigvals(_as_matrix(h)).real.max())


def solve_lyapunov_critical(h, u, gamma_star: float) -> np.ndarray:
    """Covariance of sqrt(n)(<theta_n> - theta*) for gamma_n = gamma*/n.

    Requires gamma* > 1/(2L), i.e. 2 gamma* H + I Hurwitz.
    """
    h, u = _as_matrix(h), _as_matrix(u)
    _check_square_pair(h, u)
    if gamma_star <= 0:
        raise ValueError("gamma* must be positive")
    margin = stability_margin(h)
    if margin <= 0 or gamma_star <= 1.0 / (2.0 * margin):
        raise ValueError(
            f"stability margin violated: gamma* = {gamma_star} must exceed 1/(2L) with L = {margin}"
        )
    shifted = 2.0 * gamma_star * h + np.eye(h.shape[0])
    return _vec_solve(shifted, -2.0 * gamma_star**2 * u)


def averaged_covariance(h, u) -> np.ndarray:
    """H^{-1} Upsilon H^{-T}."""
    h, u = _as_matrix(h), _as_matrix(u)
    _check_square_pair(h, u)
    if np.linalg.cond(h) > 1e14:
        raise ValueError("H is singular")
    hinv = np.linalg.inv(h)
    return _sym(hinv @ u @ hinv.T)


def optimal_gain(h, gamma_star: float, u=None):
    """(Gamma*, Sigma*) with Gamma* = -H^{-1}/gamma* and Sigma* = H^{-1} U H^{-T}/gamma*.

    Sigma* is None when Upsilon is not supplied.
    """
    h = _as_matrix(h)
    if gamma_star <= 0:
        raise ValueError("gamma* must be positive")
    if np.linalg.cond(h) > 1e14:
        raise ValueError("H is singular")
    gain = -np.linalg.inv(h) / gamma_star
    sigma_star = None if u is None else averaged_covariance(h, u) / gamma_star
    return gain, sigma_star


# --------------------------------------------------------------------------
# empirical statistics


@dataclass
class CovarianceEstimate:
    mean: np.ndarray
    cov: np.ndarray
    n_samples: int
    std_error: np.ndarray  # jackknife standard errors of the covariance entries


def empirical_covariance(samples) -> CovarianceEstimate:
    """Sample mean, Bessel-corrected covariance and leave-one-out jackknife errors."""
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    m = x.shape[0]
    if m < 2:
        raise ValueError("need at least 2 samples")
    mean = x.mean(axis=0)
    dev = x - mean
    scatter = dev.T @ dev
    cov = _sym(scatter / (m - 1))
    if m < 3:
        se = np.full_like(cov, np.nan)
    else:
        # leave-one-out scatter: S - m/(m-1) dev_i dev_i^T
        outer = dev[:, :, None] * dev[:, None, :]
        loo = (scatter[None] - (m / (m - 1)) * outer) / (m - 2)
        se = np.sqrt((m - 1) / m * np.sum((loo - loo.mean(axis=0)) ** 2, axis=0))
    return CovarianceEstimate(mean=mean, cov=cov, n_samples=m, std_error=se)


def frobenius_relative_error(estimate, target) -> float:
    target = _as_matrix(target)
    return float(np.linalg.norm(_as_matrix(estimate) - target) / np.linalg.norm(target))


def frobenius_ratio(estimate, target) -> float:
    return float(np.linalg.norm(_as_matrix(estimate)) / np.linalg.norm(_as_matrix(target)))


# --------------------------------------------------------------------------
# CLT predictions


@dataclass
class CltPrediction:
    regime: str
    gamma_star: float | None
    sigma: np.ndarray
    sigma_avg: np.ndarray | None
    optimal_gain: np.ndarray | None = None
    sigma_star: np.ndarray | None = None
    residual: float = 0.0


def predict_clt(problem: ProblemModel, schedule: StepSchedule, gain=None) -> CltPrediction:
    """Asymptotic covariances for the consensus iterate and its running mean.

    With a gain matrix, the drift and noise seen by the recursion are
    Gamma H and Gamma Upsilon Gamma^T.
    """
    h, u = check_clt_data(problem)
    if gain is not None:
        g = _as_matrix(gain)
        h, u = g @ h, g @ u @ g.T
    if schedule.regime == "critical":
        gs = schedule.gamma_star
        scaled = solve_lyapunov_critical(h, u, gs)
        shifted = 2.0 * gs * h + np.eye(h.shape[0])
        residual = lyapunov_residual(shifted, scaled, 2.0 * gs**2 * u)
        base_h, base_u = check_clt_data(problem)
        gamma_opt, sigma_star = optimal_gain(base_h, gs, base_u)
        return CltPrediction(
            regime="critical",
            gamma_star=gs,
            sigma=scaled / gs,
            sigma_avg=None,
            optimal_gain=gamma_opt,
            sigma_star=sigma_star,
            residual=residual,
        )
    sigma = solve_lyapunov(h, u)
    return CltPrediction(
        regime="subcritical",
        gamma_star=None,
        sigma=sigma,
        sigma_avg=averaged_covariance(h, u),
        residual=lyapunov_residual(h, sigma, u),
    )


@dataclass(frozen=True)
class CltTolerances:
    ratio_low: float = 0.8
    ratio_high: float = 1.2
    synchrony_fraction: float = 0.1
    max_divergent_fraction: float = 0.01
    frobenius_rel: float | None = None  # optional extra gate on the relative error


@dataclass
class CltReport:
    prediction: CltPrediction
    n_runs: int
    n_steps: int
    n_diverged: int
    consensus: CovarianceEstimate | None
    averaged: CovarianceEstimate | None
    ratio: float
    frobenius_error: float
    ratio_avg: float | None
    frobenius_error_avg: float | None
    synchrony_median: float
    synchrony_limit: float
    tolerances: CltTolerances
    normalized_errors: np.ndarray = field(repr=False)
    notes: list[str] = field(default_factory=list)

    @property
    def divergent_fraction(self) -> float:
        return self.n_diverged / self.n_runs

    @property
    def checks(self) -> dict[str, bool]:
        t = self.tolerances
        out = {
            "divergence": self.divergent_fraction <= t.max_divergent_fraction,
            "ratio": t.ratio_low <= self.ratio <= t.ratio_high,
            "synchrony": self.synchrony_median < self.synchrony_limit,
        }
        if self.ratio_avg is not None:
            out["ratio_avg"] = t.ratio_low <= self.ratio_avg <= t.ratio_high
        if t.frobenius_rel is not None:
            out["frobenius"] = self.frobenius_error <= t.frobenius_rel
        return out

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def require_doubly_stochastic(scheme: GossipScheme):
    if not validate_scheme(scheme).doubly_stochastic:
        raise PreconditionError("doubly stochastic required: some gossip matrices have column sums != 1")


def clt_check(
    problem: ProblemModel,
    scheme: GossipScheme,
    schedule: StepSchedule,
    n_steps: int,
    n_runs: int,
    root_seed: int,
    init=None,
    tolerances: CltTolerances | None = None,
    workers: int = 1,
    ensemble: EnsembleResult | None = None,
) -> CltReport:
    """Compare Monte-Carlo fluctuations at the final step with the predicted covariances.

    ``init`` defaults to theta* plus a uniform perturbation of half-width
    0.1 * sqrt(gamma_1). A precomputed ``ensemble`` may be passed in.
    """
    require_doubly_stochastic(scheme)
    prediction = predict_clt(problem, schedule)
    tolerances = tolerances or CltTolerances()
    star = problem.theta_star
    if ensemble is None:
        init = init or NearStarInit(0.1 * math.sqrt(float(schedule(1))))
        ensemble = run_ensemble(
            problem, scheme, schedule, n_steps, init, replica_seeds(root_seed, n_runs),
            record_at=[n_steps] if n_steps >= 1 else [],
            options=RunOptions(averaging=schedule.regime == "subcritical", record_lyapunov=False),
            workers=workers,
        )
    n_steps = ensemble.n_steps
    ok = ensemble.finite
    theta = ensemble.final_theta[ok]
    scale = 1.0 / math.sqrt(float(schedule(n_steps)))
    mean = theta.mean(axis=1)
    z = scale * (mean - star)
    sync = scale * np.linalg.norm(theta - mean[:, None, :], axis=-1).max(axis=1)
    notes = []
    if prediction.regime == "critical":
        notes.append(
            "critical regime: covariance solved from the shifted equation with right-hand side "
            "-2 gamma*^2 Upsilon and rescaled by 1/gamma*"
        )

    consensus = empirical_covariance(z) if len(z) >= 2 else None
    averaged = None
    ratio_avg = err_avg = None
    if prediction.sigma_avg is not None and ensemble.final_avg is not None and len(z) >= 2:
        za = math.sqrt(n_steps) * (ensemble.final_avg[ok].mean(axis=1) - star)
        averaged = empirical_covariance(za)
        ratio_avg = frobenius_ratio(averaged.cov, prediction.sigma_avg)
        err_avg = frobenius_relative_error(averaged.cov, prediction.sigma_avg)
    nan = float("nan")
    return CltReport(
        prediction=prediction,
        n_runs=ensemble.n_runs,
        n_steps=n_steps,
        n_diverged=int((~ok).sum()),
        consensus=consensus,
        averaged=averaged,
        ratio=frobenius_ratio(consensus.cov, prediction.sigma) if consensus else nan,
        frobenius_error=frobenius_relative_error(consensus.cov, prediction.sigma) if consensus else nan,
        ratio_avg=ratio_avg,
        frobenius_error_avg=err_avg,
        synchrony_median=float(np.median(sync)) if len(sync) else nan,
        synchrony_limit=tolerances.synchrony_fraction * math.sqrt(np.linalg.norm(prediction.sigma, 2)),
        tolerances=tolerances,
        normalized_errors=z,
        notes=notes,
    )


# --------------------------------------------------------------------------
# disagreement rate


@dataclass
class MomentReport:
    steps: np.ndarray
    normalized_disagreement: np.ndarray
    std_error: np.ndarray
    noise_disagreement: np.ndarray
    c_hat: float
    rho: float
    bound: float
    n_runs: int
    n_diverged: int
    degenerate: bool
    flat: bool | None
    notes: list[str] = field(default_factory=list)

    @property
    def bound_ok(self) -> bool:
        tail = slice(-5, None)
        limit = self.bound + 3.0 * self.std_error[tail]
        return bool(np.all(self.normalized_disagreement[tail] <= limit))

    @property
    def passed(self) -> bool:
        return self.bound_ok and self.flat is not False and self.n_diverged == 0


def flatness(steps, values, start: int = 1000) -> bool | None:
    """Last value at most twice the median over steps >= start; None if too few points."""
    sel = np.asarray(steps) >= start
    v = np.asarray(values)[sel]
    if v.size < 3:
        return None
    return bool(v[-1] <= 2.0 * np.median(v))


def disagreement_rate_check(
    problem: ProblemModel,
    scheme: GossipScheme,
    schedule: StepSchedule,
    n_steps: int,
    n_runs: int,
    root_seed: int,
    init=None,
    record_at=None,
    workers: int = 1,
    ensemble: EnsembleResult | None = None,
) -> MomentReport:
    """Compare gamma_n^{-2} E|theta_perp,n|^2 with rho C / (1 - sqrt(rho))^2.

    C is the largest Monte-Carlo estimate of E|Y_perp,n|^2 over the recorded
    steps in the second half of the run.
    """
    rho = contraction_coefficient(scheme)
    if rho >= 1.0 - 1e-12:
        raise PreconditionError("rho<1 required: the gossip scheme does not contract disagreement")
    if ensemble is None:
        if init is None:
            star = getattr(problem, "theta_star", None)
            if star is None:
                raise PreconditionError("an explicit init is required without theta*")
            init = NearStarInit(1.0)
        ensemble = run_ensemble(
            problem, scheme, schedule, n_steps, init, replica_seeds(root_seed, n_runs),
            record_at=log_record_plan(n_steps) if record_at is None else record_at,
            options=RunOptions(averaging=False, record_lyapunov=False),
            workers=workers,
        )
    ok = ensemble.finite
    steps = ensemble.steps
    gam = schedule(steps)
    d2 = ensemble.disagreement_norm[ok] ** 2 / gam**2
    m = d2.shape[0]
    normalized = d2.mean(axis=0)
    # jackknife error of a mean is the usual standard error
    se = d2.std(axis=0, ddof=1) / math.sqrt(m) if m > 1 else np.full_like(normalized, np.nan)
    ydis = ensemble.noise_disagreement_sq[ok].mean(axis=0)
    tail = steps >= steps[-1] / 2 if len(steps) else np.zeros(0, bool)
    c_hat = float(ydis[tail].max()) if tail.any() else float("nan")
    degenerate = rho <= 1e-12
    notes = []
    if degenerate:
        notes.append("rho = 0: bound trivially governed by within-step noise")
    return MomentReport(
        steps=steps,
        normalized_disagreement=normalized,
        std_error=se,
        noise_disagreement=ydis,
        c_hat=c_hat,
        rho=rho,
        bound=rho * c_hat / (1.0 - math.sqrt(rho)) ** 2,
        n_runs=ensemble.n_runs,
        n_diverged=int((~ok).sum()),
        degenerate=degenerate,
        flat=flatness(steps, normalized),
        notes=notes,
    )


# --------------------------------------------------------------------------
# efficiency


@dataclass
class EfficiencyReport:
    fisher: np.ndarray
    inverse_fisher: np.ndarray
    sigma: np.ndarray
    difference: np.ndarray
    factorization: np.ndarray
    factorization_error: float
    min_eigenvalue: float
    n_agents: int
    gamma_star: float

    @property
    def psd(self) -> bool:
        return self.min_eigenvalue >= -PSD_TOL


def efficiency_from_fisher(fisher, n_agents: int, gamma_star: float) -> EfficiencyReport:
    """Critical-regime covariance vs the inverse Fisher information.

    Sigma = gamma*^2 F/N^2 (2 gamma* F/N - I)^{-1}, and
    Sigma - F^{-1} = F^{-1} (2 gamma* F/N - I)^{-1} (gamma* F/N - I)^2.
    """
    f = _as_matrix(fisher)
    if not is_psd(f) or np.linalg.eigvalsh(_sym(f)).min() <= 0:
        raise ValueError("the Fisher information must be symmetric positive definite")
    lam = np.linalg.eigvalsh(_sym(f)).min()
    if gamma_star <= n_agents / (2.0 * lam):
        raise ValueError(f"gamma* must exceed N/(2 lambda_min(F)) = {n_agents / (2.0 * lam)}")
    d = f.shape[0]
    eye = np.eye(d)
    scaled = gamma_star * f / n_agents
    sigma = solve_lyapunov_critical(-f / n_agents, f / n_agents**2, gamma_star)
    finv = np.linalg.inv(f)
    diff = sigma - finv
    fact = finv @ np.linalg.inv(2.0 * scaled - eye) @ (scaled - eye) @ (scaled - eye)
    return EfficiencyReport(
        fisher=f,
        inverse_fisher=_sym(finv),
        sigma=sigma,
        difference=_sym(diff),
        factorization=fact,
        factorization_error=float(np.abs(diff - fact).max()),
        min_eigenvalue=float(np.linalg.eigvalsh(_sym(diff)).min()),
        n_agents=n_agents,
        gamma_star=gamma_star,
    )


def efficiency_report(problem: LocalizationProblem, gamma_star: float) -> EfficiencyReport:
    f = problem.fisher_information()
    if np.linalg.matrix_rank(f) < f.shape[0]:
        raise ValueError("the Fisher information is rank deficient")
    return efficiency_from_fisher(f, problem.n_agents, gamma_star)


# --------------------------------------------------------------------------
# serialization


def _jsonable(obj):
    if is_dataclass(obj) and not isinstance(obj, type):
        out = {k: _jsonable(v) for k, v in asdict(obj).items()}
        for name in ("checks", "passed", "bound_ok", "psd", "divergent_fraction", "assumption1_ok"):
            if hasattr(type(obj), name):
                out[name] = _jsonable(getattr(obj, name))
        return out
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def report_to_json(report, path=None, skip=("normalized_errors",)) -> str:
    data = _jsonable(report)
    if isinstance(data, dict):
        for k in skip:
            data.pop(k, None)
    text = json.dumps(data, indent=2, sort_keys=True)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    return text


def histogram_csv(errors, path=None) -> str:
    """CSV ``run_id, comp_1, ..., comp_d`` of normalized errors, one row per replica."""
    z = np.asarray(errors, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    lines = [",".join(["run_id", *[f"comp_{k + 1}" for k in range(z.shape[1])]])]
    lines += [",".join([str(r), *[repr(float(v)) for v in row]]) for r, row in enumerate(z)]
    text = "\n".join(lines) + "\n"
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text
