"""Coverage simulations and the p-value monotonicity experiment.

All scenarios share one covariate law: ``(x, z)`` bivariate normal with
unit variances and correlation 0.2, nuisance design ``[1, z]`` and linear
predictor ``beta * x + gamma * z`` with ``(beta, gamma) = (0, -0.5)`` by
default.  Replication ``r`` draws its data and flips from seeds derived
from ``(seed, r)``, so replications can run in any order or in parallel.
"""

from __future__ import annotations

import csv
import hashlib
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .baselines import sandwich_interval, std_normal_quantile, wald_interval
from .errors import ConvergenceError, DegenerateModelError, FlipCIError
from .families import Family, bernoulli, gaussian, poisson
from .flips import generate_flips
from .glm import DesignSplit, fit_full
from .intervals import METHODS
from .inversion import CiConfig, flip_intervals, pvalue_curve

SCENARIOS = ("lm-correct", "logit-correct", "pois-correct", "negbin-as-pois",
             "hetero-target", "hetero-nuisance")
FAILURE_BUDGET = 0.01


class SimulationError(FlipCIError):
    pass


def derive_seed(*parts) -> int:
    """Stable 64-bit seed from arbitrary parts (ints, strings)."""
    h = hashlib.blake2b(repr(parts).encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


@dataclass(frozen=True)
class Scenario:
    id: str
    true_beta: float = 0.0
    true_gamma: float = -0.5
    covariate_correlation: float = 0.2
    hetero_lambda: float = 1.0
    negbin_theta: float = 1.0

    def __post_init__(self):
        if self.id not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.id!r}; valid ids: {', '.join(SCENARIOS)}")
        if not abs(self.covariate_correlation) < 1:
            raise ValueError("covariate correlation must lie in (-1, 1)")
        if not self.negbin_theta > 0:
            raise ValueError("negbin_theta must be positive")

    @property
    def family(self) -> Family:
        if self.id == "logit-correct":
            return bernoulli()
        if self.id in ("pois-correct", "negbin-as-pois"):
            return poisson()
        return gaussian()


def generate_dataset(scenario: Scenario, N: int, seed: int):
    """Draw ``(y, x, Z)`` for one replication; ``Z = [1, z]``."""
    if N < 10:
        raise ValueError("N must be at least 10")
    rng = np.random.default_rng(seed)
    rho = scenario.covariate_correlation
    xz = rng.multivariate_normal([0.0, 0.0], [[1.0, rho], [rho, 1.0]], size=N)
    x, z = xz[:, 0], xz[:, 1]
    eta = scenario.true_beta * x + scenario.true_gamma * z
    lam = scenario.hetero_lambda
    sid = scenario.id
    if sid == "lm-correct":
        y = eta + rng.standard_normal(N)
    elif sid == "logit-correct":
        y = rng.binomial(1, 1.0 / (1.0 + np.exp(-eta))).astype(float)
    elif sid == "pois-correct":
        y = rng.poisson(np.exp(eta)).astype(float)
    elif sid == "negbin-as-pois":
        mu = np.exp(eta)
        th = scenario.negbin_theta
        y = rng.negative_binomial(th, th / (th + mu)).astype(float)
    elif sid == "hetero-target":
        y = eta + rng.standard_normal(N) * np.exp(lam * x)
    else:
        y = eta + rng.standard_normal(N) * np.exp(lam * z)
    return y, x, np.column_stack([np.ones(N), z])


@dataclass(frozen=True)
class RepResult:
    rep: int
    intervals: dict = field(default_factory=dict)
    error: str | None = None

    def covered(self, method: str, true_beta: float) -> bool:
        ci = self.intervals[method]
        return ci.lower <= true_beta <= ci.upper


@dataclass
class MethodSummary:
    coverage: float
    median_width: float
    inf_count: int


@dataclass
class Summary:
    scenario: str
    N: int
    reps: int
    failures: int
    nominal_band: tuple
    methods: dict


def nominal_band(reps: int, alpha: float = 0.05) -> tuple[float, float]:
    """Monte-Carlo acceptance band ``(1 - alpha) -/+ z_0.975 * sqrt(level * alpha / reps)``."""
    level = 1.0 - alpha
    half = std_normal_quantile(0.975) * math.sqrt(level * alpha / reps)
    return level - half, level + half


def run_replication(scenario: Scenario, N: int, rep: int, alpha: float, w: int,
                    seed: int) -> RepResult:
    y, x, Z = generate_dataset(scenario, N, derive_seed(seed, "data", rep))
    try:
        design = DesignSplit(x, Z)
        fit = fit_full(scenario.family, y, design)
        cfg = CiConfig(level=1.0 - alpha, w=w, seed=derive_seed(seed, "flips", rep))
        out = flip_intervals(scenario.family, y, design, cfg, full_fit=fit)
        out["wald"] = wald_interval(fit, alpha)
        out["sandwich"] = sandwich_interval(fit, design, alpha)
    except (FlipCIError, ConvergenceError, DegenerateModelError) as err:
        return RepResult(rep, {}, f"{type(err).__name__}: {err}")
    return RepResult(rep, out)


def _run_chunk(args):
    scenario, N, reps, alpha, w, seed = args
    return [run_replication(scenario, N, r, alpha, w, seed) for r in reps]


def run_replications(scenario: Scenario, N: int, reps: int, alpha: float = 0.05,
                     w: int = 1000, seed: int = 0, n_jobs: int = 1) -> list[RepResult]:
    if reps < 1:
        raise ValueError("reps must be at least 1")
    if n_jobs <= 1:
        return [run_replication(scenario, N, r, alpha, w, seed) for r in range(reps)]
    chunks = [list(range(r, reps, n_jobs)) for r in range(n_jobs)]
    with ProcessPoolExecutor(n_jobs) as pool:
        parts = pool.map(_run_chunk, [(scenario, N, c, alpha, w, seed) for c in chunks])
    results = [r for part in parts for r in part]
    return sorted(results, key=lambda r: r.rep)


def summarize(scenario: Scenario, N: int, results: list[RepResult],
              alpha: float = 0.05) -> Summary:
    """Coverage and median finite width per method.

    Infinite intervals count as covering and are excluded from the median.
    Raises :class:`SimulationError` when failed replications exceed 1%.
    """
    ok = [r for r in results if r.error is None]
    failures = len(results) - len(ok)
    if failures > FAILURE_BUDGET * len(results):
        first = next(r.error for r in results if r.error is not None)
        raise SimulationError(
            f"{failures} of {len(results)} replications failed (budget 1%); first: {first}")
    methods = {}
    for m in METHODS:
        cis = [r.intervals[m] for r in ok]
        widths = np.array([c.width for c in cis])
        finite = widths[np.isfinite(widths)]
        cov = float(np.mean([c.contains(scenario.true_beta) for c in cis])) if cis else math.nan
        methods[m] = MethodSummary(cov, float(np.median(finite)) if finite.size else math.nan,
                                   int(np.sum(~np.isfinite(widths))))
    return Summary(scenario.id, N, len(results), failures, nominal_band(len(results), alpha),
                   methods)


def run_scenario(scenario: Scenario, N: int, reps: int, alpha: float = 0.05, w: int = 1000,
                 seed: int = 0, n_jobs: int = 1, return_reps: bool = False):
    """Run ``reps`` replications and aggregate them into a :class:`Summary`."""
    results = run_replications(scenario, N, reps, alpha, w, seed, n_jobs)
    summary = summarize(scenario, N, results, alpha)
    return (summary, results) if return_reps else summary


SUMMARY_COLUMNS = ("scenario", "N", "method", "coverage", "medianWidth", "infCount", "failures")
REP_COLUMNS = ("scenario", "N", "rep", "method", "lower", "upper", "width", "covered",
               "p_evaluations")


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, float):
        return f"{v:.9g}"
    return str(v)


def summary_rows(summary: Summary):
    for m, s in summary.methods.items():
        yield (summary.scenario, summary.N, m, s.coverage, s.median_width, s.inf_count,
               summary.failures)


def write_summary_csv(fh, summaries, header_lines=()):
    for line in header_lines:
        fh.write(f"# {line}\n")
    wr = csv.writer(fh, lineterminator="\n")
    wr.writerow(SUMMARY_COLUMNS)
    for s in summaries:
        for row in summary_rows(s):
            wr.writerow([_fmt(v) for v in row])


def write_reps_csv(fh, scenario: Scenario, N: int, results, header_lines=()):
    for line in header_lines:
        fh.write(f"# {line}\n")
    wr = csv.writer(fh, lineterminator="\n")
    wr.writerow(REP_COLUMNS)
    for r in results:
        if r.error is not None:
            wr.writerow([scenario.id, N, r.rep, "error", "", "", "", "", r.error])
            continue
        for m in METHODS:
            c = r.intervals[m]
            wr.writerow([_fmt(v) for v in (scenario.id, N, r.rep, m, c.lower, c.upper, c.width,
                                            int(c.contains(scenario.true_beta)),
                                            c.p_evaluations)])


def scenario_config(scenario: Scenario) -> dict:
    return asdict(scenario)


@dataclass(frozen=True)
class MonotonicityResult:
    seed: int
    beta_hat: float
    curve: np.ndarray
    violations: int
    failed: bool = False


def count_violations(p) -> int:
    """Adjacent decreases in a p-value sequence ordered by increasing null value."""
    p = np.asarray(p, dtype=float)
    p = p[~np.isnan(p)]
    return int(np.sum(np.diff(p) < 0))


def monotonicity_experiment(n: int, seed: int, grid_size: int = 50, w: int = 1000,
                            model: str = "logistic", standardized: bool = True,
                            beta: float = 0.0, gamma: float = -0.5,
                            correlation: float = 0.2) -> MonotonicityResult:
    """Lower-side p-value curve on ``grid_size`` points of ``[beta_hat - 1, beta_hat]``.

    ``model='logistic'`` simulates Bernoulli responses with logit link;
    ``model='gaussian'`` uses the linear model with unit-variance errors.
    Returns the curve and its number of adjacent monotonicity violations.
    """
    if n < 10:
        raise ValueError("n must be at least 10")
    rng = np.random.default_rng(derive_seed(seed, "monotonicity", n))
    xz = rng.multivariate_normal([0.0, 0.0], [[1.0, correlation], [correlation, 1.0]], size=n)
    x, z = xz[:, 0], xz[:, 1]
    eta = beta * x + gamma * z
    if model == "logistic":
        family = bernoulli()
        y = rng.binomial(1, 1.0 / (1.0 + np.exp(-eta))).astype(float)
    elif model == "gaussian":
        family = gaussian()
        y = eta + rng.standard_normal(n)
    else:
        raise ValueError("model must be 'logistic' or 'gaussian'")
    ensemble = generate_flips(n, w, derive_seed(seed, "monotonicity-flips", n))
    try:
        design = DesignSplit(x, np.column_stack([np.ones(n), z]))
        fit = fit_full(family, y, design)
    except (FlipCIError, ConvergenceError):
        return MonotonicityResult(seed, math.nan, np.empty((0, 2)), 0, failed=True)
    grid = np.linspace(fit.beta_hat - 1.0, fit.beta_hat, grid_size)
    curve = pvalue_curve(family, y, design, grid, "lower", ensemble, standardized)
    return MonotonicityResult(seed, fit.beta_hat, curve, count_violations(curve[:, 1]))
