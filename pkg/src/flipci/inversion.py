"""Confidence intervals by inverting one-sided sign-flip score tests.

The lower bound inverts ``H0: beta = b`` against ``H1: beta > b`` for
``b < beta_hat`` and the upper bound inverts ``H1: beta < b`` for
``b > beta_hat``.  Both searches share one flip ensemble, which keeps the
p-value functions stable across the evaluated nulls.

Search outline for one bound: step away from ``beta_hat`` by ``eps`` until a
null is rejected (at most ten steps, otherwise the bound is infinite), then
bisect between that point and the last accepted one, halving the step
each time.  The returned bound is always a rejected point, so the interval
errs on the wide side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .baselines import std_normal_quantile
from .errors import ConvergenceError, DegenerateModelError, ZeroVarianceError
from .families import Family
from .flips import FlipEnsemble, flip_statistics, generate_flips, pvalue_from_stats
from .glm import DesignSplit, FullFit, fit_full, fit_null
from .intervals import ConfidenceInterval

SIDES = {"lower": "greater", "upper": "less"}
DEGENERATE = (DegenerateModelError, ZeroVarianceError)


@dataclass(frozen=True)
class CiConfig:
    level: float = 0.95
    method: str = "equitailed"
    tol_fraction: float = 1.0 / 1024
    max_expansion: int = 10
    epsilon_floor: float = 0.2
    epsilon_scale_divisor: float = 100.0
    w: int = 1000
    seed: int = 0
    standardized: bool = True

    def __post_init__(self):
        if not 0.5 < self.level < 1.0:
            raise ValueError("level must lie in (0.5, 1)")
        if not 0.0 < self.tol_fraction < 1.0:
            raise ValueError("tol_fraction must lie in (0, 1)")
        if self.method not in ("equitailed", "symmetric"):
            raise ValueError("method must be 'equitailed' or 'symmetric'")
        if self.w < 2:
            raise ValueError("w must be at least 2")
        if self.max_expansion < 1:
            raise ValueError("max_expansion must be positive")

    @property
    def alpha(self) -> float:
        return 1.0 - self.level


class PValueFunction:
    """Sign-flip p-value as a function of the null value, for one side.

    ``side='lower'`` tests ``H1: beta > b`` (used below ``beta_hat``);
    ``side='upper'`` tests ``H1: beta < b``.  Results are cached by the exact
    float value of ``b``; every evaluation uses the same ensemble.
    """

    def __init__(self, family: Family, y, design: DesignSplit, side: str,
                 ensemble: FlipEnsemble, standardized: bool = True):
        if side not in SIDES:
            raise ValueError(f"side must be one of {tuple(SIDES)}")
        if ensemble.n != design.n:
            raise ValueError("ensemble size does not match the design")
        self.family = family
        self.y = np.asarray(y, dtype=float)
        self.design = design
        self.side = side
        self.alternative = SIDES[side]
        self.ensemble = ensemble
        self.standardized = standardized
        self.cache: dict[float, float] = {}
        self.calls = 0

    def __call__(self, beta0: float) -> float:
        beta0 = float(beta0)
        self.calls += 1
        if beta0 not in self.cache:
            fit = fit_null(self.family, self.y, self.design, beta0)
            stats = flip_statistics(fit, self.design, self.ensemble, self.standardized)
            self.cache[beta0] = pvalue_from_stats(stats, self.alternative)
        return self.cache[beta0]


class _Counted:
    """Counts requests to a p-value callable made by one search."""

    def __init__(self, fp):
        self.fp = fp
        self.side = getattr(fp, "side", None)
        self.count = 0

    def __call__(self, b):
        self.count += 1
        return self.fp(b)


def initial_epsilon(beta_hat: float, sigma_hat: float, alpha: float,
                    floor: float = 0.2, divisor: float = 100.0) -> float:
    """Initial search step: ``max(z_{1-alpha/2} * sigma_hat, |beta_hat| / 100, 0.2)``."""
    if sigma_hat < 0:
        raise ValueError("sigma_hat must be non-negative")
    z = std_normal_quantile(1.0 - alpha / 2.0)
    return max(z * sigma_hat, abs(beta_hat) / divisor, floor)


def _toward(side: str) -> float:
    # direction pointing from the bound toward beta_hat
    return 1.0 if side == "lower" else -1.0


def find_start(fp, beta_hat: float, epsilon: float, alpha_half: float,
               max_steps: int = 10, side: str | None = None) -> float:
    """First rejected null on the grid ``beta_hat -/+ i * epsilon``, ``i = 1..max_steps``.

    Returns ``-inf`` (lower side) or ``+inf`` (upper side) when nothing is
    rejected within ``max_steps`` steps or the null model degenerates on
    the way out.
    """
    side = side or fp.side
    toward = _toward(side)
    for i in range(1, max_steps + 1):
        b = beta_hat - toward * i * epsilon
        try:
            p = fp(b)
        except DEGENERATE:
            break
        if p < alpha_half:
            return b
    return -toward * math.inf


def _p_or_accept(fp, b):
    # a degenerate null strictly inside the bracket is kept in the interval
    try:
        return fp(b)
    except DEGENERATE:
        return 1.0


def bisect_equitailed_bound(fp, start: float, epsilon: float, tol: float,
                            alpha_half: float, side: str | None = None) -> float:
    """Bisection refinement of one equitailed bound.

    ``start`` must be rejected (``fp(start) < alpha_half``).  Each iteration
    halves the step, moves toward ``beta_hat`` after a rejection and away
    from it otherwise, and remembers the rejected point closest to
    ``beta_hat``.  Stops once the step drops below ``tol``.
    """
    side = side or fp.side
    toward = _toward(side)
    best = start
    k, m = 0, 0
    direction = 1
    while True:
        m += 1
        k = 2 * k + direction
        b = start + toward * (k * epsilon) / 2.0 ** m
        p = _p_or_accept(fp, b)
        rejected = p < alpha_half
        if rejected:
            best = b
        if epsilon / 2.0 ** m < tol:
            return best
        direction = 1 if rejected else -1


def bisect_symmetric(fp_minus, fp_plus, beta_hat: float, epsilon: float, tol: float,
                     alpha: float, max_steps: int = 10) -> float:
    """Conservative half-width ``delta`` of the symmetric interval.

    Searches ``delta = i * epsilon`` for the first width with
    ``fp_minus(beta_hat - delta) + fp_plus(beta_hat + delta) < alpha``, then
    bisects on ``delta`` as in the equitailed case.  Returns ``inf`` when no
    such width is found.
    """

    def psum(delta, strict):
        if strict:
            return fp_minus(beta_hat - delta) + fp_plus(beta_hat + delta)
        return _p_or_accept(fp_minus, beta_hat - delta) + _p_or_accept(fp_plus, beta_hat + delta)

    start = math.inf
    for i in range(1, max_steps + 1):
        delta = i * epsilon
        try:
            s = psum(delta, strict=True)
        except DEGENERATE:
            return math.inf
        if s < alpha:
            start = delta
            break
    if math.isinf(start):
        return math.inf
    best = start
    k, m = 0, 0
    direction = -1
    while True:
        m += 1
        k = 2 * k + direction
        delta = start + (k * epsilon) / 2.0 ** m
        rejected = psum(delta, strict=False) < alpha
        if rejected:
            best = delta
        if epsilon / 2.0 ** m < tol:
            return best
        direction = -1 if rejected else 1


def _estimate(family, y, design):
    """Full fit, or a fallback estimate when the MLE runs off to infinity."""
    try:
        fit = fit_full(family, y, design)
        return fit, fit.beta_hat, fit.se_model
    except DegenerateModelError as err:
        if err.last is None:
            raise
        return None, float(err.last[0]), 0.0


@dataclass
class _Searcher:
    family: Family
    y: np.ndarray
    design: DesignSplit
    config: CiConfig
    ensemble: FlipEnsemble
    beta_hat: float
    epsilon: float
    fps: dict = field(default_factory=dict)

    def fp(self, side):
        if side not in self.fps:
            self.fps[side] = PValueFunction(self.family, self.y, self.design, side,
                                            self.ensemble, self.config.standardized)
        return self.fps[side]

    @property
    def tol(self):
        return self.epsilon * self.config.tol_fraction

    def equitailed(self) -> ConfidenceInterval:
        a2 = self.config.alpha / 2.0
        bounds = {}
        evals = 0
        for side in ("lower", "upper"):
            fp = _Counted(self.fp(side))
            start = find_start(fp, self.beta_hat, self.epsilon, a2, self.config.max_expansion)
            if math.isinf(start):
                bounds[side] = start
            else:
                bounds[side] = bisect_equitailed_bound(fp, start, self.epsilon, self.tol, a2)
            evals += fp.count
        return ConfidenceInterval(bounds["lower"], bounds["upper"], self.config.level,
                                  "flip-equitailed", self.beta_hat, evals)

    def symmetric(self) -> ConfidenceInterval:
        lo, hi = _Counted(self.fp("lower")), _Counted(self.fp("upper"))
        delta = bisect_symmetric(lo, hi, self.beta_hat, self.epsilon, self.tol,
                                 self.config.alpha, self.config.max_expansion)
        return ConfidenceInterval(self.beta_hat - delta, self.beta_hat + delta,
                                  self.config.level, "flip-symmetric", self.beta_hat,
                                  lo.count + hi.count)


def _searcher(family, y, design, config, ensemble=None, full_fit=None):
    y = np.asarray(y, dtype=float)
    if full_fit is not None:
        beta_hat, sigma = full_fit.beta_hat, full_fit.se_model
    else:
        _, beta_hat, sigma = _estimate(family, y, design)
    if ensemble is None:
        ensemble = generate_flips(design.n, config.w, config.seed)
    eps = initial_epsilon(beta_hat, sigma, config.alpha, config.epsilon_floor,
                          config.epsilon_scale_divisor)
    return _Searcher(family, y, design, config, ensemble, beta_hat, eps)


def confint(family: Family, y, design: DesignSplit, config: CiConfig | None = None,
            ensemble: FlipEnsemble | None = None,
            full_fit: FullFit | None = None) -> ConfidenceInterval:
    """Sign-flip confidence interval for the target coefficient.

    The ensemble defaults to ``generate_flips(n, config.w, config.seed)``.
    ``full_fit`` may be passed to skip refitting the full model.
    """
    config = config or CiConfig()
    s = _searcher(family, y, design, config, ensemble, full_fit)
    return s.equitailed() if config.method == "equitailed" else s.symmetric()


def flip_intervals(family: Family, y, design: DesignSplit, config: CiConfig | None = None,
                   ensemble: FlipEnsemble | None = None, full_fit: FullFit | None = None,
                   methods=("equitailed", "symmetric")) -> dict[str, ConfidenceInterval]:
    """Equitailed and symmetric intervals sharing one ensemble and p-value cache."""
    config = config or CiConfig()
    s = _searcher(family, y, design, config, ensemble, full_fit)
    out = {}
    for m in methods:
        out[f"flip-{m}"] = s.equitailed() if m == "equitailed" else s.symmetric()
    return out


def pvalue_curve(family: Family, y, design: DesignSplit, grid, side: str,
                 ensemble: FlipEnsemble, standardized: bool = True) -> np.ndarray:
    """P-values on a sorted grid of null values; failed fits give NaN.

    Returns an array of shape ``(len(grid), 2)`` holding ``(beta0, p)`` rows.
    """
    grid = np.asarray(grid, dtype=float)
    if np.any(np.diff(grid) < 0):
        raise ValueError("grid must be sorted ascending")
    fp = PValueFunction(family, y, design, side, ensemble, standardized)
    out = np.empty((grid.size, 2))
    out[:, 0] = grid
    for i, b in enumerate(grid):
        try:
            out[i, 1] = fp(b)
        except (DegenerateModelError, ZeroVarianceError, ConvergenceError):
            out[i, 1] = np.nan
    return out
