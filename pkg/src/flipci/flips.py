"""Sign-flip score tests on the null GLM fit.

For a flip vector ``f`` in ``{-1, +1}^n`` the effective score is::

    S(f) = n^{-1/2} x' W^{1/2} (I - H) F V^{-1/2} (y - mu)

with ``H`` the weighted hat matrix of the nuisance design and ``F = diag(f)``.
Its flip-specific variance is::

    Var(S(f)) = n^{-1} x' W^{1/2} (I - H) F (I - H) F (I - H) W^{1/2} x

``H`` is never formed: with ``Q`` an orthonormal basis of ``W^{1/2} Z`` we
have ``(I - H) u = u - Q (Q' u)``.  Writing ``a = (I - H) W^{1/2} x`` and
``e = V^{-1/2} (y - mu)`` the two quantities reduce to

    S(f)      = n^{-1/2} sum_i f_i a_i e_i
    Var(S(f)) = n^{-1} (||a||^2 - ||Q' (f * a)||^2)

so a whole ensemble is evaluated with two matrix products.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import ZeroVarianceError
from .families import Family
from .glm import DesignSplit, NullFit, fit_null

ALTERNATIVES = ("greater", "less")
ZERO_VARIANCE = 1e-14


@dataclass(frozen=True)
class FlipEnsemble:
    """``w`` sign-flip vectors of length ``n``; row 0 is the identity flip."""

    flips: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        f = np.array(self.flips, dtype=np.int8)
        if f.ndim != 2 or f.shape[0] < 2:
            raise ValueError("an ensemble needs at least two flips")
        if not np.all((f == 1) | (f == -1)):
            raise ValueError("flip entries must be +1 or -1")
        if not np.all(f[0] == 1):
            raise ValueError("the first flip must be the identity")
        f.setflags(write=False)
        object.__setattr__(self, "flips", f)

    @property
    def w(self) -> int:
        return self.flips.shape[0]

    @property
    def n(self) -> int:
        return self.flips.shape[1]


def generate_flips(n: int, w: int, seed: int = 0, exhaustive: bool | None = None) -> FlipEnsemble:
    """Build a reproducible sign-flip ensemble.

    Rows ``1..w-1`` come from a Philox counter-based stream keyed by ``seed``:
    flip ``g`` occupies its own counter block, so every ``(seed, g, i)``
    maps to a fixed sign independent of ``w``.  When ``w == 2**n``
    (or ``exhaustive=True``) all sign vectors are enumerated in
    lexicographic order with ``+1`` first.
    """
    n, w = int(n), int(w)
    if n < 1:
        raise ValueError("n must be positive")
    if w < 2:
        raise ValueError("w must be at least 2 (identity plus one flip)")
    if n < 63 and w > 2 ** n:
        raise ValueError(f"w={w} exceeds the {2 ** n} distinct sign vectors for n={n}")
    if exhaustive is None:
        exhaustive = n < 63 and w == 2 ** n
    if exhaustive:
        if w != 2 ** n:
            raise ValueError("exhaustive enumeration requires w == 2**n")
        flips = np.array(list(itertools.product((1, -1), repeat=n)), dtype=np.int8)
        return FlipEnsemble(flips, seed)
    words = -(-n // 64)
    bitgen = np.random.Philox(key=int(seed) % 2 ** 64)
    raw = bitgen.random_raw(w * words).astype("<u8").reshape(w, words)
    bits = np.unpackbits(raw.view(np.uint8), axis=1, bitorder="little")[:, :n]
    flips = (1 - 2 * bits.astype(np.int8)).astype(np.int8)
    flips[0] = 1
    return FlipEnsemble(flips, seed)


def _components(fit: NullFit, design: DesignSplit):
    sw = np.sqrt(fit.w)
    q = fit.basis
    xs = sw * design.x
    a = xs - q @ (q.T @ xs)
    e = fit.resid / np.sqrt(fit.v)
    return a, e, q


def _as_rows(flip):
    f = np.asarray(flip, dtype=float)
    return f[None, :] if f.ndim == 1 else f


def effective_score(fit: NullFit, design: DesignSplit, flip) -> float | np.ndarray:
    """Effective score under one flip (1-d input) or each row of a flip matrix."""
    a, e, _ = _components(fit, design)
    f = _as_rows(flip)
    s = (f * (a * e)).sum(axis=1) / np.sqrt(design.n)
    return float(s[0]) if np.ndim(flip) == 1 else s


def flip_variance(fit: NullFit, design: DesignSplit, flip, check: bool = True):
    """Variance of the effective score under one flip or each row of a flip matrix.

    Raises :class:`ZeroVarianceError` when a value falls below ``1e-14``.
    """
    a, _, q = _components(fit, design)
    f = _as_rows(flip)
    fa = f * a
    proj = fa @ q
    var = (a @ a - (proj * proj).sum(axis=1)) / design.n
    if check and np.any(var < ZERO_VARIANCE):
        raise ZeroVarianceError("flipped score variance is numerically zero")
    return float(var[0]) if np.ndim(flip) == 1 else var


def pvalue_from_stats(stats, alternative: str) -> float:
    """Tail proportion of flipped statistics at least as extreme as the observed one.

    ``stats[0]`` is the observed (identity-flip) statistic; ties count
    toward the p-value, so the result is never below ``1 / w``.
    """
    s = np.asarray(stats, dtype=float)
    if s.size < 2:
        raise ValueError("need at least two statistics")
    if alternative == "greater":
        k = np.count_nonzero(s >= s[0])
    elif alternative == "less":
        k = np.count_nonzero(s <= s[0])
    else:
        raise ValueError(f"alternative must be one of {ALTERNATIVES}")
    return k / s.size


@dataclass(frozen=True)
class ScoreTestResult:
    beta0: float
    alternative: str
    standardized: bool
    stats: np.ndarray
    p_value: float

    @property
    def statistic(self) -> float:
        return float(self.stats[0])


def flip_statistics(fit: NullFit, design: DesignSplit, ensemble: FlipEnsemble,
                    standardized: bool = True) -> np.ndarray:
    """All ``w`` flipped statistics from a single null fit."""
    if ensemble.n != design.n:
        raise ValueError(f"ensemble has n={ensemble.n}, design has n={design.n}")
    a, e, q = _components(fit, design)
    f = ensemble.flips.astype(float)
    stats = (f * (a * e)).sum(axis=1) / np.sqrt(design.n)
    if standardized:
        proj = (f * a) @ q
        var = (a @ a - (proj * proj).sum(axis=1)) / design.n
        if np.any(var < ZERO_VARIANCE):
            raise ZeroVarianceError("flipped score variance is numerically zero")
        stats = stats / np.sqrt(var)
    stats.setflags(write=False)
    return stats


def sign_flip_test(family: Family, y, design: DesignSplit, beta0: float, alternative: str,
                   ensemble: FlipEnsemble, standardized: bool = True) -> ScoreTestResult:
    """One-sided sign-flip score test of ``H0: beta = beta0``.

    ``alternative='greater'`` tests ``H1: beta > beta0``; ``'less'`` tests
    ``H1: beta < beta0``.  The null model is fitted once and shared by all
    flips.
    """
    if alternative not in ALTERNATIVES:
        raise ValueError(f"alternative must be one of {ALTERNATIVES}")
    fit = fit_null(family, y, design, beta0)
    stats = flip_statistics(fit, design, ensemble, standardized)
    return ScoreTestResult(float(beta0), alternative, standardized, stats,
                           pvalue_from_stats(stats, alternative))
