"""Wald-type intervals with model-based or sandwich (HC0/HC1) standard errors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import qr, solve_triangular
from scipy.special import ndtri

from .errors import DegenerateModelError
from .glm import DesignSplit, FullFit
from .intervals import ConfidenceInterval


def std_normal_quantile(q: float) -> float:
    """Inverse of the standard normal CDF."""
    q = float(q)
    if not 0.0 < q < 1.0:
        raise ValueError(f"quantile level must lie in (0, 1), got {q}")
    return float(ndtri(q))


@dataclass(frozen=True)
class CovarianceEstimate:
    kind: str
    se_beta: float
    cov: np.ndarray | None = None


def sandwich_covariance(X, resid, d, v):
    """HC0 sandwich ``A^{-1} B A^{-1}`` for GLM coefficients.

    ``A = X' W X`` with ``W = d**2 / v`` is the Fisher information and
    ``B = sum_i u_i u_i'`` with ``u_i = x_i d_i r_i / v_i`` the outer
    product of per-observation score contributions.
    """
    X = np.asarray(X, dtype=float)
    d = np.asarray(d, dtype=float)
    v = np.asarray(v, dtype=float)
    sw = d / np.sqrt(v)
    q, r, piv = qr(sw[:, None] * X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag[-1] <= 1e-12 * diag[0]:
        raise DegenerateModelError("Fisher information is singular")
    U = X * (d * np.asarray(resid, dtype=float) / v)[:, None]
    # A^{-1} U' = P R^{-1} R^{-T} P' U'
    tmp = solve_triangular(r, solve_triangular(r, U[:, piv].T, trans="T"))
    ainv_ut = np.empty_like(tmp)
    ainv_ut[piv] = tmp
    return ainv_ut @ ainv_ut.T


def sandwich_se(fit: FullFit, design: DesignSplit, small_sample: bool = False) -> CovarianceEstimate:
    """Robust standard error of ``beta_hat``; HC1 rescales by ``sqrt(n / (n - p - 1))``."""
    cov = sandwich_covariance(design.full_matrix, fit.resid, fit.d, fit.v)
    se = float(np.sqrt(cov[0, 0]))
    if small_sample:
        n, k = design.n, design.p + 1
        se *= np.sqrt(n / (n - k))
        cov = cov * (n / (n - k))
    if not se > 0:
        raise DegenerateModelError("sandwich standard error is zero")
    return CovarianceEstimate("sandwich-hc1" if small_sample else "sandwich-hc0", se, cov)


def _symmetric(center, se, alpha, method):
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    z = std_normal_quantile(1.0 - alpha / 2.0)
    return ConfidenceInterval(center - z * se, center + z * se, 1.0 - alpha, method,
                              estimate=center)


def wald_interval(fit: FullFit, alpha: float = 0.05) -> ConfidenceInterval:
    """Classical Wald interval ``beta_hat -/+ z * se_model``."""
    return _symmetric(fit.beta_hat, fit.se_model, alpha, "wald")


def sandwich_interval(fit: FullFit, design: DesignSplit, alpha: float = 0.05,
                      small_sample: bool = False) -> ConfidenceInterval:
    """Wald interval with the sandwich standard error."""
    est = sandwich_se(fit, design, small_sample)
    return _symmetric(fit.beta_hat, est.se_beta, alpha, "sandwich")
