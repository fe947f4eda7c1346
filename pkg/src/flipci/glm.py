"""IRLS fitting of the full model and of the null model with the target fixed.

The linear predictor is ``eta = offset + x * beta + Z @ gamma`` where ``x`` is
the scalar target covariate and ``Z`` holds the nuisance covariates
(intercept first, by convention).  Under ``H0: beta = beta0`` the term
``x * beta0`` is moved into the offset and only ``gamma`` is estimated.

All weighted least-squares solves go through a pivoted QR factorization of
``W^{1/2} Z``; nothing is inverted explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import qr, solve_triangular

from .errors import ConvergenceError, DegenerateModelError, DesignError
from .families import ETA_CLAMP, Family, estimate_dispersion

RANK_TOL = 1e-10
DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 50


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _pivoted_qr(a):
    q, r, piv = qr(a, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int(np.sum(diag > RANK_TOL * diag[0])) if diag.size and diag[0] > 0 else 0
    return q, r, piv, rank


@dataclass(frozen=True)
class DesignSplit:
    """Target covariate ``x`` and nuisance matrix ``Z`` (plus optional offset).

    Construction validates that ``Z`` has full column rank and that ``x`` is
    not in its column span.
    """

    x: np.ndarray
    Z: np.ndarray
    offset: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).ravel()
        Z = np.asarray(self.Z, dtype=float)
        if Z.ndim == 1:
            Z = Z[:, None]
        n, p = Z.shape
        if x.shape[0] != n:
            raise DesignError(f"x has {x.shape[0]} rows but Z has {n}")
        if n <= p + 1:
            raise DesignError(f"need n > p + 1, got n={n}, p={p}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(Z))):
            raise DesignError("design contains non-finite values")
        q, _, _, rank = _pivoted_qr(Z)
        if rank < p:
            raise DesignError(f"Z is rank deficient (rank {rank} < {p})")
        resid = x - q @ (q.T @ x)
        if np.linalg.norm(resid) <= RANK_TOL * max(np.linalg.norm(x), 1e-300):
            raise DesignError("x lies in the column span of Z; target effect unidentified")
        object.__setattr__(self, "x", _frozen(x))
        object.__setattr__(self, "Z", _frozen(Z))
        if self.offset is not None:
            off = np.asarray(self.offset, dtype=float).ravel()
            if off.shape[0] != n or not np.all(np.isfinite(off)):
                raise DesignError("offset must be a finite n-vector")
            object.__setattr__(self, "offset", _frozen(off))

    @property
    def n(self) -> int:
        return self.Z.shape[0]

    @property
    def p(self) -> int:
        return self.Z.shape[1]

    @property
    def base_offset(self) -> np.ndarray:
        return np.zeros(self.n) if self.offset is None else self.offset

    @property
    def full_matrix(self) -> np.ndarray:
        return np.column_stack([self.x, self.Z])


@dataclass(frozen=True)
class NullFit:
    """Null-model fit with ``beta`` held at ``beta0``.

    ``resid`` is ``y - mu_hat``.  ``d``, ``v`` and ``w`` are the diagonals
    of ``D`` (dmu/deta), ``V`` (variance including dispersion) and
    ``W = D V^{-1} D``.  ``basis`` is an orthonormal basis of the column
    space of ``W^{1/2} Z``.
    """

    beta0: float
    gamma_hat: np.ndarray
    eta_hat: np.ndarray
    mu_hat: np.ndarray
    resid: np.ndarray
    d: np.ndarray
    v: np.ndarray
    w: np.ndarray
    dispersion: float
    converged: bool
    iterations: int
    deviance: float
    basis: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class FullFit(NullFit):
    """Joint MLE of ``(beta, gamma)``; ``beta0`` equals ``beta_hat``."""

    beta_hat: float = np.nan
    se_model: float = np.nan


def _irls(family: Family, y, X, offset, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Fisher scoring for coefficients of ``X`` with a fixed ``offset``.

    Stops once the relative deviance change is below ``tol`` and the largest
    coefficient update is below ``tol * (1 + max|coef|)``.
    """
    k = X.shape[1]
    mu = family.starting_mu(y)
    eta = family.link(mu)
    coef = None
    dev_old = np.inf
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        ec = family.clamp_eta(eta)
        mu = family.inverse_link(ec)
        d = family.mu_eta(ec)
        var = family.variance(mu)
        if family.kind == "negbin":
            # Newton step: observed information is positive for the log link with fixed theta,
            # and Fisher scoring zig-zags on this non-canonical pair
            th = family.theta
            wt = th * mu * (y + th) / (mu + th) ** 2
            sw = np.sqrt(wt)
            zwork = ec - offset + th * (y - mu) / (mu + th) / wt
        else:
            sw = d / np.sqrt(var)
            zwork = ec - offset + (y - mu) / d
        q, r, piv, rank = _pivoted_qr(sw[:, None] * X)
        if rank < k:
            raise DegenerateModelError("weighted design lost rank during IRLS", last=coef)
        new = np.empty(k)
        new[piv] = solve_triangular(r, q.T @ (sw * zwork))
        step = new if coef is None else new - coef
        base = np.zeros(k) if coef is None else coef
        # step halving guards against deviance increases (non-canonical links, bad starts)
        for _ in range(30):
            cand = base + step
            eta_c = offset + X @ cand
            dev = family.deviance(y, family.inverse_link(family.clamp_eta(eta_c)))
            if coef is None or (np.isfinite(dev) and dev <= dev_old * (1 + 1e-12) + 1e-12):
                break
            step = step / 2.0
        delta = np.max(np.abs(cand - base)) if coef is not None else np.inf
        coef, eta = cand, eta_c
        rel = abs(dev - dev_old) / (abs(dev) + 0.1)
        dev_old = dev
        if rel < tol and delta < tol * (1.0 + np.max(np.abs(coef))):
            converged = True
            break
    if family.kind != "gaussian" and np.any(np.abs(eta) >= ETA_CLAMP):
        raise DegenerateModelError(
            "fitted linear predictor reached the clamp bound (separation or extreme offset)",
            last=coef,
        )
    if not converged:
        raise ConvergenceError(f"IRLS did not converge in {max_iter} iterations",
                               last=coef, iterations=it)
    return coef, eta, it, dev_old


def _finish(family: Family, y, eta, residual_dof, basis_cols):
    """Working quantities at convergence, with the dispersion estimate folded into V."""
    ec = family.clamp_eta(eta)
    mu = family.inverse_link(ec)
    d = family.mu_eta(ec)
    phi = estimate_dispersion(family, y, mu, residual_dof)
    # zero-residual gaussian fits: keep phi=0 reported but use unit scale in V
    scale = phi if phi > 0 else 1.0
    v = family.variance(mu) * scale
    w = d * d / v
    q, _, _, rank = _pivoted_qr(np.sqrt(w)[:, None] * basis_cols)
    if rank < basis_cols.shape[1]:
        raise DegenerateModelError("weighted nuisance design is rank deficient")
    return mu, d, v, w, phi, q


def _check(family: Family, y, design: DesignSplit):
    y = family.check_response(y).ravel()
    if y.shape[0] != design.n:
        raise DesignError(f"y has {y.shape[0]} entries but design has {design.n} rows")
    return y


def fit_null(family: Family, y, design: DesignSplit, beta0: float,
             tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> NullFit:
    """Fit the nuisance coefficients with ``x * beta0`` entering as an offset."""
    y = _check(family, y, design)
    beta0 = float(beta0)
    offset = design.base_offset + design.x * beta0
    gamma, eta, it, dev = _irls(family, y, design.Z, offset, tol, max_iter)
    mu, d, v, w, phi, q = _finish(family, y, eta, design.n - design.p, design.Z)
    if family.kind != "gaussian" and np.all(w < 1e-12):
        raise DegenerateModelError("all fitted means at the support boundary")
    return NullFit(
        beta0=beta0, gamma_hat=_frozen(gamma), eta_hat=_frozen(eta), mu_hat=_frozen(mu),
        resid=_frozen(y - mu), d=_frozen(d), v=_frozen(v), w=_frozen(w), dispersion=phi, converged=True,
        iterations=it, deviance=dev, basis=_frozen(q),
    )


def fit_full(family: Family, y, design: DesignSplit,
             tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> FullFit:
    """Joint maximum-likelihood fit of ``(beta, gamma)``.

    ``se_model`` is the model-based standard error of ``beta_hat``: the
    square root of the ``(beta, beta)`` entry of the inverse Fisher
    information, scaled by the dispersion estimate.
    """
    y = _check(family, y, design)
    X = design.full_matrix
    coef, eta, it, dev = _irls(family, y, X, design.base_offset, tol, max_iter)
    mu, d, v, w, phi, q = _finish(family, y, eta, design.n - design.p - 1, design.Z)
    # (X'WX)^{-1}_{beta,beta} = 1 / ||(I - H) W^{1/2} x||^2 with unit-dispersion W
    w1 = d * d / family.variance(mu)
    q1, _, _, _ = _pivoted_qr(np.sqrt(w1)[:, None] * design.Z)
    xs = np.sqrt(w1) * design.x
    xt = xs - q1 @ (q1.T @ xs)
    info = float(xt @ xt)
    if info <= 0:
        raise DegenerateModelError("zero information for the target coefficient")
    se = float(np.sqrt(phi / info))
    return FullFit(
        beta0=float(coef[0]), gamma_hat=_frozen(coef[1:]), eta_hat=_frozen(eta),
        mu_hat=_frozen(mu), resid=_frozen(y - mu), d=_frozen(d), v=_frozen(v), w=_frozen(w),
        dispersion=phi, converged=True, iterations=it, deviance=dev, basis=_frozen(q),
        beta_hat=float(coef[0]), se_model=se,
    )
