"""Exponential-dispersion families with their link, variance and deviance.

Four family/link pairs are supported: gaussian-identity, bernoulli-logit,
poisson-log and negbin-log (negative binomial with a fixed size parameter
``theta``).  Everything downstream only needs the mean, the derivative of
the mean with respect to the linear predictor, and the variance function.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, xlogy

ETA_CLAMP = 30.0

KINDS = ("gaussian", "bernoulli", "poisson", "negbin")


@dataclass(frozen=True)
class Family:
    """A GLM family bundled with its link.

    Parameters
    ----------
    kind : {'gaussian', 'bernoulli', 'poisson', 'negbin'}
        Distribution; the link is identity, logit, log and log respectively.
    theta : float, optional
        Negative-binomial size parameter, required for ``kind='negbin'``.
        Variance is ``mu + mu**2 / theta``.
    """

    kind: str
    theta: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown family {self.kind!r}; expected one of {KINDS}")
        if self.kind == "negbin":
            if self.theta is None or not (self.theta > 0 and math.isfinite(self.theta)):
                raise ValueError("negbin family needs a positive finite theta")
        elif self.theta is not None:
            raise ValueError(f"theta is only meaningful for negbin, got {self.kind}")

    @property
    def name(self) -> str:
        link = {"gaussian": "identity", "bernoulli": "logit"}.get(self.kind, "log")
        return f"{self.kind}-{link}"

    @property
    def dispersion_shape(self) -> str:
        if self.kind == "gaussian":
            return "estimated"
        if self.kind == "negbin":
            return f"negbin-theta({self.theta:g})"
        return "fixed"

    def clamp_eta(self, eta):
        eta = np.asarray(eta, dtype=float)
        if self.kind == "gaussian":
            return eta
        return np.clip(eta, -ETA_CLAMP, ETA_CLAMP)

    def link(self, mu):
        mu = np.asarray(mu, dtype=float)
        if self.kind == "gaussian":
            return mu
        if self.kind == "bernoulli":
            return np.log(mu) - np.log1p(-mu)
        return np.log(mu)

    def inverse_link(self, eta):
        eta = np.asarray(eta, dtype=float)
        if self.kind == "gaussian":
            return eta
        if self.kind == "bernoulli":
            return expit(eta)
        return np.exp(eta)

    def mu_eta(self, eta):
        """Derivative of the mean with respect to the linear predictor."""
        eta = np.asarray(eta, dtype=float)
        if self.kind == "gaussian":
            return np.ones_like(eta)
        if self.kind == "bernoulli":
            mu = expit(eta)
            return mu * (1.0 - mu)
        return np.exp(eta)

    def variance(self, mu):
        mu = np.asarray(mu, dtype=float)
        if self.kind == "gaussian":
            return np.ones_like(mu)
        if self.kind == "bernoulli":
            return mu * (1.0 - mu)
        if self.kind == "poisson":
            return mu.copy()
        return mu + mu * mu / self.theta

    def unit_deviance(self, y, mu):
        y = np.asarray(y, dtype=float)
        mu = np.asarray(mu, dtype=float)
        if self.kind == "gaussian":
            return (y - mu) ** 2
        if self.kind == "bernoulli":
            return -2.0 * (xlogy(y, mu) + xlogy(1.0 - y, 1.0 - mu))
        if self.kind == "poisson":
            return 2.0 * (xlogy(y, y / mu) - (y - mu))
        th = self.theta
        return 2.0 * (xlogy(y, y / mu) - (y + th) * np.log((y + th) / (mu + th)))

    def deviance(self, y, mu) -> float:
        return float(np.sum(self.unit_deviance(y, mu)))

    def check_response(self, y):
        y = np.asarray(y, dtype=float)
        if not np.all(np.isfinite(y)):
            raise ValueError("response contains non-finite values")
        if self.kind == "bernoulli" and not np.all((y == 0) | (y == 1)):
            raise ValueError("bernoulli response must be 0/1")
        if self.kind in ("poisson", "negbin"):
            if np.any(y < 0) or np.any(y != np.floor(y)):
                raise ValueError(f"{self.kind} response must be non-negative integers")
        return y

    def starting_mu(self, y):
        y = np.asarray(y, dtype=float)
        if self.kind == "gaussian":
            return y.copy()
        if self.kind == "bernoulli":
            return (y + 0.5) / 2.0
        return y + 0.1


def gaussian() -> Family:
    return Family("gaussian")


def bernoulli() -> Family:
    return Family("bernoulli")


def poisson() -> Family:
    return Family("poisson")


def negbin(theta: float) -> Family:
    return Family("negbin", float(theta))


def family_from_name(name: str, theta: float | None = None) -> Family:
    aliases = {
        "gaussian": "gaussian", "gaussian-identity": "gaussian", "linear": "gaussian",
        "bernoulli": "bernoulli", "bernoulli-logit": "bernoulli", "logistic": "bernoulli",
        "binomial": "bernoulli",
        "poisson": "poisson", "poisson-log": "poisson",
        "negbin": "negbin", "negbin-log": "negbin", "negative-binomial": "negbin",
    }
    try:
        kind = aliases[name.lower()]
    except KeyError:
        raise ValueError(f"unknown family {name!r}") from None
    return Family(kind, theta if kind == "negbin" else None)


def working_quantities(family: Family, eta, dispersion: float = 1.0):
    """Mean and IRLS working quantities at a linear predictor.

    Returns
    -------
    mu, d, v, w : ndarray
        ``mu = g^{-1}(eta)``, ``d = dmu/deta``, ``v = variance(mu) * dispersion``
        and the working weight ``w = d**2 / v``.

    ``eta`` outside ``[-30, 30]`` is clamped for the logit and log links
    (with a ``RuntimeWarning``) so that ``mu`` stays inside the valid range.
    """
    eta = np.asarray(eta, dtype=float)
    if not np.all(np.isfinite(eta)):
        raise ValueError("linear predictor must be finite")
    clamped = family.clamp_eta(eta)
    if clamped is not eta and np.any(clamped != eta):
        warnings.warn("linear predictor clamped to [-30, 30]", RuntimeWarning, stacklevel=2)
    mu = family.inverse_link(clamped)
    d = family.mu_eta(clamped)
    v = family.variance(mu) * dispersion
    return mu, d, v, d * d / v


def estimate_dispersion(family: Family, y, mu, residual_dof: int) -> float:
    """Dispersion estimate used in the working weights.

    Gaussian fits use the Pearson statistic over the residual degrees of
    freedom; the other families have dispersion fixed at one (negbin carries
    its overdispersion in ``theta``).
    """
    if residual_dof < 1:
        raise ValueError("residual_dof must be at least 1")
    if family.kind != "gaussian":
        return 1.0
    r = np.asarray(y, dtype=float) - np.asarray(mu, dtype=float)
    return float(r @ r) / residual_dof


def estimate_theta_mom(y) -> float:
    """Method-of-moments negative-binomial size on the intercept-only model.

    Returns ``1e8`` (Poisson limit) when the sample is not overdispersed.
    """
    y = np.asarray(y, dtype=float)
    m = y.mean()
    s2 = y.var(ddof=1) if y.size > 1 else 0.0
    if m <= 0 or s2 <= m:
        return 1e8
    return float(m * m / (s2 - m))
