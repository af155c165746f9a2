"""Predictive distributions for case durations: Gaussian, Laplace, Gamma.

Two surfaces live here. The dataclasses plus the scalar helpers
(`gaussian_nll`, `mean`, `quantile`, ...) are the per-case API. The
`family_*` / `*_from_raw` functions are the vectorized forms the training
loop and evaluator run over whole splits; they take a family name and an
(n, 2) parameter or raw-head-output array.

All NLLs include their normalization constants so values are comparable
across families.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import special
from .exceptions import ConfigError, DomainError

FAMILIES = ("gaussian", "laplace", "gamma")

# Scale/shape outputs are clamped to at least this before entering an NLL,
# so log terms stay finite early in training.
SCALE_FLOOR = 1e-6

_LN2 = float(np.log(2.0))


@dataclass(frozen=True)
class Gaussian:
    mu: float
    sigma: float

    def __post_init__(self):
        _check_positive_scale("sigma", self.sigma, self.mu)


@dataclass(frozen=True)
class Laplace:
    mu: float
    b: float

    def __post_init__(self):
        _check_positive_scale("b", self.b, self.mu)


@dataclass(frozen=True)
class Gamma:
    k: float
    phi: float

    def __post_init__(self):
        if not (np.isfinite(self.k) and self.k > 0):
            raise DomainError(f"gamma shape k must be finite and > 0, got {self.k}")
        if not (np.isfinite(self.phi) and self.phi > 0):
            raise DomainError(f"gamma scale phi must be finite and > 0, got {self.phi}")


PredictiveDistribution = Gaussian | Laplace | Gamma


def _check_positive_scale(name, scale, loc):
    if not np.isfinite(loc):
        raise DomainError(f"location must be finite, got {loc}")
    if not (np.isfinite(scale) and scale > 0):
        raise DomainError(f"{name} must be finite and > 0, got {scale}")


# ---------------------------------------------------------------------------
# Scalar NLLs (full densities, in nats)
# ---------------------------------------------------------------------------

def gaussian_nll(y, mu, sigma):
    """-log N(y | mu, sigma^2) = 0.5*ln(2*pi) + ln(sigma) + (y-mu)^2 / (2*sigma^2)."""
    if sigma <= 0:
        raise DomainError(f"sigma must be > 0, got {sigma}")
    r = (y - mu) / sigma
    return special.LN_SQRT_2PI + np.log(sigma) + 0.5 * r * r


def laplace_nll(y, mu, b):
    """-log Laplace(y | mu, b) = ln(2*b) + |y-mu| / b."""
    if b <= 0:
        raise DomainError(f"b must be > 0, got {b}")
    return _LN2 + np.log(b) + abs(y - mu) / b


def gamma_nll(y, k, phi):
    """-log Gamma(y | k, phi) = lnG(k) + k*ln(phi) - (k-1)*ln(y) + y/phi.

    y must be strictly positive (gamma support); after the corpus duration
    filter every label is, so a violation here means a pipeline bug.
    """
    if y <= 0:
        raise DomainError(f"gamma support is y > 0, got label {y}")
    if k <= 0 or phi <= 0:
        raise DomainError(f"gamma parameters must be > 0, got k={k}, phi={phi}")
    return special.lgamma(k) + k * np.log(phi) - (k - 1.0) * np.log(y) + y / phi


def nll(dist, y):
    if isinstance(dist, Gaussian):
        return gaussian_nll(y, dist.mu, dist.sigma)
    if isinstance(dist, Laplace):
        return laplace_nll(y, dist.mu, dist.b)
    return gamma_nll(y, dist.k, dist.phi)


# ---------------------------------------------------------------------------
# Moments and quantiles
# ---------------------------------------------------------------------------

def mean(dist):
    if isinstance(dist, Gaussian):
        return dist.mu
    if isinstance(dist, Laplace):
        return dist.mu
    return dist.k * dist.phi


def std(dist):
    """Standard deviation of the predictive distribution (the sigma-hat
    used on calibration plots)."""
    if isinstance(dist, Gaussian):
        return dist.sigma
    if isinstance(dist, Laplace):
        return dist.b * np.sqrt(2.0)
    return np.sqrt(dist.k) * dist.phi


def quantile(dist, p):
    if not 0.0 < p < 1.0:
        raise DomainError(f"quantile probability must be in (0, 1), got {p}")
    if isinstance(dist, Gaussian):
        return dist.mu + dist.sigma * special.probit(p)
    if isinstance(dist, Laplace):
        if p < 0.5:
            return dist.mu + dist.b * np.log(2.0 * p)
        return dist.mu - dist.b * np.log(2.0 * (1.0 - p))
    x = special.inv_reg_lower_incomplete_gamma(dist.k, p, tol=1e-12)
    return x * dist.phi


def median(dist):
    return quantile(dist, 0.5)


def cdf(dist, y):
    if isinstance(dist, Gaussian):
        return special.normal_cdf((y - dist.mu) / dist.sigma)
    if isinstance(dist, Laplace):
        z = (y - dist.mu) / dist.b
        return 0.5 * np.exp(z) if z < 0 else 1.0 - 0.5 * np.exp(-z)
    if y <= 0:
        return 0.0
    return special.reg_lower_incomplete_gamma(dist.k, y / dist.phi)


# ---------------------------------------------------------------------------
# Head wiring: links on raw MLP outputs
# ---------------------------------------------------------------------------

def head_links(family, heteroscedastic):
    """Per-output link functions for an MLP head of the given family."""
    if family not in FAMILIES:
        raise ConfigError(f"unknown family {family!r}; expected one of {FAMILIES}")
    if family == "gamma":
        if not heteroscedastic:
            raise ConfigError("the gamma head has no homoscedastic variant")
        return ("softplus", "softplus")
    if heteroscedastic:
        return ("identity", "softplus")
    return ("identity",)


def params_from_raw(family, raw):
    """Map raw two-output head values to distribution parameters.

    Column 0 is mu (identity) for gaussian/laplace and k (softplus) for
    gamma; column 1 is the scale (softplus). Softplus outputs are floored
    at SCALE_FLOOR.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2 or raw.shape[1] != 2:
        raise DomainError(f"heteroscedastic raw outputs must be (n, 2), got {raw.shape}")
    params = np.empty_like(raw)
    if family == "gamma":
        params[:, 0] = np.maximum(special.softplus(raw[:, 0]), SCALE_FLOOR)
    else:
        params[:, 0] = raw[:, 0]
    params[:, 1] = np.maximum(special.softplus(raw[:, 1]), SCALE_FLOOR)
    return params


def nll_from_raw(family, y, raw):
    """Per-case NLL (nats) of labels y under the head's raw outputs."""
    y = np.asarray(y, dtype=np.float64)
    params = params_from_raw(family, raw)
    if family == "gaussian":
        mu, sigma = params[:, 0], params[:, 1]
        r = (y - mu) / sigma
        return special.LN_SQRT_2PI + np.log(sigma) + 0.5 * r * r
    if family == "laplace":
        mu, b = params[:, 0], params[:, 1]
        return _LN2 + np.log(b) + np.abs(y - mu) / b
    if np.any(y <= 0):
        raise DomainError("gamma support is y > 0; found non-positive labels")
    k, phi = params[:, 0], params[:, 1]
    return special.lgamma(k) + k * np.log(phi) - (k - 1.0) * np.log(y) + y / phi


def nll_grad_from_raw(family, y, raw):
    """Per-case NLL and its gradient w.r.t. the raw (pre-link) head outputs.

    The chain rule through the identity/softplus links is already applied;
    where the scale floor binds, the gradient is taken at the floored value
    (straight-through), so SGD can still push the raw output upward.
    """
    y = np.asarray(y, dtype=np.float64)
    raw = np.asarray(raw, dtype=np.float64)
    params = params_from_raw(family, raw)
    grad_param = np.empty_like(raw)

    if family == "gaussian":
        mu, sigma = params[:, 0], params[:, 1]
        r = y - mu
        grad_param[:, 0] = -r / sigma**2
        grad_param[:, 1] = 1.0 / sigma - r**2 / sigma**3
    elif family == "laplace":
        mu, b = params[:, 0], params[:, 1]
        r = y - mu
        grad_param[:, 0] = -np.sign(r) / b
        grad_param[:, 1] = 1.0 / b - np.abs(r) / b**2
    elif family == "gamma":
        k, phi = params[:, 0], params[:, 1]
        grad_param[:, 0] = special.digamma(k) + np.log(phi) - np.log(y)
        grad_param[:, 1] = k / phi - y / phi**2
    else:
        raise ConfigError(f"unknown family {family!r}")

    grad_raw = grad_param.copy()
    if family == "gamma":
        grad_raw[:, 0] *= special.softplus_grad(raw[:, 0])
    grad_raw[:, 1] *= special.softplus_grad(raw[:, 1])
    return nll_from_raw(family, y, raw), grad_raw


def distribution_from_params(family, params_row):
    if family == "gaussian":
        return Gaussian(float(params_row[0]), float(params_row[1]))
    if family == "laplace":
        return Laplace(float(params_row[0]), float(params_row[1]))
    return Gamma(float(params_row[0]), float(params_row[1]))


# ---------------------------------------------------------------------------
# Vectorized per-family helpers over (n, 2) parameter arrays
# ---------------------------------------------------------------------------

def family_nll(family, y, params):
    y = np.asarray(y, dtype=np.float64)
    params = np.asarray(params, dtype=np.float64)
    if family == "gaussian":
        r = (y - params[:, 0]) / params[:, 1]
        return special.LN_SQRT_2PI + np.log(params[:, 1]) + 0.5 * r * r
    if family == "laplace":
        return _LN2 + np.log(params[:, 1]) + np.abs(y - params[:, 0]) / params[:, 1]
    if np.any(y <= 0):
        raise DomainError("gamma support is y > 0; found non-positive labels")
    k, phi = params[:, 0], params[:, 1]
    return special.lgamma(k) + k * np.log(phi) - (k - 1.0) * np.log(y) + y / phi


def family_mean(family, params):
    if family == "gamma":
        return params[:, 0] * params[:, 1]
    return params[:, 0].copy()


def family_std(family, params):
    if family == "gaussian":
        return params[:, 1].copy()
    if family == "laplace":
        return params[:, 1] * np.sqrt(2.0)
    return np.sqrt(params[:, 0]) * params[:, 1]


def family_quantile(family, params, p):
    if not 0.0 < p < 1.0:
        raise DomainError(f"quantile probability must be in (0, 1), got {p}")
    if family == "gaussian":
        return params[:, 0] + params[:, 1] * special.probit(p)
    if family == "laplace":
        mu, b = params[:, 0], params[:, 1]
        if p < 0.5:
            return mu + b * np.log(2.0 * p)
        return mu - b * np.log(2.0 * (1.0 - p))
    x = special.inv_reg_lower_incomplete_gamma(params[:, 0], np.full(len(params), p), tol=1e-12)
    return x * params[:, 1]


def family_median(family, params):
    if family in ("gaussian", "laplace"):
        return params[:, 0].copy()
    return family_quantile(family, params, 0.5)
