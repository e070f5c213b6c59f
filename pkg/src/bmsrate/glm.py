"""Log-link Poisson and gamma regressions fitted by IRLS.

Exact log-likelihoods (all constants included), analytic gradients, and
profile maximum-likelihood estimation of the gamma shape.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, polygamma, psi as digamma

from .exceptions import ConvergenceError, DivergenceError, SchemaError

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 100
_ETA_CAP = 500.0  # exp() overflow guard; fits never legitimately get here
_BETA_CAP = 1e3


@dataclass(frozen=True)
class DesignMatrix:
    """Dense design with an explicit intercept column and column labels."""

    values: np.ndarray
    labels: tuple

    def __post_init__(self):
        X = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", X)
        object.__setattr__(self, "labels", tuple(self.labels))
        if X.ndim != 2:
            raise ValueError("design must be 2-dimensional")
        if len(self.labels) != X.shape[1]:
            raise ValueError("label count must match column count")
        if not np.isfinite(X).all():
            raise ValueError("design entries must be finite")
        if not np.all(X[:, 0] == 1.0):
            raise ValueError("first design column must be the intercept (all ones)")
        if X.shape[0] and np.any(np.all(X == 0.0, axis=0)):
            raise ValueError("design contains an all-zero column")

    @property
    def n_obs(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]


def design_matrix(columns: dict | None = None, n_obs: int | None = None) -> DesignMatrix:
    """Build a DesignMatrix from named columns, prepending the intercept."""
    arrays = [np.asarray(v, dtype=float) for v in (columns or {}).values()]
    if arrays:
        n_obs = len(arrays[0])
    elif n_obs is None:
        raise ValueError("n_obs required for an intercept-only design")
    values = np.column_stack([np.ones(n_obs)] + arrays)
    return DesignMatrix(values, ("intercept", *(columns or {}).keys()))


@dataclass(frozen=True)
class GlmFit:
    family: str  # "poisson" or "gamma"
    beta: np.ndarray
    labels: tuple
    loglik: float
    n_params: int
    n_obs: int
    converged: bool
    iterations: int
    shape: float | None = None  # gamma shape, None for Poisson

    def __post_init__(self):
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float))


# ---------------------------------------------------------------------------
# log-likelihoods and gradients
# ---------------------------------------------------------------------------


def poisson_loglik(beta, X, counts, exposure) -> float:
    eta = X @ beta + np.log(exposure)
    mu = np.exp(np.minimum(eta, _ETA_CAP))
    return float(np.sum(-mu + counts * eta - gammaln(counts + 1)))


def gamma_loglik(beta, shape, X, costs) -> float:
    eta = X @ beta
    mu = np.exp(np.minimum(eta, _ETA_CAP))
    g = shape
    return float(
        np.sum(
            -g * costs / mu
            - g * eta
            + (g - 1) * np.log(costs)
            + g * np.log(g)
            - gammaln(g)
        )
    )


def loglik_gradient(family, design, response, exposure, beta, shape=1.0) -> np.ndarray:
    """Exact analytic gradient of the family log-likelihood at beta."""
    X = design.values if isinstance(design, DesignMatrix) else np.asarray(design, float)
    beta = np.asarray(beta, dtype=float)
    response = np.asarray(response, dtype=float)
    if family == "poisson":
        exposure = np.asarray(exposure, dtype=float)
        mu = exposure * np.exp(np.minimum(X @ beta, _ETA_CAP))
        return X.T @ (response - mu)
    if family == "gamma":
        mu = np.exp(np.minimum(X @ beta, _ETA_CAP))
        return X.T @ (shape * (response - mu) / mu)
    raise ValueError(f"unknown family {family!r}")


# ---------------------------------------------------------------------------
# IRLS machinery
# ---------------------------------------------------------------------------


def independent_columns(X: np.ndarray) -> np.ndarray:
    """Indices of a maximal linearly independent leading set of columns.

    Greedy from the left so collinear trailing columns are the ones dropped.
    Works on the Gram matrix so the cost is one n*p^2 product.
    """
    G = (X.T @ X) / max(X.shape[0], 1)
    p = G.shape[0]
    full = np.linalg.matrix_rank(G, hermitian=True)
    if full == p:
        return np.arange(p)
    keep: list[int] = []
    for j in range(p):
        cand = keep + [j]
        sub = G[np.ix_(cand, cand)]
        if np.linalg.matrix_rank(sub, hermitian=True) == len(cand):
            keep.append(j)
    return np.array(keep, dtype=int)


def _wls_solve(X, w, z):
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(X * sw[:, None], z * sw, rcond=None)
    return coef


def _irls(X, loglik_fn, mu_eta, offset, beta0, tol, max_iter):
    """Generic log-link IRLS with step-halving; returns (beta, ll, iters, ok)."""
    beta = beta0.copy()
    ll = loglik_fn(beta)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        eta = X @ beta + offset
        mu, w = mu_eta(eta)
        z = eta - offset + np.where(w > 0, (mu_eta.response - mu) / np.maximum(mu, 1e-300), 0.0)
        new_beta = _wls_solve(X, w, z)
        new_ll = loglik_fn(new_beta)
        step = 0
        while not np.isfinite(new_ll) or new_ll < ll - 1e-12:
            step += 1
            if step > 50:
                break
            new_beta = 0.5 * (new_beta + beta)
            new_ll = loglik_fn(new_beta)
        if not np.isfinite(new_ll) or new_ll < ll - 1e-8:
            break
        delta = abs(new_ll - ll) / (abs(ll) + 1.0)
        beta, ll = new_beta, new_ll
        if delta < tol:
            converged = True
            break
        if np.max(np.abs(beta)) > _BETA_CAP:
            raise DivergenceError("coefficients diverged (separation?)")
    return beta, ll, it, converged


class _MuEta:
    """Mean and working weight for a log-link family."""

    def __init__(self, response, weight_kind):
        self.response = np.asarray(response, dtype=float)
        self.weight_kind = weight_kind

    def __call__(self, eta):
        mu = np.exp(np.minimum(eta, _ETA_CAP))
        if self.weight_kind == "poisson":
            return mu, mu
        return mu, np.ones_like(mu)  # gamma log-link: constant information


def _maybe_reduce(design: DesignMatrix):
    X = design.values
    keep = independent_columns(X)
    if len(keep) == X.shape[1]:
        return design, None
    dropped = [design.labels[j] for j in range(X.shape[1]) if j not in keep]
    warnings.warn(
        f"design is rank deficient; dropping collinear columns {dropped}",
        stacklevel=3,
    )
    reduced = DesignMatrix(X[:, keep], tuple(design.labels[j] for j in keep))
    return reduced, keep


def _expand_beta(beta, keep, n_cols):
    if keep is None:
        return beta
    full = np.zeros(n_cols)
    full[keep] = beta
    return full


def fit_poisson(
    design: DesignMatrix,
    counts,
    exposure,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> GlmFit:
    """Maximum-likelihood Poisson regression with log link and exposure offset."""
    counts = np.asarray(counts, dtype=float)
    exposure = np.asarray(exposure, dtype=float)
    if np.isscalar(exposure) or exposure.ndim == 0:
        exposure = np.full(len(counts), float(exposure))
    if design.n_obs != len(counts) or len(counts) != len(exposure):
        raise ValueError("design, counts and exposure must have equal length")
    if (counts < 0).any():
        raise ValueError("counts must be non-negative")
    if counts.sum() == 0:
        raise DivergenceError("all counts are zero: Poisson MLE is unbounded")
    reduced, keep = _maybe_reduce(design)
    X = reduced.values
    offset = np.log(exposure)
    beta0 = np.zeros(X.shape[1])
    beta0[0] = np.log(counts.sum() / exposure.sum())
    mu_eta = _MuEta(counts, "poisson")
    ll_fn = lambda b: poisson_loglik(b, X, counts, exposure)
    beta, ll, iters, ok = _irls(X, ll_fn, mu_eta, offset, beta0, tol, max_iter)
    beta = _expand_beta(beta, keep, design.n_cols)
    fit = GlmFit(
        family="poisson",
        beta=beta,
        labels=design.labels,
        loglik=ll,
        n_params=len(np.atleast_1d(beta)) if keep is None else len(keep),
        n_obs=design.n_obs,
        converged=ok,
        iterations=iters,
    )
    if not ok:
        raise ConvergenceError(
            f"Poisson IRLS did not converge in {max_iter} iterations", last_fit=fit
        )
    return fit


def _gamma_shape_mle(resid_term: float, n: int, init: float) -> float:
    """Solve log(g) + 1 - digamma(g) = -resid_term/n by Newton in log g."""
    target = -resid_term / n
    x = np.log(max(init, 1e-6))
    for _ in range(100):
        g = np.exp(x)
        f = np.log(g) + 1.0 - digamma(g) - target
        df = (1.0 / g - polygamma(1, g)) * g  # d/dx with x = log g
        step = f / df
        x_new = x - step
        if abs(x_new - x) < 1e-13:
            x = x_new
            break
        x = x_new
    return float(np.exp(x))


def fit_gamma(
    design: DesignMatrix,
    costs,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> GlmFit:
    """Gamma regression on individual claim costs with profile-MLE shape."""
    costs = np.asarray(costs, dtype=float)
    if design.n_obs != len(costs):
        raise ValueError("design and costs must have equal length")
    if (costs <= 0).any():
        raise ValueError("costs must be strictly positive")
    reduced, keep = _maybe_reduce(design)
    X = reduced.values
    beta0 = np.zeros(X.shape[1])
    beta0[0] = np.log(costs.mean())
    mu_eta = _MuEta(costs, "gamma")
    # beta is shape-free under the log link; profile the shape afterwards
    ll_fn = lambda b: gamma_loglik(b, 1.0, X, costs)
    beta, _, iters, ok = _irls(X, ll_fn, mu_eta, np.zeros(len(costs)), beta0, tol, max_iter)
    mu = np.exp(np.minimum(X @ beta, _ETA_CAP))
    resid_term = float(np.sum(np.log(costs / mu) - costs / mu))
    dev = 2.0 * np.sum(-np.log(costs / mu) + (costs - mu) / mu)
    init = len(costs) / max(dev, 1e-12)
    shape = _gamma_shape_mle(resid_term, len(costs), init)
    beta = _expand_beta(beta, keep, design.n_cols)
    ll = gamma_loglik(beta, shape, design.values, costs)
    n_free = design.n_cols if keep is None else len(keep)
    fit = GlmFit(
        family="gamma",
        beta=beta,
        labels=design.labels,
        loglik=ll,
        n_params=n_free + 1,
        n_obs=design.n_obs,
        converged=ok,
        iterations=iters,
        shape=shape,
    )
    if not ok:
        raise ConvergenceError(
            f"gamma IRLS did not converge in {max_iter} iterations", last_fit=fit
        )
    return fit


def predict_mean(fit: GlmFit, design: DesignMatrix, exposure=1.0) -> np.ndarray:
    """d * exp(X beta) for Poisson, exp(X beta) for gamma."""
    if tuple(design.labels) != tuple(fit.labels):
        raise SchemaError(
            f"design labels {design.labels} do not match fit labels {fit.labels}"
        )
    eta = design.values @ fit.beta
    mu = np.exp(np.minimum(eta, _ETA_CAP))
    if fit.family == "poisson":
        mu = np.asarray(exposure, dtype=float) * mu
    return mu
