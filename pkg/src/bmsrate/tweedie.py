"""Joint density of (claim count, annual amount), Double-GLM estimation,
and the compound Poisson-gamma <-> Tweedie reparametrization.

Only the 1 < p < 2 regime is supported: the annual amount has a point mass
at zero and a continuous positive part, and the pair (N, Y) has a closed
form joint density evaluated entirely in log space.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import gammaln

from .exceptions import BmsrateError, ConvergenceError, DivergenceError, SchemaError
from .glm import DesignMatrix, _maybe_reduce, _expand_beta, _wls_solve, _ETA_CAP

DEFAULT_P_GRID = tuple(np.round(np.arange(1.10, 1.901, 0.05), 4))


def _check_p(p: float) -> None:
    if not 1.0 < p < 2.0:
        raise ValueError(f"variance power p must be in (1, 2), got {p}")


def shape_from_p(p: float) -> float:
    """Per-claim gamma shape implied by the variance power."""
    _check_p(p)
    return (2.0 - p) / (p - 1.0)


def p_from_shape(shape: float) -> float:
    """Variance power implied by the per-claim gamma shape."""
    if shape <= 0:
        raise ValueError("gamma shape must be positive")
    return (shape + 2.0) / (shape + 1.0)


def default_weight(exposure, p: float):
    """Default Tweedie weight rule w = d^(p-1)."""
    _check_p(p)
    return np.asarray(exposure, dtype=float) ** (p - 1.0)


@dataclass(frozen=True)
class TweedieObservation:
    """One contract in the (count, annual amount) representation."""

    y: float
    n: int
    w: float = 1.0
    d: float = 1.0

    def __post_init__(self):
        if self.y < 0 or self.n < 0:
            raise ValueError("y and n must be non-negative")
        if (self.y == 0) != (self.n == 0):
            raise ValueError("y must be zero exactly when n is zero")
        if self.w <= 0 or self.d <= 0:
            raise ValueError("weight and exposure must be positive")


@dataclass(frozen=True)
class TweedieObservations:
    """Columnar container of observations used by the fitting routines."""

    y: np.ndarray
    n: np.ndarray
    w: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        for name in ("y", "n", "w", "d"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if not ((self.y == 0) == (self.n == 0)).all():
            raise ValueError("y must be zero exactly when n is zero")
        if (self.w <= 0).any() or (self.d <= 0).any():
            raise ValueError("weights and exposures must be positive")

    def __len__(self) -> int:
        return len(self.y)

    @classmethod
    def from_records(cls, obs: Sequence[TweedieObservation]) -> "TweedieObservations":
        return cls(
            y=[o.y for o in obs],
            n=[o.n for o in obs],
            w=[o.w for o in obs],
            d=[o.d for o in obs],
        )


def _as_columnar(obs) -> TweedieObservations:
    if isinstance(obs, TweedieObservations):
        return obs
    return TweedieObservations.from_records(list(obs))


# ---------------------------------------------------------------------------
# density, deviance, sampling
# ---------------------------------------------------------------------------


def joint_log_density(y, n, mu, phi, p, w=1.0):
    """Log density of (N, Y) for a single contract; vectorized.

    The zero branch is -(w mu^(2-p)) / ((2-p) phi); the positive branch adds
    the compound-gamma terms with per-claim shape gamma = (2-p)/(p-1).
    """
    _check_p(p)
    y = np.asarray(y, dtype=float)
    n = np.asarray(n, dtype=float)
    mu = np.asarray(mu, dtype=float)
    phi = np.asarray(phi, dtype=float)
    w = np.asarray(w, dtype=float)
    if (mu <= 0).any() or (phi <= 0).any() or (w <= 0).any():
        raise ValueError("mu, phi and w must be positive")
    if (y < 0).any() or (n < 0).any():
        raise ValueError("y and n must be non-negative")
    if not ((y == 0) == (n == 0)).all():
        raise ValueError("support requires y = 0 exactly when n = 0")
    g = shape_from_p(p)
    base = (w / phi) * (y * mu ** (1.0 - p) / (1.0 - p) - mu ** (2.0 - p) / (2.0 - p))
    pos = n > 0
    ys = np.where(pos, y, 1.0)  # placeholder to keep log() finite off-branch
    extra = n * (
        (g + 1.0) * (np.log(w) - np.log(phi))
        + g * np.log(ys)
        - g * np.log(p - 1.0)
        - np.log(2.0 - p)
    ) - gammaln(n + 1.0) - gammaln(np.where(pos, n * g, 1.0)) - np.log(ys)
    out = base + np.where(pos, extra, 0.0)
    return out if out.ndim else float(out)


def poisson_rate(mu, phi, p, w=1.0):
    """Claim-count intensity implied by the Tweedie parameters."""
    _check_p(p)
    return (np.asarray(w, float) / np.asarray(phi, float)) * np.asarray(
        mu, float
    ) ** (2.0 - p) / (2.0 - p)


def deviance_response(y, n, mu, phi, p, w=1.0):
    """Response D with E[D] = phi used by the dispersion GLM."""
    _check_p(p)
    y = np.asarray(y, dtype=float)
    n = np.asarray(n, dtype=float)
    mu = np.asarray(mu, dtype=float)
    phi = np.asarray(phi, dtype=float)
    w = np.asarray(w, dtype=float)
    if (mu <= 0).any() or (phi <= 0).any() or (w <= 0).any():
        raise ValueError("mu, phi and w must be positive")
    nu = dispersion_weight_nu(mu, phi, p, w)
    a = y * mu ** (1.0 - p) / (1.0 - p) - mu ** (2.0 - p) / (2.0 - p)
    out = (2.0 / nu) * (-w * a - phi * n / (p - 1.0)) + phi
    return out if out.ndim else float(out)


def dispersion_weight_nu(mu, phi, p, w=1.0):
    """nu = (2w/phi) mu^(2-p) / ((p-1)(2-p))."""
    _check_p(p)
    return (
        2.0
        * np.asarray(w, float)
        / np.asarray(phi, float)
        * np.asarray(mu, float) ** (2.0 - p)
        / ((p - 1.0) * (2.0 - p))
    )


def joint_deviance(y, n, mu, phi, p, w=1.0):
    """Deviance 2*(saturated - fitted) of the joint log density.

    The saturated mean is mu = y for positive amounts and the mu -> 0 limit
    (zero contribution) for claim-free contracts.
    """
    y = np.asarray(y, dtype=float)
    n = np.asarray(n, dtype=float)
    ld = joint_log_density(y, n, mu, phi, p, w)
    pos = y > 0
    sat = np.zeros_like(np.asarray(ld, dtype=float))
    if np.any(pos):
        sat_pos = joint_log_density(
            y[pos],
            n[pos],
            y[pos],
            np.broadcast_to(np.asarray(phi, float), y.shape)[pos],
            p,
            np.broadcast_to(np.asarray(w, float), y.shape)[pos],
        )
        sat[pos] = sat_pos
    out = 2.0 * (sat - ld)
    return out if out.ndim else float(out)


def sample_joint(mu, phi, p, w=1.0, size=None, rng=None):
    """Draw (n, y) pairs from the compound Poisson-gamma construction."""
    _check_p(p)
    rng = np.random.default_rng(rng)
    mu = np.broadcast_to(np.asarray(mu, float), np.shape(mu) or (size or 1,)).copy()
    if size is not None and mu.size == 1:
        mu = np.full(size, float(mu.ravel()[0]))
    phi = np.broadcast_to(np.asarray(phi, float), mu.shape)
    w = np.broadcast_to(np.asarray(w, float), mu.shape)
    lam = poisson_rate(mu, phi, p, w)
    n = rng.poisson(lam)
    g = shape_from_p(p)
    scale = (p - 1.0) * mu ** (p - 1.0) * phi / w
    y = np.zeros_like(mu)
    pos = n > 0
    y[pos] = rng.gamma(n[pos] * g, scale[pos])
    return n, y


def cpg_joint_loglik(y, n, freq_mean, claim_mean, shape):
    """CPG log-likelihood of a contract in the (N, Y) representation.

    Poisson count term plus the gamma density of the annual amount given the
    count (sum of n i.i.d. gamma costs has shape n*shape and mean
    n*claim_mean).
    """
    y = np.asarray(y, dtype=float)
    n = np.asarray(n, dtype=float)
    lam = np.asarray(freq_mean, dtype=float)
    m = np.asarray(claim_mean, dtype=float)
    out = -lam + n * np.log(lam) - gammaln(n + 1.0)
    pos = n > 0
    if np.any(pos):
        a = n[pos] * shape
        rate = shape / m[pos] if m.ndim else shape / m
        rate = np.broadcast_to(rate, a.shape) if np.ndim(rate) else rate
        yp = y[pos]
        out_pos = a * np.log(rate) + (a - 1.0) * np.log(yp) - rate * yp - gammaln(a)
        out = np.asarray(out, dtype=float)
        out[pos] = out[pos] + out_pos
    return out if np.ndim(out) else float(out)


# ---------------------------------------------------------------------------
# Double-GLM
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DglmFit:
    beta_mean: np.ndarray
    beta_disp: np.ndarray
    labels_mean: tuple
    labels_disp: tuple
    p: float
    loglik: float
    n_params: int
    n_obs: int
    converged: bool
    iterations: int

    def __post_init__(self):
        object.__setattr__(self, "beta_mean", np.asarray(self.beta_mean, float))
        object.__setattr__(self, "beta_disp", np.asarray(self.beta_disp, float))
        _check_p(self.p)


def dglm_mu(fit: DglmFit, design_mean: DesignMatrix, exposure=1.0) -> np.ndarray:
    if tuple(design_mean.labels) != tuple(fit.labels_mean):
        raise SchemaError("mean design labels do not match the fit")
    eta = design_mean.values @ fit.beta_mean
    return np.asarray(exposure, float) * np.exp(np.minimum(eta, _ETA_CAP))


def dglm_phi(fit: DglmFit, design_disp: DesignMatrix) -> np.ndarray:
    if tuple(design_disp.labels) != tuple(fit.labels_disp):
        raise SchemaError("dispersion design labels do not match the fit")
    eta = design_disp.values @ fit.beta_disp
    return np.exp(np.minimum(eta, _ETA_CAP))


def dglm_loglik(design_mean, design_disp, obs, beta_mean, beta_disp, p) -> float:
    obs = _as_columnar(obs)
    mu = np.asarray(obs.d, float) * np.exp(
        np.minimum(design_mean.values @ beta_mean, _ETA_CAP)
    )
    phi = np.exp(np.minimum(design_disp.values @ beta_disp, _ETA_CAP))
    return float(np.sum(joint_log_density(obs.y, obs.n, mu, phi, p, obs.w)))


def dglm_mean_gradient(design_mean, obs, beta_mean, phi, p) -> np.ndarray:
    """Gradient of the joint log-likelihood in the mean coefficients."""
    obs = _as_columnar(obs)
    mu = obs.d * np.exp(np.minimum(design_mean.values @ beta_mean, _ETA_CAP))
    u = (obs.w / phi) * (obs.y * mu ** (1.0 - p) - mu ** (2.0 - p))
    return design_mean.values.T @ u


def _mean_step(X, obs, beta, phi, p, loglik_fn, max_iter=50, tol=1e-12):
    """IRLS for the mean coefficients at fixed dispersion."""
    offset = np.log(obs.d)
    ll = loglik_fn(beta)
    for _ in range(max_iter):
        eta = X @ beta + offset
        mu = np.exp(np.minimum(eta, _ETA_CAP))
        wgt = (obs.w / phi) * mu ** (2.0 - p)
        z = eta - offset + (obs.y - mu) / mu
        new_beta = _wls_solve(X, wgt, z)
        new_ll = loglik_fn(new_beta)
        halvings = 0
        while (not np.isfinite(new_ll) or new_ll < ll - 1e-12) and halvings < 50:
            new_beta = 0.5 * (new_beta + beta)
            new_ll = loglik_fn(new_beta)
            halvings += 1
        if not np.isfinite(new_ll) or new_ll < ll - 1e-9:
            break
        done = abs(new_ll - ll) < tol * (abs(ll) + 1.0)
        beta, ll = new_beta, new_ll
        if done:
            break
    return beta, ll


def _disp_step(Xd, obs, beta_disp, mu, p, loglik_fn, max_iter=50, tol=1e-12):
    """Newton steps for the dispersion coefficients at fixed mean.

    Algebraically this is the weighted gamma GLM on the deviance response D
    with prior weights nu/(2 phi): both have the exact joint score as their
    fixed point.
    """
    ll = loglik_fn(beta_disp)
    for _ in range(max_iter):
        phi = np.exp(np.minimum(Xd @ beta_disp, _ETA_CAP))
        a = obs.y * mu ** (1.0 - p) / (1.0 - p) - mu ** (2.0 - p) / (2.0 - p)
        grad = Xd.T @ (-(obs.w / phi) * a - obs.n / (p - 1.0))
        wgt = (obs.w / phi) * (-a)
        H = Xd.T @ (Xd * wgt[:, None])
        try:
            delta = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            delta, *_ = np.linalg.lstsq(H, grad, rcond=None)
        new_beta = beta_disp + delta
        new_ll = loglik_fn(new_beta)
        halvings = 0
        while (not np.isfinite(new_ll) or new_ll < ll - 1e-12) and halvings < 50:
            delta *= 0.5
            new_beta = beta_disp + delta
            new_ll = loglik_fn(new_beta)
            halvings += 1
        if not np.isfinite(new_ll) or new_ll < ll - 1e-9:
            break
        done = abs(new_ll - ll) < tol * (abs(ll) + 1.0)
        beta_disp, ll = new_beta, new_ll
        if done:
            break
    return beta_disp, ll


def fit_dglm(
    design_mean: DesignMatrix,
    design_disp: DesignMatrix,
    obs,
    p: float,
    tol: float = 1e-10,
    max_iter: int = 100,
) -> DglmFit:
    """Alternate mean-model and dispersion-model fits until the joint
    log-likelihood stabilizes."""
    _check_p(p)
    obs = _as_columnar(obs)
    if design_mean.n_obs != len(obs) or design_disp.n_obs != len(obs):
        raise ValueError("designs must be row-aligned with the observations")
    red_m, keep_m = _maybe_reduce(design_mean)
    red_d, keep_d = _maybe_reduce(design_disp)
    Xm, Xd = red_m.values, red_d.values

    def ll_mean(bm, bd):
        return _full_loglik(Xm, Xd, obs, bm, bd, p)

    beta_mean = np.zeros(Xm.shape[1])
    beta_mean[0] = np.log(max(obs.y.sum() / obs.d.sum(), 1e-12))
    beta_disp = np.zeros(Xd.shape[1])
    phi0 = np.ones(len(obs))
    beta_mean, _ = _mean_step(
        Xm, obs, beta_mean, phi0, p, lambda b: _mean_part(Xm, obs, b, phi0, p)
    )
    mu = obs.d * np.exp(np.minimum(Xm @ beta_mean, _ETA_CAP))
    d0 = deviance_response(obs.y, obs.n, mu, np.ones(len(obs)), p, obs.w)
    beta_disp[0] = np.log(max(np.mean(d0), 1e-12))

    ll = ll_mean(beta_mean, beta_disp)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        phi = np.exp(np.minimum(Xd @ beta_disp, _ETA_CAP))
        beta_mean, _ = _mean_step(
            Xm, obs, beta_mean, phi, p, lambda b: _mean_part(Xm, obs, b, phi, p)
        )
        mu = obs.d * np.exp(np.minimum(Xm @ beta_mean, _ETA_CAP))
        beta_disp, _ = _disp_step(
            Xd, obs, beta_disp, mu, p, lambda b: _disp_part(Xd, obs, b, mu, p)
        )
        new_ll = ll_mean(beta_mean, beta_disp)
        if not np.isfinite(new_ll):
            raise DivergenceError("joint log-likelihood became non-finite")
        if abs(new_ll - ll) < tol * (abs(ll) + 1.0):
            ll = new_ll
            converged = True
            break
        ll = new_ll
    beta_mean_full = _expand_beta(beta_mean, keep_m, design_mean.n_cols)
    beta_disp_full = _expand_beta(beta_disp, keep_d, design_disp.n_cols)
    n_free = (len(keep_m) if keep_m is not None else design_mean.n_cols) + (
        len(keep_d) if keep_d is not None else design_disp.n_cols
    )
    fit = DglmFit(
        beta_mean=beta_mean_full,
        beta_disp=beta_disp_full,
        labels_mean=design_mean.labels,
        labels_disp=design_disp.labels,
        p=p,
        loglik=ll,
        n_params=n_free + 1,  # variance power counted as estimated
        n_obs=len(obs),
        converged=converged,
        iterations=it,
    )
    if not converged:
        raise ConvergenceError(
            f"DGLM did not converge in {max_iter} outer iterations", last_fit=fit
        )
    return fit


def _mean_part(Xm, obs, beta_mean, phi, p):
    mu = obs.d * np.exp(np.minimum(Xm @ beta_mean, _ETA_CAP))
    a = obs.y * mu ** (1.0 - p) / (1.0 - p) - mu ** (2.0 - p) / (2.0 - p)
    return float(np.sum((obs.w / phi) * a))


def _disp_part(Xd, obs, beta_disp, mu, p):
    eta = Xd @ beta_disp
    phi = np.exp(np.minimum(eta, _ETA_CAP))
    g = shape_from_p(p)
    a = obs.y * mu ** (1.0 - p) / (1.0 - p) - mu ** (2.0 - p) / (2.0 - p)
    return float(np.sum((obs.w / phi) * a - obs.n * (g + 1.0) * eta))


def _full_loglik(Xm, Xd, obs, beta_mean, beta_disp, p):
    mu = obs.d * np.exp(np.minimum(Xm @ beta_mean, _ETA_CAP))
    phi = np.exp(np.minimum(Xd @ beta_disp, _ETA_CAP))
    return float(np.sum(joint_log_density(obs.y, obs.n, mu, phi, p, obs.w)))


def select_p(design_mean, design_disp, obs, p_grid=DEFAULT_P_GRID):
    """Profile the variance power over a grid; ties go to the smaller p."""
    p_grid = list(p_grid)
    if not p_grid:
        raise ValueError("p_grid must be non-empty")
    results = []
    errors = []
    for p in sorted(p_grid):
        try:
            results.append((p, fit_dglm(design_mean, design_disp, obs, p)))
        except BmsrateError as exc:
            errors.append((p, exc))
    if not results:
        raise BmsrateError(f"all variance-power fits failed: {errors}")
    best_p, best_fit = results[0]
    for p, fit in results[1:]:
        if fit.loglik > best_fit.loglik + 1e-9:
            best_p, best_fit = p, fit
    return best_p, best_fit


# ---------------------------------------------------------------------------
# CPG -> Tweedie mapping
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CpgTweedieMap:
    """Per-observation Tweedie parameters implied by a fitted CPG pair."""

    mu: np.ndarray
    phi: np.ndarray
    mean_lp: np.ndarray
    disp_lp: np.ndarray
    w: np.ndarray
    p: float


def _linear_predictor(fit, design_cov: DesignMatrix, level) -> np.ndarray:
    k = design_cov.n_cols
    if len(fit.beta) == k:
        return design_cov.values @ fit.beta
    if len(fit.beta) == k + 1:
        return design_cov.values @ fit.beta[:k] + fit.beta[k] * np.asarray(level, float)
    raise SchemaError(
        "fit must have one coefficient per covariate column plus at most one "
        "level coefficient"
    )


def cpg_to_tweedie(
    poisson_fit,
    gamma_fit,
    design_cov: DesignMatrix,
    level_freq,
    level_sev,
    p: float,
    exposure=1.0,
) -> CpgTweedieMap:
    """Map fitted frequency/severity models into Tweedie (mu, phi).

    The mean predictor adds the two linear predictors (levels included); the
    dispersion predictor combines them with weights -(p-1) and (2-p) plus
    the -log(2-p) constant.  The default weight rule w = d^(p-1) makes the
    mapped joint likelihood equal the CPG likelihood in the (N, Y)
    representation.
    """
    _check_p(p)
    exposure = np.asarray(exposure, dtype=float)
    lp_n = _linear_predictor(poisson_fit, design_cov, level_freq)
    lp_z = _linear_predictor(gamma_fit, design_cov, level_sev)
    mean_lp = lp_n + lp_z
    disp_lp = -np.log(2.0 - p) - (p - 1.0) * lp_n + (2.0 - p) * lp_z
    w = default_weight(np.broadcast_to(exposure, mean_lp.shape), p)
    mu = np.broadcast_to(exposure, mean_lp.shape) * np.exp(mean_lp)
    phi = np.exp(disp_lp)
    return CpgTweedieMap(mu=mu, phi=phi, mean_lp=mean_lp, disp_lp=disp_lp, w=w, p=p)
