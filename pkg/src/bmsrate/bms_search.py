"""Structural estimation of the bonus-malus scale by profile likelihood.

The jump parameter and the two level bounds are searched on integer grids;
for each candidate the levels are recomputed from the windowed recursion
and the inner mean model is refit.  The unclamped special case with the
experience columns kept separate is the Kappa-N model.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .glm import DesignMatrix, fit_gamma, fit_poisson
from .models import (
    KAPPA_COLUMN,
    LEVEL_COLUMN,
    N_COLUMN,
    FittedModel,
    _claim_row_index,
    contract_design,
    fit_frequency,
    fit_severity,
    fit_loss_cost_tweedie,
    tweedie_observations,
)
from .portfolio import (
    DEFAULT_WINDOW_YEARS,
    BmsStructure,
    Portfolio,
    level_matrix,
    policy_year_panel,
)
from .tweedie import fit_dglm

DEFAULT_PSI_GRID = tuple(range(1, 7))
DEFAULT_LMIN_GRID = tuple(range(90, 101))
DEFAULT_LMAX_GRID = tuple(range(100, 111))

_TIE_TOL = 1e-9


@dataclass(frozen=True)
class KappaNResult:
    """Kappa-N fit with the experience coefficients read off explicitly.

    gamma0 is the per-claim-free-year discount parameter (negative of the
    coefficient on the claim-free-years column), gamma1 the per-claim
    surcharge parameter, and psi their ratio.
    """

    model: FittedModel
    gamma0: float
    gamma1: float

    @property
    def psi(self) -> float:
        return self.gamma1 / self.gamma0


@dataclass(frozen=True)
class ProfileEntry:
    psi: int
    l_min: int | None
    l_max: int | None
    loglik: float
    n_params: int


@dataclass(frozen=True)
class BmsModel:
    """Best structure found by the profile search plus the full grid trace."""

    structure: BmsStructure
    inner_fit: object
    target: str
    profile_table: tuple
    window_years: int = DEFAULT_WINDOW_YEARS

    @property
    def loglik(self) -> float:
        return self.inner_fit.loglik

    @property
    def n_params(self) -> int:
        return self.inner_fit.n_params + 3  # psi, l_min, l_max

    @property
    def gamma0(self) -> float:
        beta = (
            self.inner_fit.beta_mean
            if hasattr(self.inner_fit, "beta_mean")
            else self.inner_fit.beta
        )
        labels = (
            self.inner_fit.labels_mean
            if hasattr(self.inner_fit, "labels_mean")
            else self.inner_fit.labels
        )
        return float(beta[list(labels).index(LEVEL_COLUMN)])

    def as_fitted_model(self) -> FittedModel:
        target = (
            "loss_cost_tweedie" if self.target == "loss_cost" else self.target
        )
        return FittedModel(
            target=target,
            kind="bms",
            window_years=self.window_years,
            covariate_names=tuple(
                lbl
                for lbl in (
                    self.inner_fit.labels_mean
                    if hasattr(self.inner_fit, "labels_mean")
                    else self.inner_fit.labels
                )
                if lbl not in ("intercept", LEVEL_COLUMN)
            ),
            structure=self.structure,
            fit=self.inner_fit,
        )


def fit_kappa_n(
    portfolio: Portfolio,
    target: str,
    window_years: int = DEFAULT_WINDOW_YEARS,
    covariates=None,
    p: float | None = None,
) -> KappaNResult:
    """Fit the model with the claim-free-years and past-claims columns."""
    if target == "frequency":
        model = fit_frequency(portfolio, "kappa_n", window_years, covariates=covariates)
    elif target == "severity":
        model = fit_severity(portfolio, "kappa_n", window_years, covariates=covariates)
    elif target in ("loss_cost", "loss_cost_tweedie"):
        if p is None:
            raise ValueError("loss-cost Kappa-N requires the variance power p")
        model = fit_loss_cost_tweedie(
            portfolio, p, "kappa_n", window_years, covariates=covariates
        )
    else:
        raise ValueError(f"unknown target {target!r}")
    fit = model.fit
    beta = fit.beta_mean if hasattr(fit, "beta_mean") else fit.beta
    labels = list(fit.labels_mean if hasattr(fit, "labels_mean") else fit.labels)
    gamma0 = -float(beta[labels.index(KAPPA_COLUMN)])
    gamma1 = float(beta[labels.index(N_COLUMN)])
    if gamma0 <= 0:
        warnings.warn(
            f"claim-free-year coefficient implies a surcharge (gamma0={gamma0:.4g}"
            " <= 0); no experience discount in this fit",
            stacklevel=2,
        )
    return KappaNResult(model=model, gamma0=gamma0, gamma1=gamma1)


def _structure_candidates(psi_grid, lmin_grid, lmax_grid):
    cands = []
    for psi in psi_grid:
        for lmin in lmin_grid:
            for lmax in lmax_grid:
                if lmin is None and lmax is None:
                    cands.append(BmsStructure(psi=psi))
                    continue
                if lmin is None or lmax is None:
                    continue
                if lmin <= 100 <= lmax:
                    cands.append(BmsStructure(psi=psi, l_min=lmin, l_max=lmax))
    return cands


def _width(structure: BmsStructure) -> float:
    if not structure.clamped:
        return np.inf
    return structure.l_max - structure.l_min


def _better(cand_ll, cand_struct, best_ll, best_struct) -> bool:
    if cand_ll > best_ll + _TIE_TOL:
        return True
    if cand_ll < best_ll - _TIE_TOL:
        return False
    # tie: smaller jump parameter first, then the wider level range
    return (cand_struct.psi, -_width(cand_struct)) < (
        best_struct.psi,
        -_width(best_struct),
    )


def fit_bms(
    portfolio: Portfolio,
    target: str,
    covariates=None,
    psi_grid=DEFAULT_PSI_GRID,
    lmin_grid=DEFAULT_LMIN_GRID,
    lmax_grid=DEFAULT_LMAX_GRID,
    window_years: int = DEFAULT_WINDOW_YEARS,
    p: float | None = None,
) -> BmsModel:
    """Profile-likelihood search over (psi, l_min, l_max)."""
    candidates = _structure_candidates(psi_grid, lmin_grid, lmax_grid)
    if not candidates:
        raise ValueError("structure grid is empty or infeasible")
    if target in ("loss_cost", "loss_cost_tweedie") and p is None:
        raise ValueError("loss-cost BMS requires the variance power p")

    base = contract_design(portfolio, "standard", covariates=covariates)
    panel = policy_year_panel(portfolio)
    if target == "severity":
        claim_rows = _claim_row_index(portfolio)
        costs = portfolio.claims["cost"].to_numpy(float)
    elif target == "frequency":
        counts = portfolio.contracts["claim_count"].to_numpy(float)
        exposure = portfolio.contracts["exposure"].to_numpy(float)
    else:
        obs = tweedie_observations(portfolio, p)
    labels = (*base.labels, LEVEL_COLUMN)

    best = None
    best_fit = None
    table = []
    for structure in candidates:
        lev = level_matrix(panel.active, panel.claims, structure, window_years)[
            panel.row_policy, panel.row_year
        ]
        values = np.column_stack([base.values, lev])
        if target == "severity":
            design = DesignMatrix(values[claim_rows], labels)
            fit = fit_gamma(design, costs)
        elif target == "frequency":
            design = DesignMatrix(values, labels)
            fit = fit_poisson(design, counts, exposure)
        else:
            design = DesignMatrix(values, labels)
            fit = fit_dglm(design, design, obs, p)
        table.append(
            ProfileEntry(
                psi=int(structure.psi),
                l_min=structure.l_min,
                l_max=structure.l_max,
                loglik=fit.loglik,
                n_params=fit.n_params + 3,
            )
        )
        if best is None or _better(fit.loglik, structure, best_fit.loglik, best):
            best, best_fit = structure, fit
    return BmsModel(
        structure=best,
        inner_fit=best_fit,
        target=target,
        profile_table=tuple(table),
        window_years=window_years,
    )


def profile_table_to_csv(table, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["psi", "l_min", "l_max", "loglik", "n_params"])
        for row in table:
            writer.writerow(
                [
                    row.psi,
                    "" if row.l_min is None else row.l_min,
                    "" if row.l_max is None else row.l_max,
                    row.loglik,
                    row.n_params,
                ]
            )
