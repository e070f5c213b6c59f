"""Model assembly: turn a portfolio into family-ready datasets, fit the
three target variables, and package the results for prediction and
out-of-sample scoring.

Model kinds:
  standard - covariates only;
  kappa_n  - covariates plus the two experience columns (claim-free years,
             past claim count);
  bms      - covariates plus a single bonus-malus level column computed
             from a given scale structure.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .exceptions import SchemaError
from .glm import (
    DesignMatrix,
    GlmFit,
    fit_gamma,
    fit_poisson,
    predict_mean,
)
from .portfolio import (
    DEFAULT_WINDOW_YEARS,
    BmsStructure,
    Portfolio,
    compute_scope_arrays,
    contract_levels,
)
from .tweedie import (
    DglmFit,
    TweedieObservations,
    cpg_joint_loglik,
    cpg_to_tweedie,
    default_weight,
    dglm_mu,
    dglm_phi,
    fit_dglm,
    joint_log_density,
    p_from_shape,
)

MODEL_KINDS = ("standard", "kappa_n", "bms")
TARGETS = ("frequency", "severity", "loss_cost_cpg", "loss_cost_tweedie")
KAPPA_COLUMN = "kappa_past_free_years"
N_COLUMN = "n_past_claims"
LEVEL_COLUMN = "bms_level"


def _extra_columns(portfolio, kind, window_years, structure):
    if kind == "standard":
        return {}
    if kind == "kappa_n":
        arr = compute_scope_arrays(portfolio, window_years)
        return {
            KAPPA_COLUMN: arr.kappa.astype(float),
            N_COLUMN: arr.n.astype(float),
        }
    if kind == "bms":
        if structure is None:
            raise ValueError("kind 'bms' requires a structure")
        lev = contract_levels(portfolio, structure, window_years)
        return {LEVEL_COLUMN: np.asarray(lev, dtype=float)}
    raise ValueError(f"unknown model kind {kind!r}")


def contract_design(
    portfolio: Portfolio,
    kind: str = "standard",
    window_years: int = DEFAULT_WINDOW_YEARS,
    structure: BmsStructure | None = None,
    covariates=None,
) -> DesignMatrix:
    """One design row per contract: intercept, covariates, experience columns."""
    names = list(portfolio.covariate_names if covariates is None else covariates)
    cols = {name: portfolio.contracts[name].to_numpy(dtype=float) for name in names}
    cols.update(_extra_columns(portfolio, kind, window_years, structure))
    values = np.column_stack(
        [np.ones(portfolio.n_contracts)] + [cols[k] for k in cols]
    )
    return DesignMatrix(values, ("intercept", *cols.keys()))


def claim_design(
    portfolio: Portfolio,
    kind: str = "standard",
    window_years: int = DEFAULT_WINDOW_YEARS,
    structure: BmsStructure | None = None,
    covariates=None,
) -> DesignMatrix:
    """One design row per individual claim, aligned with portfolio.claims.

    Experience columns are frozen at contract start: every claim of a
    contract carries the level and scope of that contract.
    """
    base = contract_design(portfolio, kind, window_years, structure, covariates)
    rows = _claim_row_index(portfolio)
    return DesignMatrix(base.values[rows], base.labels)


def _claim_row_index(portfolio: Portfolio) -> np.ndarray:
    keys = ["policy_id", "vehicle_id", "contract_index"]
    contract_pos = pd.Series(
        np.arange(portfolio.n_contracts),
        index=pd.MultiIndex.from_frame(portfolio.contracts[keys]),
    )
    claim_keys = pd.MultiIndex.from_frame(portfolio.claims[keys])
    return contract_pos.loc[claim_keys].to_numpy()


def contract_amounts(portfolio: Portfolio) -> np.ndarray:
    """Total claim cost per contract (zero for claim-free contracts)."""
    if len(portfolio.claims) == 0:
        return np.zeros(portfolio.n_contracts)
    rows = _claim_row_index(portfolio)
    y = np.zeros(portfolio.n_contracts)
    np.add.at(y, rows, portfolio.claims["cost"].to_numpy(dtype=float))
    return y


def tweedie_observations(portfolio: Portfolio, p: float) -> TweedieObservations:
    d = portfolio.contracts["exposure"].to_numpy(dtype=float)
    return TweedieObservations(
        y=contract_amounts(portfolio),
        n=portfolio.contracts["claim_count"].to_numpy(dtype=float),
        w=default_weight(d, p),
        d=d,
    )


# ---------------------------------------------------------------------------
# fitted-model artifacts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FittedModel:
    """A fitted single-target model with everything needed to re-score it."""

    target: str  # frequency | severity | loss_cost_tweedie
    kind: str  # standard | kappa_n | bms
    window_years: int
    covariate_names: tuple
    structure: BmsStructure | None
    fit: object  # GlmFit or DglmFit

    def __post_init__(self):
        if self.target not in ("frequency", "severity", "loss_cost_tweedie"):
            raise ValueError(f"unknown target {self.target!r}")
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.kind == "bms" and self.structure is None:
            raise ValueError("bms models carry their scale structure")

    @property
    def n_params(self) -> int:
        extra = 3 if self.kind == "bms" else 0  # psi, l_min, l_max
        return self.fit.n_params + extra

    def design_for(self, portfolio: Portfolio) -> DesignMatrix:
        builder = claim_design if self.target == "severity" else contract_design
        return builder(
            portfolio,
            self.kind,
            self.window_years,
            self.structure,
            covariates=self.covariate_names,
        )

    def design_for_contracts(self, portfolio: Portfolio) -> DesignMatrix:
        """Design evaluated per contract even for per-claim (severity) models."""
        return contract_design(
            portfolio,
            self.kind,
            self.window_years,
            self.structure,
            covariates=self.covariate_names,
        )

    def predict(self, portfolio: Portfolio) -> np.ndarray:
        """Per-row fitted mean: frequency and loss cost per contract,
        severity per claim."""
        design = self.design_for(portfolio)
        if self.target == "frequency":
            return predict_mean(
                self.fit, design, portfolio.contracts["exposure"].to_numpy(float)
            )
        if self.target == "severity":
            return predict_mean(self.fit, design)
        return dglm_mu(
            self.fit, design, portfolio.contracts["exposure"].to_numpy(float)
        )

    def loglik_on(self, portfolio: Portfolio) -> float:
        """Total log-likelihood of the portfolio at the fitted parameters."""
        design = self.design_for(portfolio)
        if self.target == "frequency":
            from .glm import poisson_loglik

            return poisson_loglik(
                self.fit.beta,
                design.values,
                portfolio.contracts["claim_count"].to_numpy(float),
                portfolio.contracts["exposure"].to_numpy(float),
            )
        if self.target == "severity":
            from .glm import gamma_loglik

            return gamma_loglik(
                self.fit.beta,
                self.fit.shape,
                design.values,
                portfolio.claims["cost"].to_numpy(float),
            )
        obs = tweedie_observations(portfolio, self.fit.p)
        mu = dglm_mu(self.fit, design, obs.d)
        phi = dglm_phi(self.fit, design)
        return float(np.sum(joint_log_density(obs.y, obs.n, mu, phi, self.fit.p, obs.w)))


@dataclass(frozen=True)
class CpgModel:
    """Frequency and severity components fitted separately and combined."""

    frequency: FittedModel
    severity: FittedModel

    def __post_init__(self):
        if self.frequency.target != "frequency" or self.severity.target != "severity":
            raise ValueError("components must be a frequency and a severity model")

    @property
    def p(self) -> float:
        return p_from_shape(self.severity.fit.shape)

    @property
    def n_params(self) -> int:
        return self.frequency.n_params + self.severity.n_params

    def predict(self, portfolio: Portfolio) -> np.ndarray:
        """Expected annual amount per contract: frequency times severity."""
        freq = self.frequency.predict(portfolio)
        sev_design = self.severity.design_for_contracts(portfolio)
        sev = predict_mean(self.severity.fit, sev_design)
        return freq * sev

    def loglik_on(self, portfolio: Portfolio) -> float:
        """Joint (count, amount) log-likelihood at the fitted parameters."""
        freq = self.frequency.predict(portfolio)
        sev = predict_mean(
            self.severity.fit, self.severity.design_for_contracts(portfolio)
        )
        y = contract_amounts(portfolio)
        n = portfolio.contracts["claim_count"].to_numpy(float)
        return float(
            np.sum(cpg_joint_loglik(y, n, freq, sev, self.severity.fit.shape))
        )

    def tweedie_map(self, portfolio: Portfolio):
        """Per-contract Tweedie (mu, phi) implied by the two components."""
        base_labels = ("intercept", *self.frequency.covariate_names)
        design_cov = contract_design(
            portfolio, "standard", covariates=self.frequency.covariate_names
        )
        lf = _component_level(self.frequency, portfolio)
        ls = _component_level(self.severity, portfolio)
        pois = _restrict_to(self.frequency.fit, base_labels, LEVEL_COLUMN)
        gam = _restrict_to(self.severity.fit, base_labels, LEVEL_COLUMN)
        return cpg_to_tweedie(
            pois,
            gam,
            design_cov,
            lf,
            ls,
            self.p,
            exposure=portfolio.contracts["exposure"].to_numpy(float),
        )


def _component_level(model: FittedModel, portfolio: Portfolio) -> np.ndarray:
    if model.kind == "bms":
        return contract_levels(portfolio, model.structure, model.window_years)
    return np.zeros(portfolio.n_contracts)


def _restrict_to(fit: GlmFit, base_labels, level_label):
    """Reorder a fit's coefficients as (covariates..., optional level)."""
    labels = tuple(fit.labels)
    if labels == tuple(base_labels):
        return fit
    if labels == (*base_labels, level_label):
        return fit
    raise SchemaError(
        f"fit labels {labels} are not the covariates plus an optional level"
    )


# ---------------------------------------------------------------------------
# fitting entry points
# ---------------------------------------------------------------------------


def fit_frequency(
    portfolio: Portfolio,
    kind: str = "standard",
    window_years: int = DEFAULT_WINDOW_YEARS,
    structure: BmsStructure | None = None,
    covariates=None,
) -> FittedModel:
    design = contract_design(portfolio, kind, window_years, structure, covariates)
    fit = fit_poisson(
        design,
        portfolio.contracts["claim_count"].to_numpy(float),
        portfolio.contracts["exposure"].to_numpy(float),
    )
    return FittedModel(
        target="frequency",
        kind=kind,
        window_years=window_years,
        covariate_names=tuple(
            portfolio.covariate_names if covariates is None else covariates
        ),
        structure=structure,
        fit=fit,
    )


def fit_severity(
    portfolio: Portfolio,
    kind: str = "standard",
    window_years: int = DEFAULT_WINDOW_YEARS,
    structure: BmsStructure | None = None,
    covariates=None,
) -> FittedModel:
    design = claim_design(portfolio, kind, window_years, structure, covariates)
    fit = fit_gamma(design, portfolio.claims["cost"].to_numpy(float))
    return FittedModel(
        target="severity",
        kind=kind,
        window_years=window_years,
        covariate_names=tuple(
            portfolio.covariate_names if covariates is None else covariates
        ),
        structure=structure,
        fit=fit,
    )


def fit_loss_cost_tweedie(
    portfolio: Portfolio,
    p: float,
    kind: str = "standard",
    window_years: int = DEFAULT_WINDOW_YEARS,
    structure: BmsStructure | None = None,
    covariates=None,
) -> FittedModel:
    design = contract_design(portfolio, kind, window_years, structure, covariates)
    obs = tweedie_observations(portfolio, p)
    fit = fit_dglm(design, design, obs, p)
    return FittedModel(
        target="loss_cost_tweedie",
        kind=kind,
        window_years=window_years,
        covariate_names=tuple(
            portfolio.covariate_names if covariates is None else covariates
        ),
        structure=structure,
        fit=fit,
    )


def fit_loss_cost_cpg(
    portfolio: Portfolio,
    kind: str = "standard",
    window_years: int = DEFAULT_WINDOW_YEARS,
    structure_freq: BmsStructure | None = None,
    structure_sev: BmsStructure | None = None,
    covariates=None,
) -> CpgModel:
    return CpgModel(
        frequency=fit_frequency(portfolio, kind, window_years, structure_freq, covariates),
        severity=fit_severity(portfolio, kind, window_years, structure_sev, covariates),
    )


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def _structure_to_dict(structure):
    if structure is None:
        return None
    return {
        "psi": structure.psi,
        "l_min": structure.l_min,
        "l_max": structure.l_max,
        "l_start": structure.l_start,
    }


def _structure_from_dict(d):
    if d is None:
        return None
    return BmsStructure(**d)


def _fit_to_dict(fit):
    if isinstance(fit, DglmFit):
        return {
            "type": "dglm",
            "beta_mean": fit.beta_mean.tolist(),
            "beta_disp": fit.beta_disp.tolist(),
            "labels_mean": list(fit.labels_mean),
            "labels_disp": list(fit.labels_disp),
            "p": fit.p,
            "loglik": fit.loglik,
            "n_params": fit.n_params,
            "n_obs": fit.n_obs,
            "converged": fit.converged,
            "iterations": fit.iterations,
        }
    return {
        "type": "glm",
        "family": fit.family,
        "beta": fit.beta.tolist(),
        "labels": list(fit.labels),
        "loglik": fit.loglik,
        "n_params": fit.n_params,
        "n_obs": fit.n_obs,
        "converged": fit.converged,
        "iterations": fit.iterations,
        "shape": fit.shape,
    }


def _fit_from_dict(d):
    d = dict(d)
    kind = d.pop("type")
    if kind == "dglm":
        d["labels_mean"] = tuple(d["labels_mean"])
        d["labels_disp"] = tuple(d["labels_disp"])
        return DglmFit(**d)
    d["labels"] = tuple(d["labels"])
    return GlmFit(**d)


def model_to_dict(model) -> dict:
    if isinstance(model, CpgModel):
        return {
            "type": "cpg",
            "frequency": model_to_dict(model.frequency),
            "severity": model_to_dict(model.severity),
        }
    return {
        "type": "single",
        "target": model.target,
        "kind": model.kind,
        "window_years": model.window_years,
        "covariate_names": list(model.covariate_names),
        "structure": _structure_to_dict(model.structure),
        "fit": _fit_to_dict(model.fit),
    }


def model_from_dict(d):
    if d["type"] == "cpg":
        return CpgModel(
            frequency=model_from_dict(d["frequency"]),
            severity=model_from_dict(d["severity"]),
        )
    return FittedModel(
        target=d["target"],
        kind=d["kind"],
        window_years=d["window_years"],
        covariate_names=tuple(d["covariate_names"]),
        structure=_structure_from_dict(d["structure"]),
        fit=_fit_from_dict(d["fit"]),
    )


def save_model(model, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
