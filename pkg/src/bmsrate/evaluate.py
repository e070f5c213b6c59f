"""Fit statistics, out-of-sample logarithmic scoring, relativity tables,
insured-type ratio reports, and the off-balance correction."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, asdict

import numpy as np

from .models import contract_amounts
from .portfolio import DEFAULT_WINDOW_YEARS, BmsStructure, Portfolio, insured_types

INSURED_TYPES = ("A", "B", "C", "D", "E", "F")


def aic(loglik: float, n_params: int) -> float:
    return -2.0 * loglik + 2.0 * n_params


def bic(loglik: float, n_params: int, n_obs: int) -> float:
    return -2.0 * loglik + n_params * np.log(n_obs)


def logarithmic_score(model, test_portfolio: Portfolio) -> float:
    """Negative log-likelihood of the test set at the trained parameters.

    Test-set levels and experience columns are rebuilt from the test
    policies' own histories using the training-estimated structure.
    """
    return -model.loglik_on(test_portfolio)


# ---------------------------------------------------------------------------
# relativities
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RelativityTable:
    """Premium relativities of a scale against the start-level baseline."""

    gamma0: float
    structure: BmsStructure
    levels: tuple
    relativities: tuple
    surcharge_per_claim: float
    claims_free_discount: float
    min_relativity: float
    max_relativity: float


def relativity_table(gamma0: float, structure: BmsStructure) -> RelativityTable:
    """exp(gamma0 * (level - start)) per level plus summary impacts.

    The surcharge is the relative premium increase caused by one claim,
    exp(psi * gamma0) - 1; the discount is the relative decrease earned by
    one claim-free year, 1 - exp(-gamma0), reported as a positive number.
    """
    if structure.clamped:
        levels = tuple(range(structure.l_min, structure.l_max + 1))
    else:
        levels = (structure.l_start,)
    rel = tuple(
        float(np.exp(gamma0 * (lev - structure.l_start))) for lev in levels
    )
    return RelativityTable(
        gamma0=gamma0,
        structure=structure,
        levels=levels,
        relativities=rel,
        surcharge_per_claim=float(np.exp(structure.psi * gamma0) - 1.0),
        claims_free_discount=float(1.0 - np.exp(-gamma0)),
        min_relativity=min(rel),
        max_relativity=max(rel),
    )


def combined_cpg_relativity(freq_rel: float, sev_rel: float) -> float:
    """Total-premium relativity: frequency relativity times severity relativity."""
    if freq_rel <= 0 or sev_rel <= 0:
        raise ValueError("relativities must be positive")
    return freq_rel * sev_rel


def relativity_table_to_csv(table: RelativityTable, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["level", "relativity"])
        for lev, rel in zip(table.levels, table.relativities):
            writer.writerow([lev, rel])


# ---------------------------------------------------------------------------
# insured-type group ratios
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GroupRatioRow:
    insured_type: str
    n_contracts: int
    observed_frequency: float
    predicted_frequency: float
    observed_severity: float
    predicted_severity: float
    observed_loss_cost: float
    predicted_loss_cost: float


def group_ratio_report(
    portfolio: Portfolio,
    predictions: dict,
    window_years: int = DEFAULT_WINDOW_YEARS,
):
    """Per insured type, group mean divided by portfolio mean.

    predictions holds per-contract arrays under any of the keys
    'frequency' (expected claim counts), 'severity' (expected cost per
    claim), 'loss_cost' (expected annual amount).  Observed severities use
    total cost over total claims; groups without claims report NaN there.
    """
    types = insured_types(portfolio, window_years)
    counts = portfolio.contracts["claim_count"].to_numpy(float)
    exposure = portfolio.contracts["exposure"].to_numpy(float)
    amounts = contract_amounts(portfolio)
    pred_freq = predictions.get("frequency")
    pred_sev = predictions.get("severity")
    pred_lc = predictions.get("loss_cost")

    def _means(mask):
        d = exposure[mask].sum()
        n = counts[mask].sum()
        tot = amounts[mask].sum()
        freq = n / d if d > 0 else np.nan
        sev = tot / n if n > 0 else np.nan
        lc = tot / d if d > 0 else np.nan
        pf = pred_freq[mask].sum() / d if pred_freq is not None and d > 0 else np.nan
        if pred_sev is not None:
            wts = pred_freq[mask] if pred_freq is not None else np.ones(mask.sum())
            ps = float(np.average(pred_sev[mask], weights=wts)) if mask.any() else np.nan
        else:
            ps = np.nan
        pl = pred_lc[mask].sum() / d if pred_lc is not None and d > 0 else np.nan
        return freq, sev, lc, pf, ps, pl

    all_mask = np.ones(len(counts), dtype=bool)
    base = _means(all_mask)
    rows = []
    for t in INSURED_TYPES:
        mask = types == t
        if not mask.any():
            continue
        g = _means(mask)
        rows.append(
            GroupRatioRow(
                insured_type=t,
                n_contracts=int(mask.sum()),
                observed_frequency=g[0] / base[0],
                predicted_frequency=g[3] / base[3] if pred_freq is not None else np.nan,
                observed_severity=g[1] / base[1],
                predicted_severity=g[4] / base[4] if pred_sev is not None else np.nan,
                observed_loss_cost=g[2] / base[2],
                predicted_loss_cost=g[5] / base[5] if pred_lc is not None else np.nan,
            )
        )
    return tuple(rows)


def group_ratios_to_csv(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            [
                "insured_type",
                "n_contracts",
                "observed_frequency",
                "predicted_frequency",
                "observed_severity",
                "predicted_severity",
                "observed_loss_cost",
                "predicted_loss_cost",
            ]
        )
        for r in rows:
            writer.writerow(
                [
                    r.insured_type,
                    r.n_contracts,
                    r.observed_frequency,
                    r.predicted_frequency,
                    r.observed_severity,
                    r.predicted_severity,
                    r.observed_loss_cost,
                    r.predicted_loss_cost,
                ]
            )


def off_balance_factor(predicted, observed) -> float:
    """Sum of observed over sum of predicted; rescales to total balance."""
    predicted = np.asarray(predicted, dtype=float)
    observed = np.asarray(observed, dtype=float)
    if len(predicted) != len(observed):
        raise ValueError("predicted and observed must have equal length")
    total = predicted.sum()
    if total <= 0:
        raise ValueError("sum of predictions must be positive")
    return float(observed.sum() / total)


# ---------------------------------------------------------------------------
# full model report
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelReport:
    loglik: float
    n_params: int
    n_obs: int
    aic: float
    bic: float
    sl_score: float | None
    relativities: RelativityTable | None
    group_ratios: tuple | None
    off_balance: float | None


def build_report(
    model,
    train_portfolio: Portfolio,
    test_portfolio: Portfolio | None = None,
    gamma0: float | None = None,
    structure: BmsStructure | None = None,
) -> ModelReport:
    ll = model.loglik_on(train_portfolio)
    k = model.n_params
    if hasattr(model, "fit"):
        n_obs = model.fit.n_obs
    else:  # CPG pair: contracts drive the joint likelihood
        n_obs = model.frequency.fit.n_obs
    sl = logarithmic_score(model, test_portfolio) if test_portfolio is not None else None
    rel = (
        relativity_table(gamma0, structure)
        if gamma0 is not None and structure is not None
        else None
    )
    pred = model.predict(train_portfolio)
    target = getattr(model, "target", "loss_cost_cpg")
    if target == "frequency":
        observed = train_portfolio.contracts["claim_count"].to_numpy(float)
        preds = {"frequency": pred}
    elif target == "severity":
        observed = train_portfolio.claims["cost"].to_numpy(float)
        preds = {}
    else:
        observed = contract_amounts(train_portfolio)
        preds = {"loss_cost": pred}
    ratios = group_ratio_report(train_portfolio, preds) if preds else None
    return ModelReport(
        loglik=float(ll),
        n_params=int(k),
        n_obs=int(n_obs),
        aic=float(aic(ll, k)),
        bic=float(bic(ll, k, n_obs)),
        sl_score=None if sl is None else float(sl),
        relativities=rel,
        group_ratios=ratios,
        off_balance=off_balance_factor(pred, observed) if len(pred) else None,
    )


def report_to_json(report: ModelReport, path) -> None:
    def _clean(obj):
        if isinstance(obj, RelativityTable):
            d = asdict(obj)
            d["structure"] = {
                "psi": obj.structure.psi,
                "l_min": obj.structure.l_min,
                "l_max": obj.structure.l_max,
                "l_start": obj.structure.l_start,
            }
            return d
        return obj

    data = {
        "loglik": report.loglik,
        "n_params": report.n_params,
        "n_obs": report.n_obs,
        "aic": report.aic,
        "bic": report.bic,
        "sl_score": report.sl_score,
        "relativities": _clean(report.relativities),
        "group_ratios": [asdict(r) for r in report.group_ratios]
        if report.group_ratios
        else None,
        "off_balance": report.off_balance,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


@dataclass(frozen=True)
class ComparisonRow:
    model: str
    family: str
    n_params: int
    loglik: float
    aic: float
    bic: float
    sl: float | None


def comparison_to_csv(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["model", "family", "n_params", "loglik", "aic", "bic", "sl"])
        for r in rows:
            writer.writerow(
                [
                    r.model,
                    r.family,
                    r.n_params,
                    r.loglik,
                    r.aic,
                    r.bic,
                    "" if r.sl is None else r.sl,
                ]
            )
