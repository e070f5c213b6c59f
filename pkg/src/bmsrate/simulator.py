"""Synthetic multi-year, multi-vehicle portfolio generator.

Claim counts and costs are generated year by year from known parameters,
with the bonus-malus level of each year computed from the realized claims
of the preceding windowed years.  The generator writes the same file
formats the ingestion layer reads, plus a truth sidecar holding every
latent level and true mean, and is fully deterministic given the seed.

Mean structure (all levels measured relative to the start level):
  count mean   d * exp(X beta_freq + gamma0_freq * (level_freq - l_start))
  cost mean        exp(X beta_sev  + gamma0_sev  * (level_sev  - l_start))
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .portfolio import BmsStructure, Portfolio

TRUTH_COLUMNS = [
    "policy_id",
    "vehicle_id",
    "contract_index",
    "true_level_freq",
    "true_level_sev",
    "true_mean_freq",
    "true_mean_sev",
]


@dataclass(frozen=True)
class CovariateSpec:
    """One generated covariate column.

    kind 'bernoulli' (params: p), 'normal' (params: mean, sd), or 'age'
    (params: low, high for the uniform integer starting value, then +1 per
    calendar year).
    """

    name: str
    kind: str
    params: tuple

    def __post_init__(self):
        if self.kind not in ("bernoulli", "normal", "age"):
            raise ValueError(f"unknown covariate kind {self.kind!r}")


DEFAULT_COVARIATES = (
    CovariateSpec("urban", "bernoulli", (0.5,)),
    CovariateSpec("veh_age", "age", (0, 10)),
)


@dataclass(frozen=True)
class SimSpec:
    """Generative parameters of a synthetic portfolio.

    Defaults produce a null portfolio: no covariate effects and no
    experience dynamics, so the realized frequency and severity match the
    base rates.  beta vectors exclude the intercept, which is derived from
    base_frequency / base_severity.
    """

    n_policies: int = 1000
    years: int = 13
    vehicle_probs: tuple = (0.45, 0.40, 0.15)  # P(1), P(2), P(3) vehicles
    covariates: tuple = DEFAULT_COVARIATES
    beta_freq: tuple = (0.0, 0.0)
    beta_sev: tuple = (0.0, 0.0)
    structure_freq: BmsStructure = field(
        default_factory=lambda: BmsStructure(psi=3, l_min=95, l_max=106)
    )
    structure_sev: BmsStructure = field(
        default_factory=lambda: BmsStructure(psi=3, l_min=95, l_max=106)
    )
    gamma0_freq: float = 0.0
    gamma0_sev: float = 0.0
    gamma_shape: float = 1.5
    base_frequency: float = 0.02
    base_severity: float = 7500.0
    lapse_rate: float = 0.15
    window_years: int = 6
    first_year: int = 2000
    seed: int = 0

    def __post_init__(self):
        if self.n_policies < 1 or self.years < 1:
            raise ValueError("n_policies and years must be positive")
        if abs(sum(self.vehicle_probs) - 1.0) > 1e-9 or min(self.vehicle_probs) < 0:
            raise ValueError("vehicle_probs must be a probability vector")
        if len(self.beta_freq) != len(self.covariates) or len(self.beta_sev) != len(
            self.covariates
        ):
            raise ValueError("beta vectors must match the covariate count")
        if not 0 <= self.lapse_rate < 1:
            raise ValueError("lapse_rate must be in [0, 1)")
        if self.base_frequency <= 0 or self.base_severity <= 0:
            raise ValueError("base rates must be positive")
        if self.gamma_shape <= 0:
            raise ValueError("gamma_shape must be positive")


def _draw_covariates(spec, rng, n_vehicles):
    """Starting covariate values per vehicle; 'age' columns evolve later."""
    cols = {}
    for cov in spec.covariates:
        if cov.kind == "bernoulli":
            cols[cov.name] = rng.binomial(1, cov.params[0], n_vehicles).astype(float)
        elif cov.kind == "normal":
            cols[cov.name] = rng.normal(cov.params[0], cov.params[1], n_vehicles)
        else:
            cols[cov.name] = rng.integers(
                cov.params[0], cov.params[1] + 1, n_vehicles
            ).astype(float)
    return cols


def _step_level(lev, n, act, structure):
    step = lev - (n == 0) + structure.psi * n
    if structure.clamped:
        step = np.clip(step, structure.l_min, structure.l_max)
    return np.where(act, step, lev)


def _windowed_levels(pol_claims, pol_active, year, structure, window, n_policies):
    lev = np.full(n_policies, float(structure.l_start))
    for tau in range(max(0, year - window), year):
        lev = _step_level(lev, pol_claims[:, tau], pol_active[:, tau], structure)
    return lev


def simulate_portfolio(spec: SimSpec):
    """Generate (Portfolio, truth DataFrame) from the spec."""
    rng = np.random.default_rng(spec.seed)
    P, Y = spec.n_policies, spec.years

    veh_count = rng.choice([1, 2, 3], size=P, p=list(spec.vehicle_probs))
    veh_policy = np.repeat(np.arange(P), veh_count)
    n_veh = len(veh_policy)
    veh_ordinal = np.concatenate([np.arange(1, k + 1) for k in veh_count])
    cov0 = _draw_covariates(spec, rng, n_veh)
    active = rng.random((n_veh, Y)) >= spec.lapse_rate

    pol_active = np.zeros((P, Y), dtype=bool)
    for y in range(Y):
        np.logical_or.at(pol_active[:, y], veh_policy, active[:, y])
    # contract_index = running count of policy-active years
    pol_cidx = np.cumsum(pol_active, axis=1)

    bf = np.asarray(spec.beta_freq, float)
    bs = np.asarray(spec.beta_sev, float)
    age_cols = [c.name for c in spec.covariates if c.kind == "age"]

    pol_claims = np.zeros((P, Y), dtype=np.int64)
    contract_rows = []
    truth_rows = []
    cost_means = []
    cost_counts = []
    claim_keys = []
    for y in range(Y):
        lev_f = _windowed_levels(
            pol_claims, pol_active, y, spec.structure_freq, spec.window_years, P
        )
        lev_s = _windowed_levels(
            pol_claims, pol_active, y, spec.structure_sev, spec.window_years, P
        )
        idx = np.flatnonzero(active[:, y])
        if idx.size == 0:
            continue
        cov_y = {
            name: (vals + y if name in age_cols else vals)
            for name, vals in cov0.items()
        }
        X = np.column_stack([cov_y[c.name][idx] for c in spec.covariates])
        pol = veh_policy[idx]
        lp_f = (
            np.log(spec.base_frequency)
            + X @ bf
            + spec.gamma0_freq * (lev_f[pol] - spec.structure_freq.l_start)
        )
        lp_s = (
            np.log(spec.base_severity)
            + X @ bs
            + spec.gamma0_sev * (lev_s[pol] - spec.structure_sev.l_start)
        )
        mean_f = np.exp(lp_f)  # exposure is 1 for every generated contract
        mean_s = np.exp(lp_s)
        counts = rng.poisson(mean_f)
        np.add.at(pol_claims[:, y], pol, counts)
        year = spec.first_year + y
        for k, v in enumerate(idx):
            p = veh_policy[v]
            contract_rows.append(
                (
                    f"p{p + 1:06d}",
                    f"v{veh_ordinal[v]}",
                    int(pol_cidx[p, y]),
                    f"{year}-01-01",
                    1.0,
                    int(counts[k]),
                    year,
                    *(float(cov_y[c.name][v]) for c in spec.covariates),
                )
            )
            truth_rows.append(
                (
                    f"p{p + 1:06d}",
                    f"v{veh_ordinal[v]}",
                    int(pol_cidx[p, y]),
                    float(lev_f[p]),
                    float(lev_s[p]),
                    float(mean_f[k]),
                    float(mean_s[k]),
                )
            )
            if counts[k] > 0:
                cost_means.append(mean_s[k])
                cost_counts.append(int(counts[k]))
                claim_keys.append((f"p{p + 1:06d}", f"v{veh_ordinal[v]}", int(pol_cidx[p, y])))

    claim_rows = []
    if cost_counts:
        total = int(np.sum(cost_counts))
        means = np.repeat(np.asarray(cost_means), cost_counts)
        costs = rng.gamma(spec.gamma_shape, means / spec.gamma_shape, total)
        pos = 0
        for key, cnt in zip(claim_keys, cost_counts):
            for ordinal in range(1, cnt + 1):
                claim_rows.append((*key, ordinal, float(costs[pos])))
                pos += 1

    cov_names = [c.name for c in spec.covariates]
    contracts = pd.DataFrame(
        contract_rows,
        columns=[
            "policy_id",
            "vehicle_id",
            "contract_index",
            "effective_date",
            "exposure",
            "claim_count",
            "calendar_year",
            *cov_names,
        ],
    )
    claims = pd.DataFrame(
        claim_rows,
        columns=["policy_id", "vehicle_id", "contract_index", "claim_ordinal", "cost"],
    )
    portfolio = Portfolio.from_frames(contracts, claims, cov_names, validate=False)
    truth = (
        pd.DataFrame(truth_rows, columns=TRUTH_COLUMNS)
        .sort_values(["policy_id", "vehicle_id", "contract_index"], kind="mergesort")
        .reset_index(drop=True)
    )
    return portfolio, truth


def save_truth(truth: pd.DataFrame, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRUTH_COLUMNS)
        for row in truth[TRUTH_COLUMNS].itertuples(index=False):
            writer.writerow(
                [row[0], row[1], row[2], *(repr(float(v)) for v in row[3:])]
            )


def load_truth(path) -> pd.DataFrame:
    truth = pd.read_csv(path)
    if list(truth.columns) != TRUTH_COLUMNS:
        raise ValueError(f"truth file must have columns {TRUTH_COLUMNS}")
    return truth
