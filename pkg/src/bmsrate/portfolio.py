"""Panel data model for multi-vehicle insurance policies.

A *policy* groups one or more *vehicles*; each vehicle is observed through
annual *contracts*.  Contracts of different vehicles in the same policy that
share an effective year carry the same contract index.  Past claims are
aggregated at the policy level into two experience summaries: the number of
claim-free policy-years (kappa) and the total number of claims (n) inside a
rolling window, from which bonus-malus levels are derived.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
import pandas as pd

from .exceptions import ConsistencyError, ParseError

CONTRACT_BASE_COLUMNS = [
    "policy_id",
    "vehicle_id",
    "contract_index",
    "effective_date",
    "exposure",
    "claim_count",
    "calendar_year",
]
CLAIM_COLUMNS = ["policy_id", "vehicle_id", "contract_index", "claim_ordinal", "cost"]

DEFAULT_WINDOW_YEARS = 6
DEFAULT_START_LEVEL = 100


@dataclass(frozen=True)
class ContractRecord:
    """One vehicle-contract row."""

    policy_id: str
    vehicle_id: str
    contract_index: int
    effective_date: str
    exposure: float
    covariates: tuple
    claim_count: int
    calendar_year: int

    def __post_init__(self):
        if self.exposure <= 0:
            raise ValueError("exposure must be positive")
        if self.claim_count < 0:
            raise ValueError("claim_count must be non-negative")


@dataclass(frozen=True)
class ClaimRecord:
    """Cost of one individual claim."""

    policy_id: str
    vehicle_id: str
    contract_index: int
    claim_ordinal: int
    cost: float

    def __post_init__(self):
        if self.cost <= 0:
            raise ValueError("claim cost must be positive")


@dataclass(frozen=True)
class ScopeSummary:
    """Policy-level claims experience over the rolling window.

    kappa_dotdot counts past claim-free policy-years, n_dotdot sums past
    policy-level claim counts, years_observed counts windowed policy-years
    with at least one active contract.
    """

    kappa_dotdot: int
    n_dotdot: int
    years_observed: int

    def __post_init__(self):
        if self.kappa_dotdot < 0 or self.n_dotdot < 0 or self.years_observed < 0:
            raise ValueError("scope components must be non-negative")
        if self.kappa_dotdot > self.years_observed:
            raise ValueError("kappa_dotdot cannot exceed years_observed")


@dataclass(frozen=True)
class BmsStructure:
    """Structural parameters of a bonus-malus scale.

    l_min/l_max of None means an unbounded (unclamped) scale, i.e. a plain
    claims score.
    """

    psi: float
    l_min: int | None = None
    l_max: int | None = None
    l_start: int = DEFAULT_START_LEVEL

    def __post_init__(self):
        if self.psi < 1:
            raise ValueError("psi must be >= 1")
        if (self.l_min is None) != (self.l_max is None):
            raise ValueError("l_min and l_max must be given together")
        if self.l_min is not None and not (self.l_min <= self.l_start <= self.l_max):
            raise ValueError("need l_min <= l_start <= l_max")

    @property
    def clamped(self) -> bool:
        return self.l_min is not None


@dataclass(frozen=True)
class Portfolio:
    """Immutable collection of contracts and claims.

    ``contracts`` and ``claims`` are normalized data frames sorted by
    (policy_id, vehicle_id, contract_index); covariate columns follow the
    base columns in ``contracts``.
    """

    contracts: pd.DataFrame
    claims: pd.DataFrame
    covariate_names: tuple

    @classmethod
    def from_frames(cls, contracts, claims, covariate_names, validate=True):
        contracts = contracts.sort_values(
            ["policy_id", "vehicle_id", "contract_index"], kind="mergesort"
        ).reset_index(drop=True)
        claims = claims.sort_values(
            ["policy_id", "vehicle_id", "contract_index", "claim_ordinal"],
            kind="mergesort",
        ).reset_index(drop=True)
        pf = cls(contracts, claims, tuple(covariate_names))
        if validate:
            pf.validate()
        return pf

    def validate(self):
        c = self.contracts
        if (c["exposure"] <= 0).any():
            raise ConsistencyError("exposure must be positive for every contract")
        if (c["claim_count"] < 0).any():
            raise ConsistencyError("claim_count must be non-negative")
        key_cols = ["policy_id", "vehicle_id", "contract_index"]
        if c.duplicated(key_cols).any():
            dup = c.loc[c.duplicated(key_cols), key_cols].values.tolist()
            raise ConsistencyError(f"duplicate contract keys: {dup[:5]}")
        # contract_index strictly increasing with effective_date per vehicle
        for (_, _), grp in c.groupby(["policy_id", "vehicle_id"], sort=False):
            idx = grp["contract_index"].to_numpy()
            dates = grp["effective_date"].to_numpy()
            order = np.argsort(dates, kind="stable")
            if not np.all(np.diff(idx[order]) > 0):
                key = grp[["policy_id", "vehicle_id"]].iloc[0].tolist()
                raise ConsistencyError(
                    f"contract_index not increasing with effective_date for {key}"
                )
        # shared contract_index for equal effective year within a policy
        year_idx = c.groupby(["policy_id", "calendar_year"])["contract_index"].nunique()
        if (year_idx > 1).any():
            bad = year_idx[year_idx > 1].index.tolist()
            raise ConsistencyError(
                f"contracts of the same policy and effective year must share a "
                f"contract_index: {bad[:5]}"
            )
        # referential integrity and per-contract claim counts
        contract_counts = c.set_index(key_cols)["claim_count"]
        claim_rows = self.claims.groupby(key_cols).size() if len(self.claims) else None
        if claim_rows is not None:
            unknown = claim_rows.index.difference(contract_counts.index)
            if len(unknown):
                raise ConsistencyError(
                    f"claims reference unknown contracts: {list(unknown[:5])}"
                )
        observed = (
            claim_rows.reindex(contract_counts.index, fill_value=0)
            if claim_rows is not None
            else pd.Series(0, index=contract_counts.index)
        )
        mismatch = contract_counts != observed
        if mismatch.any():
            bad = list(contract_counts.index[mismatch][:5])
            raise ConsistencyError(
                f"claim_count does not match number of claim rows for: {bad}"
            )
        if len(self.claims) and (self.claims["cost"] <= 0).any():
            raise ConsistencyError("claim costs must be positive")

    @property
    def n_contracts(self) -> int:
        return len(self.contracts)

    @property
    def policy_ids(self) -> np.ndarray:
        return self.contracts["policy_id"].unique()

    def iter_contracts(self) -> Iterable[ContractRecord]:
        cov = self.contracts[list(self.covariate_names)].to_numpy()
        for i, row in enumerate(self.contracts.itertuples(index=False)):
            yield ContractRecord(
                policy_id=row.policy_id,
                vehicle_id=row.vehicle_id,
                contract_index=int(row.contract_index),
                effective_date=row.effective_date,
                exposure=float(row.exposure),
                covariates=(1.0, *cov[i]),
                claim_count=int(row.claim_count),
                calendar_year=int(row.calendar_year),
            )

    def iter_claims(self) -> Iterable[ClaimRecord]:
        for row in self.claims.itertuples(index=False):
            yield ClaimRecord(
                policy_id=row.policy_id,
                vehicle_id=row.vehicle_id,
                contract_index=int(row.contract_index),
                claim_ordinal=int(row.claim_ordinal),
                cost=float(row.cost),
            )


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def load_portfolio(contracts_path, claims_path) -> Portfolio:
    """Read the two CSV files and build a validated Portfolio."""
    with open(contracts_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{contracts_path}: empty file")
        if header[: len(CONTRACT_BASE_COLUMNS)] != CONTRACT_BASE_COLUMNS:
            raise ParseError(
                f"{contracts_path}: header must start with "
                f"{','.join(CONTRACT_BASE_COLUMNS)}"
            )
        covariate_names = header[len(CONTRACT_BASE_COLUMNS) :]
        rows = []
        for lineno, raw in enumerate(reader, start=2):
            if not raw:
                continue
            if len(raw) != len(header):
                raise ParseError(
                    f"{contracts_path}: line {lineno}: expected {len(header)} "
                    f"fields, got {len(raw)}"
                )
            try:
                rows.append(
                    (
                        raw[0],
                        raw[1],
                        int(raw[2]),
                        raw[3],
                        float(raw[4]),
                        int(raw[5]),
                        int(raw[6]),
                        *(float(v) for v in raw[7:]),
                    )
                )
            except ValueError as exc:
                raise ParseError(f"{contracts_path}: line {lineno}: {exc}") from exc
    contracts = pd.DataFrame(rows, columns=header)

    with open(claims_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{claims_path}: empty file")
        if header != CLAIM_COLUMNS:
            raise ParseError(
                f"{claims_path}: header must be {','.join(CLAIM_COLUMNS)}"
            )
        rows = []
        for lineno, raw in enumerate(reader, start=2):
            if not raw:
                continue
            if len(raw) != len(CLAIM_COLUMNS):
                raise ParseError(
                    f"{claims_path}: line {lineno}: expected "
                    f"{len(CLAIM_COLUMNS)} fields, got {len(raw)}"
                )
            try:
                rows.append((raw[0], raw[1], int(raw[2]), int(raw[3]), float(raw[4])))
            except ValueError as exc:
                raise ParseError(f"{claims_path}: line {lineno}: {exc}") from exc
    claims = pd.DataFrame(rows, columns=CLAIM_COLUMNS)
    if contracts.empty:
        raise ParseError(f"{contracts_path}: no contract rows")
    return Portfolio.from_frames(contracts, claims, covariate_names)


def save_portfolio(portfolio: Portfolio, contracts_path, claims_path) -> None:
    """Write normalized CSV files; load -> save round-trips byte-identically."""
    cols = CONTRACT_BASE_COLUMNS + list(portfolio.covariate_names)
    with open(contracts_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(cols)
        for row in portfolio.contracts[cols].itertuples(index=False):
            writer.writerow([_fmt(v) for v in row])
    with open(claims_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CLAIM_COLUMNS)
        for row in portfolio.claims[CLAIM_COLUMNS].itertuples(index=False):
            writer.writerow([_fmt(v) for v in row])


# ---------------------------------------------------------------------------
# policy-year panel and scope variables
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PolicyYearPanel:
    """Dense (policy x calendar-year) view of activity and claim counts."""

    policy_index: Mapping  # policy_id -> row in the matrices
    year0: int
    active: np.ndarray  # bool, shape (P, Y)
    claims: np.ndarray  # int, shape (P, Y)
    row_policy: np.ndarray  # contract row -> policy matrix row
    row_year: np.ndarray  # contract row -> year offset


def policy_year_panel(portfolio: Portfolio) -> PolicyYearPanel:
    c = portfolio.contracts
    policies = c["policy_id"].unique()
    pidx = {p: i for i, p in enumerate(policies)}
    years = c["calendar_year"].to_numpy()
    year0 = int(years.min())
    n_years = int(years.max()) - year0 + 1
    rows = c["policy_id"].map(pidx).to_numpy()
    cols = years - year0
    active = np.zeros((len(policies), n_years), dtype=bool)
    claims = np.zeros((len(policies), n_years), dtype=np.int64)
    active[rows, cols] = True
    np.add.at(claims, (rows, cols), c["claim_count"].to_numpy())
    return PolicyYearPanel(pidx, year0, active, claims, rows, cols)


def policy_year_claims(portfolio: Portfolio) -> dict:
    """Total claim count per (policy_id, calendar_year) over active years."""
    panel = policy_year_panel(portfolio)
    out = {}
    for policy, i in panel.policy_index.items():
        for j in np.flatnonzero(panel.active[i]):
            out[(policy, panel.year0 + int(j))] = int(panel.claims[i, j])
    return out


@dataclass(frozen=True)
class ScopeArrays:
    """Row-aligned scope variables for every contract of a portfolio."""

    kappa: np.ndarray
    n: np.ndarray
    years_observed: np.ndarray


def compute_scope_arrays(portfolio: Portfolio, window_years: int) -> ScopeArrays:
    if window_years < 1:
        raise ValueError("window_years must be >= 1")
    panel = policy_year_panel(portfolio)
    act = panel.active
    ncl = panel.claims
    P, Y = act.shape
    # prefix sums over years, shifted so position y covers years < y
    act_cum = np.zeros((P, Y + 1), dtype=np.int64)
    n_cum = np.zeros((P, Y + 1), dtype=np.int64)
    free_cum = np.zeros((P, Y + 1), dtype=np.int64)
    np.cumsum(act, axis=1, out=act_cum[:, 1:])
    np.cumsum(ncl, axis=1, out=n_cum[:, 1:])
    np.cumsum(act & (ncl == 0), axis=1, out=free_cum[:, 1:])
    y = panel.row_year
    lo = np.maximum(y - window_years, 0)
    p = panel.row_policy
    years_obs = act_cum[p, y] - act_cum[p, lo]
    n_dd = n_cum[p, y] - n_cum[p, lo]
    kappa = free_cum[p, y] - free_cum[p, lo]
    return ScopeArrays(kappa, n_dd, years_obs)


def compute_scope(
    portfolio: Portfolio, window_years: int = DEFAULT_WINDOW_YEARS
) -> dict:
    """Map each (policy_id, vehicle_id, contract_index) to its ScopeSummary."""
    arr = compute_scope_arrays(portfolio, window_years)
    keys = zip(
        portfolio.contracts["policy_id"],
        portfolio.contracts["vehicle_id"],
        portfolio.contracts["contract_index"],
    )
    return {
        (pid, vid, int(cidx)): ScopeSummary(int(k), int(n), int(y))
        for (pid, vid, cidx), k, n, y in zip(
            keys, arr.kappa, arr.n, arr.years_observed
        )
    }


# ---------------------------------------------------------------------------
# bonus-malus levels
# ---------------------------------------------------------------------------


def bms_level(scope: ScopeSummary, structure: BmsStructure) -> int:
    """Claims score l_start - kappa + psi*n, clamped when bounds are set."""
    raw = structure.l_start - scope.kappa_dotdot + structure.psi * scope.n_dotdot
    if structure.clamped:
        raw = min(max(raw, structure.l_min), structure.l_max)
    return int(raw) if float(raw).is_integer() else raw


def level_matrix(
    active: np.ndarray,
    claims: np.ndarray,
    structure: BmsStructure,
    window_years: int = DEFAULT_WINDOW_YEARS,
) -> np.ndarray:
    """Per-policy, per-year levels from the windowed year-by-year recursion.

    The level of year y restarts at l_start at the beginning of the window
    and applies the transition once per active windowed year, clamping at
    every step when bounds are set.  Inactive years leave the level
    unchanged.
    """
    P, Y = active.shape
    out = np.empty((P, Y), dtype=float)
    for y in range(Y):
        lev = np.full(P, float(structure.l_start))
        for tau in range(max(0, y - window_years), y):
            act = active[:, tau]
            n = claims[:, tau]
            step = lev - (n == 0) + structure.psi * n
            if structure.clamped:
                step = np.clip(step, structure.l_min, structure.l_max)
            lev = np.where(act, step, lev)
        out[:, y] = lev
    return out


def contract_levels(
    portfolio: Portfolio,
    structure: BmsStructure,
    window_years: int = DEFAULT_WINDOW_YEARS,
    panel: PolicyYearPanel | None = None,
) -> np.ndarray:
    """Row-aligned BMS level for every contract."""
    if panel is None:
        panel = policy_year_panel(portfolio)
    levels = level_matrix(panel.active, panel.claims, structure, window_years)
    return levels[panel.row_policy, panel.row_year]


# ---------------------------------------------------------------------------
# train/test split and insured types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitResult:
    train: Portfolio
    test: Portfolio
    diagnostics: dict = field(default_factory=dict)


def _side_stats(portfolio: Portfolio) -> dict:
    n = portfolio.contracts["claim_count"].sum()
    d = portfolio.contracts["exposure"].sum()
    sev = portfolio.claims["cost"].mean() if len(portfolio.claims) else float("nan")
    return {
        "n_policies": int(portfolio.contracts["policy_id"].nunique()),
        "claim_frequency": float(n / d) if d > 0 else float("nan"),
        "mean_severity": float(sev),
    }


def split_train_test(
    portfolio: Portfolio, train_fraction: float, seed: int
) -> SplitResult:
    """Partition at policy granularity, deterministically for a given seed."""
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must be in (0, 1)")
    if portfolio.n_contracts == 0:
        raise ValueError("portfolio is empty")
    policies = np.sort(portfolio.contracts["policy_id"].unique())
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(policies))
    n_train = int(round(train_fraction * len(policies)))
    n_train = min(max(n_train, 1), len(policies) - 1) if len(policies) > 1 else 1
    train_ids = set(policies[perm[:n_train]])
    in_train = portfolio.contracts["policy_id"].isin(train_ids)
    claims_in_train = portfolio.claims["policy_id"].isin(train_ids)
    train = Portfolio.from_frames(
        portfolio.contracts[in_train],
        portfolio.claims[claims_in_train],
        portfolio.covariate_names,
        validate=False,
    )
    test = Portfolio.from_frames(
        portfolio.contracts[~in_train],
        portfolio.claims[~claims_in_train],
        portfolio.covariate_names,
        validate=False,
    )
    diagnostics = {"train": _side_stats(train), "test": _side_stats(test)}
    return SplitResult(train, test, diagnostics)


INSURED_TYPES = ("A", "B", "C", "D", "E", "F")


def classify_insured_type(scope: ScopeSummary, past_contract_count: int) -> str:
    """Experience group: A/B/C by years of past experience, D/E/F by claims."""
    if past_contract_count < 0:
        raise ValueError("past_contract_count must be non-negative")
    if past_contract_count == 0 and scope.n_dotdot != 0:
        raise ValueError("n_dotdot must be 0 when there is no past experience")
    if past_contract_count <= 1:
        return "A"
    if past_contract_count <= 3:
        return "B"
    if past_contract_count <= 5:
        return "C"
    if scope.n_dotdot == 0:
        return "D"
    if scope.n_dotdot == 1:
        return "E"
    return "F"


def insured_types(
    portfolio: Portfolio, window_years: int = DEFAULT_WINDOW_YEARS
) -> np.ndarray:
    """Row-aligned insured-type labels using windowed years observed."""
    arr = compute_scope_arrays(portfolio, window_years)
    out = np.empty(portfolio.n_contracts, dtype="<U1")
    yo = arr.years_observed
    n = arr.n
    out[yo <= 1] = "A"
    out[(yo >= 2) & (yo <= 3)] = "B"
    out[(yo >= 4) & (yo <= 5)] = "C"
    exp6 = yo >= 6
    out[exp6 & (n == 0)] = "D"
    out[exp6 & (n == 1)] = "E"
    out[exp6 & (n >= 2)] = "F"
    return out
