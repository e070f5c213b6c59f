"""Shared fixtures: a small hand-built panel portfolio and simulated data."""

import numpy as np
import pandas as pd
import pytest

from bmsrate.portfolio import Portfolio
from bmsrate.simulator import SimSpec, simulate_portfolio

# Three policies observed 2018-2021.  Policy 1 has two vehicles whose
# contracts share indices per effective year; the second vehicle joins in
# 2019.  Policies 2 and 3 have a single observed year.
SAMPLE_CONTRACTS = [
    # policy, vehicle, index, date, exposure, claim_count, year
    ("1", "1", 1, "2018-01-15", 1.0, 0, 2018),
    ("1", "1", 2, "2019-01-15", 1.0, 2, 2019),
    ("1", "1", 3, "2020-01-15", 1.0, 1, 2020),
    ("1", "1", 4, "2021-01-15", 1.0, 0, 2021),
    ("1", "2", 2, "2019-03-01", 1.0, 2, 2019),
    ("1", "2", 3, "2020-03-01", 1.0, 0, 2020),
    ("2", "1", 1, "2018-06-01", 1.0, 0, 2018),
    ("3", "1", 1, "2018-09-01", 1.0, 0, 2018),
    ("3", "2", 1, "2018-09-01", 1.0, 1, 2018),
]
SAMPLE_CLAIMS = [
    ("1", "1", 2, 1, 6592.0),
    ("1", "1", 2, 2, 11520.0),
    ("1", "1", 3, 1, 24151.0),
    ("1", "2", 2, 1, 1490.0),
    ("1", "2", 2, 2, 24505.0),
    ("3", "2", 1, 1, 8150.0),
]


def make_sample_portfolio(covariate=None):
    contracts = pd.DataFrame(
        SAMPLE_CONTRACTS,
        columns=[
            "policy_id",
            "vehicle_id",
            "contract_index",
            "effective_date",
            "exposure",
            "claim_count",
            "calendar_year",
        ],
    )
    cov_names = []
    if covariate is not None:
        contracts[covariate[0]] = covariate[1]
        cov_names = [covariate[0]]
    claims = pd.DataFrame(
        SAMPLE_CLAIMS,
        columns=["policy_id", "vehicle_id", "contract_index", "claim_ordinal", "cost"],
    )
    return Portfolio.from_frames(contracts, claims, cov_names)


@pytest.fixture
def sample_portfolio():
    return make_sample_portfolio()


@pytest.fixture(scope="session")
def sim_null():
    """Null dynamics: no covariate effects, no experience effects."""
    spec = SimSpec(n_policies=2000, years=10, seed=42, base_frequency=0.08)
    return simulate_portfolio(spec)


@pytest.fixture(scope="session")
def sim_dynamic():
    """Strong experience dynamics on both frequency and severity."""
    spec = SimSpec(
        n_policies=4000,
        years=12,
        seed=7,
        beta_freq=(0.3, 0.02),
        beta_sev=(0.1, 0.0),
        gamma0_freq=0.09,
        gamma0_sev=0.03,
        base_frequency=0.08,
    )
    return simulate_portfolio(spec)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per end-to-end criterion in the final report."""
    lines = []
    for outcome, status in (("passed", "PASS"), ("failed", "FAIL")):
        for rep in terminalreporter.stats.get(outcome, []):
            if rep.when != "call" or "test_acceptance.py" not in rep.nodeid:
                continue
            name = rep.nodeid.split("::")[-1].removeprefix("test_")
            num, _, label = name.removeprefix("criterion_").partition("_")
            lines.append(
                (int(num), f"criterion {int(num):02d} {label.replace('_', ' ')}: {status}")
            )
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
