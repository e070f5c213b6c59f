"""Penalized coordinate-descent fits and cross-validated selection."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bmsrate.elasticnet import (
    PenaltySpec,
    _soft_threshold,
    cv_select,
    fit_penalized,
    kkt_violation,
    lambda_max,
    lambda_path,
)
from bmsrate.exceptions import FoldError
from bmsrate.glm import design_matrix, fit_gamma, fit_poisson


@pytest.fixture(scope="module")
def poisson_data():
    rng = np.random.default_rng(77)
    n = 3000
    x1 = rng.normal(size=n)
    x2 = rng.normal(size=n)
    noise = rng.normal(size=(n, 3))
    mu = np.exp(-1.0 + 0.8 * x1)
    counts = rng.poisson(mu)
    cols = {"x1": x1, "x2": x2}
    cols.update({f"noise{j}": noise[:, j] for j in range(3)})
    groups = np.repeat(np.arange(n // 3), 3)
    return design_matrix(cols), counts, groups


class TestPenaltySpec:
    def test_intercept_never_penalized(self):
        with pytest.raises(ValueError):
            PenaltySpec(alpha=0.5, lam=1.0, penalize_mask=(True, True))

    def test_for_design_exempt(self, poisson_data):
        design, _, _ = poisson_data
        spec = PenaltySpec.for_design(design, 1.0, 0.1, exempt=("x2",))
        mask = dict(zip(design.labels, spec.penalize_mask))
        assert not mask["intercept"] and not mask["x2"] and mask["x1"]

    def test_invalid_alpha(self, poisson_data):
        design, _, _ = poisson_data
        with pytest.raises(ValueError):
            PenaltySpec.for_design(design, 1.5, 0.1)


class TestFitPenalized:
    def test_zero_penalty_matches_unpenalized(self, poisson_data):
        design, counts, _ = poisson_data
        spec = PenaltySpec.for_design(design, 1.0, 0.0)
        pen = fit_penalized(design, counts, "poisson", 1.0, spec)
        free = fit_poisson(design, counts, 1.0)
        assert np.max(np.abs(pen.beta - free.beta)) < 1e-4

    def test_lambda_max_zeroes_everything(self, poisson_data):
        design, counts, _ = poisson_data
        lmax = lambda_max(design, counts, "poisson", 1.0, alpha=1.0)
        spec = PenaltySpec.for_design(design, 1.0, lmax)
        fit = fit_penalized(design, counts, "poisson", 1.0, spec)
        assert np.all(fit.beta[1:] == 0.0)
        assert np.exp(fit.beta[0]) == pytest.approx(counts.mean(), rel=1e-8)

    def test_kkt_conditions(self, poisson_data):
        design, counts, _ = poisson_data
        lmax = lambda_max(design, counts, "poisson", 1.0, alpha=1.0)
        for alpha, frac in [(1.0, 0.1), (0.5, 0.05), (0.0, 0.02)]:
            spec = PenaltySpec.for_design(design, alpha, lmax * frac)
            fit = fit_penalized(design, counts, "poisson", 1.0, spec)
            assert kkt_violation(design, counts, "poisson", 1.0, spec, fit) < 1e-7

    def test_ridge_symmetry_duplicated_column(self):
        rng = np.random.default_rng(3)
        n = 200
        x = rng.normal(size=n)
        counts = rng.poisson(np.exp(-0.5 + 0.6 * x))
        design = design_matrix({"a": x, "b": x.copy()})
        spec = PenaltySpec.for_design(design, 0.0, 0.05)
        fit = fit_penalized(design, counts, "poisson", 1.0, spec)
        assert abs(fit.beta[1] - fit.beta[2]) < 1e-6

    def test_gamma_family(self):
        rng = np.random.default_rng(5)
        n = 800
        x = rng.normal(size=n)
        costs = rng.gamma(2.0, np.exp(7.0 + 0.3 * x) / 2.0)
        design = design_matrix({"x": x})
        spec = PenaltySpec.for_design(design, 1.0, 0.0)
        pen = fit_penalized(design, costs, "gamma", 1.0, spec)
        free = fit_gamma(design, costs)
        assert np.max(np.abs(pen.beta - free.beta)) < 1e-4

    def test_tweedie_mean_family(self):
        rng = np.random.default_rng(9)
        from bmsrate.tweedie import sample_joint

        n = 4000
        x = rng.normal(size=n)
        mu = 1.2 * np.exp(0.4 * x)
        cnt, y = sample_joint(mu, 0.9, 1.5, rng=rng)
        design = design_matrix({"x": x})
        spec = PenaltySpec.for_design(design, 1.0, 0.0)
        fit = fit_penalized(design, y, "tweedie-mean", 1.0, spec, p=1.5)
        assert fit.beta[1] == pytest.approx(0.4, abs=0.1)

    def test_path_continuity(self, poisson_data):
        design, counts, _ = poisson_data
        lmax = lambda_max(design, counts, "poisson", 1.0, alpha=1.0)
        lams = lambda_path(lmax, 25)
        prev = None
        for lam in lams:
            spec = PenaltySpec.for_design(design, 1.0, lam)
            fit = fit_penalized(
                design, counts, "poisson", 1.0, spec, beta_init=prev
            )
            if prev is not None:
                assert np.max(np.abs(fit.beta - prev)) < 0.35
            prev = fit.beta


@given(x=st.floats(-5, 5), t=st.floats(0, 3))
@settings(max_examples=100, deadline=None)
def test_soft_threshold_oracle(x, t):
    expected = np.sign(x) * max(abs(x) - t, 0.0)
    assert _soft_threshold(x, t) == pytest.approx(expected, abs=1e-12)


class TestCvSelect:
    def test_support_recovery(self, poisson_data):
        design, counts, groups = poisson_data
        res = cv_select(
            design, counts, "poisson", 1.0, groups,
            alpha_grid=(1.0,), n_lambda=15, folds=4, seed=0,
        )
        fit = fit_penalized(design, counts, "poisson", 1.0, res.best)
        labels = dict(zip(fit.labels, fit.beta))
        assert labels["x1"] != 0.0

    def test_null_signal_one_se_sparse(self):
        rng = np.random.default_rng(21)
        n = 2400
        cols = {f"n{j}": rng.normal(size=n) for j in range(6)}
        counts = rng.poisson(np.full(n, 0.4))
        design = design_matrix(cols)
        groups = np.arange(n) // 4
        res = cv_select(
            design, counts, "poisson", 1.0, groups,
            alpha_grid=(1.0,), n_lambda=12, folds=4, seed=1,
        )
        fit = fit_penalized(design, counts, "poisson", 1.0, res.one_se)
        assert np.all(fit.beta[1:] == 0.0)

    def test_determinism(self, poisson_data):
        design, counts, groups = poisson_data
        kwargs = dict(alpha_grid=(1.0,), n_lambda=6, folds=2, seed=4)
        a = cv_select(design, counts, "poisson", 1.0, groups, **kwargs)
        b = cv_select(design, counts, "poisson", 1.0, groups, **kwargs)
        assert a.table == b.table
        assert a.best == b.best

    def test_groups_never_straddle_folds(self, poisson_data):
        from bmsrate.elasticnet import _grouped_folds

        _, _, groups = poisson_data
        fold_of = _grouped_folds(groups, 5, seed=2)
        for g in np.unique(groups):
            assert len(np.unique(fold_of[groups == g])) == 1

    def test_too_few_folds(self, poisson_data):
        design, counts, groups = poisson_data
        with pytest.raises(ValueError):
            cv_select(design, counts, "poisson", 1.0, groups, folds=1)

    def test_cv_table_csv(self, tmp_path, poisson_data):
        from bmsrate.elasticnet import cv_table_to_csv

        design, counts, groups = poisson_data
        res = cv_select(
            design, counts, "poisson", 1.0, groups,
            alpha_grid=(1.0,), n_lambda=4, folds=2, seed=0,
        )
        path = tmp_path / "cv.csv"
        cv_table_to_csv(res.table, path)
        header = path.read_text().splitlines()[0]
        assert header == "alpha,lambda,mean_deviance,se_deviance,nonzero_count"
