"""Kappa-N fitting and profile-likelihood structure search."""

import numpy as np
import pytest

from bmsrate.bms_search import (
    BmsModel,
    fit_bms,
    fit_kappa_n,
    profile_table_to_csv,
)
from bmsrate.models import KAPPA_COLUMN, N_COLUMN, contract_design
from bmsrate.portfolio import BmsStructure
from bmsrate.simulator import SimSpec, simulate_portfolio


@pytest.fixture(scope="module")
def kappa_n_portfolio():
    # unclamped dynamics: level - 100 = -kappa + 3n exactly
    spec = SimSpec(
        n_policies=12000,
        years=12,
        seed=31,
        vehicle_probs=(1.0, 0.0, 0.0),
        gamma0_freq=0.10,
        structure_freq=BmsStructure(psi=3),
        base_frequency=0.10,
    )
    return simulate_portfolio(spec)[0]


@pytest.fixture(scope="module")
def bms_portfolio():
    spec = SimSpec(
        n_policies=6000,
        years=10,
        seed=32,
        vehicle_probs=(1.0, 0.0, 0.0),
        gamma0_freq=0.094,
        structure_freq=BmsStructure(psi=3, l_min=95, l_max=106),
        base_frequency=0.10,
    )
    return simulate_portfolio(spec)[0]


class TestFitKappaN:
    def test_recovery(self, kappa_n_portfolio):
        res = fit_kappa_n(kappa_n_portfolio, "frequency")
        assert res.gamma0 == pytest.approx(0.10, abs=0.02)
        assert res.gamma1 == pytest.approx(0.30, abs=0.04)
        assert res.psi == pytest.approx(3.0, abs=0.5)

    def test_psi_reporting_identity(self, kappa_n_portfolio):
        res = fit_kappa_n(kappa_n_portfolio, "frequency")
        labels = list(res.model.fit.labels)
        beta = res.model.fit.beta
        assert res.gamma0 == -beta[labels.index(KAPPA_COLUMN)]
        assert res.gamma1 == beta[labels.index(N_COLUMN)]
        assert res.psi == res.gamma1 / res.gamma0

    def test_null_history_warns(self):
        spec = SimSpec(n_policies=2500, years=9, seed=4, base_frequency=0.1)
        pf, _ = simulate_portfolio(spec)
        with pytest.warns(UserWarning, match="gamma0"):
            res = fit_kappa_n(pf, "frequency")
        # independence from history: both parameters near zero
        assert abs(res.gamma0) < 0.05
        assert abs(res.gamma1) < 0.1

    def test_severity_target(self, bms_portfolio):
        # the fixture has no severity dynamics, so the discount warning fires
        with pytest.warns(UserWarning, match="gamma0"):
            res = fit_kappa_n(bms_portfolio, "severity")
        assert res.model.fit.family == "gamma"

    def test_loss_cost_needs_p(self, bms_portfolio):
        with pytest.raises(ValueError):
            fit_kappa_n(bms_portfolio, "loss_cost")


class TestFitBms:
    def test_recovery_small_grid(self, bms_portfolio):
        model = fit_bms(
            bms_portfolio,
            "frequency",
            psi_grid=(2, 3, 4),
            lmin_grid=(94, 95, 96),
            lmax_grid=(105, 106, 107),
        )
        # at this sample size the bounds identify only to about one level
        assert model.structure.psi == 3
        assert abs(model.structure.l_min - 95) <= 1
        assert abs(model.structure.l_max - 106) <= 1
        assert model.gamma0 == pytest.approx(0.094, abs=0.03)

    def test_argmax_correctness(self, bms_portfolio):
        model = fit_bms(
            bms_portfolio,
            "frequency",
            psi_grid=(2, 3),
            lmin_grid=(95, 97),
            lmax_grid=(104, 106),
        )
        assert all(model.loglik >= e.loglik - 1e-9 for e in model.profile_table)
        assert len(model.profile_table) == 8

    def test_widening_grid_never_worse(self, bms_portfolio):
        narrow = fit_bms(
            bms_portfolio, "frequency", psi_grid=(2,), lmin_grid=(96,), lmax_grid=(105,)
        )
        wide = fit_bms(
            bms_portfolio, "frequency", psi_grid=(2, 3), lmin_grid=(95, 96), lmax_grid=(105, 106)
        )
        assert wide.loglik >= narrow.loglik - 1e-9

    def test_unclamped_matches_kappa_n_constraint(self, kappa_n_portfolio):
        # fixed psi without bounds is the Kappa-N model with gamma1 = psi*gamma0
        model = fit_bms(
            kappa_n_portfolio, "frequency", psi_grid=(3,),
            lmin_grid=(None,), lmax_grid=(None,),
        )
        from bmsrate.glm import fit_poisson
        from bmsrate.glm import DesignMatrix

        base = contract_design(kappa_n_portfolio, "kappa_n")
        labels = list(base.labels)
        k_i, n_i = labels.index(KAPPA_COLUMN), labels.index(N_COLUMN)
        # constrained column: -kappa + 3n
        score = -base.values[:, k_i] + 3.0 * base.values[:, n_i]
        keep = [j for j in range(base.values.shape[1]) if j not in (k_i, n_i)]
        X = np.column_stack([base.values[:, keep], score])
        design = DesignMatrix(X, tuple(labels[j] for j in keep) + ("score",))
        direct = fit_poisson(
            design,
            kappa_n_portfolio.contracts["claim_count"].to_numpy(float),
            kappa_n_portfolio.contracts["exposure"].to_numpy(float),
        )
        assert model.loglik == pytest.approx(direct.loglik, abs=1e-6)

    def test_degenerate_grid_warns(self, bms_portfolio):
        with pytest.warns(UserWarning, match="rank deficient"):
            model = fit_bms(
                bms_portfolio, "frequency",
                psi_grid=(1,), lmin_grid=(100,), lmax_grid=(100,),
            )
        assert model.gamma0 == 0.0  # absorbed into the intercept

    def test_empty_grid(self, bms_portfolio):
        with pytest.raises(ValueError):
            fit_bms(bms_portfolio, "frequency", psi_grid=(), lmin_grid=(95,), lmax_grid=(106,))

    def test_n_params_counts_structure(self, bms_portfolio):
        model = fit_bms(
            bms_portfolio, "frequency", psi_grid=(3,), lmin_grid=(95,), lmax_grid=(106,)
        )
        assert model.n_params == model.inner_fit.n_params + 3

    def test_profile_table_csv(self, tmp_path, bms_portfolio):
        model = fit_bms(
            bms_portfolio, "frequency", psi_grid=(2, 3), lmin_grid=(95,), lmax_grid=(106,)
        )
        path = tmp_path / "profile.csv"
        profile_table_to_csv(model.profile_table, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "psi,l_min,l_max,loglik,n_params"
        assert len(lines) == 3
