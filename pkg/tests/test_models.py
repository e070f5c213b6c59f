"""Design assembly, fitted-model artifacts, CPG pairing, serialization."""

import numpy as np
import pytest

from bmsrate.models import (
    KAPPA_COLUMN,
    LEVEL_COLUMN,
    N_COLUMN,
    claim_design,
    contract_amounts,
    contract_design,
    fit_frequency,
    fit_loss_cost_cpg,
    fit_loss_cost_tweedie,
    fit_severity,
    load_model,
    model_from_dict,
    model_to_dict,
    save_model,
)
from bmsrate.portfolio import BmsStructure
from bmsrate.tweedie import joint_log_density


class TestDesigns:
    def test_standard_columns(self, sample_portfolio):
        d = contract_design(sample_portfolio, "standard")
        assert d.labels == ("intercept",)
        assert d.values.shape == (9, 1)

    def test_kappa_n_columns(self, sample_portfolio):
        d = contract_design(sample_portfolio, "kappa_n")
        assert d.labels == ("intercept", KAPPA_COLUMN, N_COLUMN)

    def test_bms_column(self, sample_portfolio):
        structure = BmsStructure(psi=3, l_min=95, l_max=106)
        d = contract_design(sample_portfolio, "bms", structure=structure)
        assert d.labels == ("intercept", LEVEL_COLUMN)
        assert d.values[:, 1].min() >= 95 and d.values[:, 1].max() <= 106

    def test_bms_requires_structure(self, sample_portfolio):
        with pytest.raises(ValueError):
            contract_design(sample_portfolio, "bms")

    def test_claim_design_frozen_at_contract(self, sample_portfolio):
        structure = BmsStructure(psi=3, l_min=95, l_max=106)
        per_contract = contract_design(sample_portfolio, "bms", structure=structure)
        per_claim = claim_design(sample_portfolio, "bms", structure=structure)
        assert per_claim.values.shape[0] == 6
        # both claims of contract ("1","1",2) carry that contract's level
        contracts = sample_portfolio.contracts
        row = contracts.index[
            (contracts["policy_id"] == "1")
            & (contracts["vehicle_id"] == "1")
            & (contracts["contract_index"] == 2)
        ][0]
        claims = sample_portfolio.claims
        claim_rows = np.flatnonzero(
            (claims["policy_id"] == "1")
            & (claims["vehicle_id"] == "1")
            & (claims["contract_index"] == 2)
        )
        for r in claim_rows:
            assert per_claim.values[r, 1] == per_contract.values[row, 1]

    def test_contract_amounts(self, sample_portfolio):
        y = contract_amounts(sample_portfolio)
        assert y.sum() == pytest.approx(sample_portfolio.claims["cost"].sum())
        counts = sample_portfolio.contracts["claim_count"].to_numpy()
        assert np.all((y > 0) == (counts > 0))


class TestFittedModel:
    def test_frequency_balance(self, sim_null):
        pf, _ = sim_null
        model = fit_frequency(pf, "standard")
        assert model.predict(pf).sum() == pytest.approx(
            pf.contracts["claim_count"].sum(), rel=1e-8
        )

    def test_loglik_on_training_matches_fit(self, sim_null):
        pf, _ = sim_null
        model = fit_frequency(pf, "kappa_n")
        assert model.loglik_on(pf) == pytest.approx(model.fit.loglik, rel=1e-10)

    def test_severity_predicts_per_claim(self, sim_null):
        pf, _ = sim_null
        model = fit_severity(pf, "standard")
        assert len(model.predict(pf)) == len(pf.claims)

    def test_bms_n_params_adds_three(self, sim_null):
        pf, _ = sim_null
        structure = BmsStructure(psi=3, l_min=95, l_max=106)
        plain = fit_frequency(pf, "standard")
        bms = fit_frequency(pf, "bms", structure=structure)
        assert bms.n_params == bms.fit.n_params + 3
        assert plain.n_params == plain.fit.n_params

    def test_invalid_kind(self, sim_null):
        pf, _ = sim_null
        with pytest.raises(ValueError):
            fit_frequency(pf, "mystery")


class TestCpgModel:
    def test_predict_is_product(self, sim_null):
        pf, _ = sim_null
        cpg = fit_loss_cost_cpg(pf, "standard")
        freq = cpg.frequency.predict(pf)
        from bmsrate.glm import predict_mean

        sev = predict_mean(cpg.severity.fit, cpg.severity.design_for_contracts(pf))
        assert np.allclose(cpg.predict(pf), freq * sev)

    def test_p_between_one_and_two(self, sim_null):
        pf, _ = sim_null
        cpg = fit_loss_cost_cpg(pf, "standard")
        assert 1.0 < cpg.p < 2.0

    def test_mapped_tweedie_likelihood_matches(self, sim_null):
        pf, _ = sim_null
        cpg = fit_loss_cost_cpg(pf, "standard")
        m = cpg.tweedie_map(pf)
        y = contract_amounts(pf)
        n = pf.contracts["claim_count"].to_numpy(float)
        mapped = float(np.sum(joint_log_density(y, n, m.mu, m.phi, cpg.p, m.w)))
        assert mapped == pytest.approx(cpg.loglik_on(pf), abs=1e-6)

    def test_component_target_validation(self, sim_null):
        pf, _ = sim_null
        from bmsrate.models import CpgModel

        freq = fit_frequency(pf, "standard")
        with pytest.raises(ValueError):
            CpgModel(frequency=freq, severity=freq)


class TestSerialization:
    def test_round_trip_predictions(self, tmp_path, sim_null):
        pf, _ = sim_null
        structure = BmsStructure(psi=3, l_min=95, l_max=106)
        for model in (
            fit_frequency(pf, "bms", structure=structure),
            fit_severity(pf, "kappa_n"),
            fit_loss_cost_cpg(pf, "standard"),
        ):
            path = tmp_path / "model.json"
            save_model(model, path)
            back = load_model(path)
            assert np.allclose(back.predict(pf), model.predict(pf))
            assert back.n_params == model.n_params

    def test_dglm_round_trip(self, sim_null):
        pf, _ = sim_null
        model = fit_loss_cost_tweedie(pf, 1.5, "standard")
        back = model_from_dict(model_to_dict(model))
        assert back.fit.p == 1.5
        assert np.allclose(back.predict(pf), model.predict(pf))
        assert back.loglik_on(pf) == pytest.approx(model.loglik_on(pf), rel=1e-12)

    def test_structure_survives(self, sim_null):
        pf, _ = sim_null
        structure = BmsStructure(psi=2, l_min=94, l_max=100)
        model = fit_frequency(pf, "bms", structure=structure)
        back = model_from_dict(model_to_dict(model))
        assert back.structure == structure
