#!/usr/bin/env python3
"""Fit the standard, Kappa-N and BMS variants of the frequency and
loss-cost models on a heterogeneous simulated portfolio and tabulate
AIC, BIC and the out-of-sample logarithmic score.
"""

import argparse

from bmsrate.bms_search import fit_bms
from bmsrate.evaluate import ComparisonRow, comparison_to_csv, logarithmic_score
from bmsrate.models import fit_frequency, fit_loss_cost_cpg
from bmsrate.portfolio import split_train_test
from bmsrate.simulator import SimSpec, simulate_portfolio


def _row(label, family, n_params, loglik, n_obs, sl):
    import numpy as np

    return ComparisonRow(
        model=label,
        family=family,
        n_params=n_params,
        loglik=loglik,
        aic=-2 * loglik + 2 * n_params,
        bic=-2 * loglik + n_params * float(np.log(n_obs)),
        sl=sl,
    )


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--policies", type=int, default=10000)
    parser.add_argument("--years", type=int, default=12)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--train-fraction", type=float, default=0.7)
    parser.add_argument("--out", default="comparison.csv")
    args = parser.parse_args()

    spec = SimSpec(
        n_policies=args.policies,
        years=args.years,
        seed=args.seed,
        beta_freq=(0.3, 0.02),
        beta_sev=(0.1, 0.0),
        gamma0_freq=0.09,
        gamma0_sev=0.03,
        base_frequency=0.08,
    )
    portfolio, _ = simulate_portfolio(spec)
    split = split_train_test(portfolio, args.train_fraction, seed=args.seed)
    train, test = split.train, split.test
    print(f"train {train.n_contracts} contracts, test {test.n_contracts}")

    bm = fit_bms(
        train, "frequency", psi_grid=(2, 3, 4), lmin_grid=(94, 95, 96),
        lmax_grid=(105, 106, 107),
    )
    structure = bm.structure
    print(
        f"fitted scale: psi={structure.psi} bounds=[{structure.l_min}, "
        f"{structure.l_max}] gamma0={bm.gamma0:.4f}"
    )

    rows = []
    freq = {
        "freq_standard": fit_frequency(train, "standard"),
        "freq_kappa_n": fit_frequency(train, "kappa_n"),
        "freq_bms": bm.as_fitted_model(),
    }
    for label, model in freq.items():
        rows.append(
            _row(
                label, "poisson", model.n_params, model.fit.loglik,
                model.fit.n_obs, logarithmic_score(model, test),
            )
        )
    loss = {
        "loss_standard": fit_loss_cost_cpg(train, "standard"),
        "loss_kappa_n": fit_loss_cost_cpg(train, "kappa_n"),
        "loss_bms": fit_loss_cost_cpg(
            train, "bms", structure_freq=structure, structure_sev=structure
        ),
    }
    for label, model in loss.items():
        rows.append(
            _row(
                label, "cpg", model.n_params, model.loglik_on(train),
                model.frequency.fit.n_obs, logarithmic_score(model, test),
            )
        )
    comparison_to_csv(rows, args.out)
    print(f"\n{'model':<16}{'n_params':>9}{'loglik':>14}{'aic':>14}{'sl':>14}")
    for r in rows:
        print(f"{r.model:<16}{r.n_params:>9}{r.loglik:>14.2f}{r.aic:>14.2f}{r.sl:>14.2f}")
    print(f"\ncomparison written to {args.out}")


if __name__ == "__main__":
    main()
