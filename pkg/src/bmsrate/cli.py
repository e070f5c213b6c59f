"""Batch command-line front end.

Subcommands: simulate, fit, compare, score, report.  Every run writes a
manifest (config hash, seed, library versions) next to its outputs so a
run can be reproduced bit-exactly.

Exit codes:
  0  success
  2  usage error (bad flags or arguments)
  3  data file could not be parsed
  4  data consistency violation
  5  design/model schema mismatch
  6  iterative fit did not converge
  7  likelihood unbounded (degenerate data)
  8  degenerate cross-validation fold
  9  other package error
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path

import numpy as np
import pandas as pd
import scipy

from . import __version__
from .bms_search import (
    DEFAULT_LMAX_GRID,
    DEFAULT_LMIN_GRID,
    DEFAULT_PSI_GRID,
    fit_bms,
    fit_kappa_n,
    profile_table_to_csv,
)
from .elasticnet import cv_select, cv_table_to_csv, fit_penalized
from .evaluate import (
    ComparisonRow,
    build_report,
    comparison_to_csv,
    logarithmic_score,
    relativity_table,
    relativity_table_to_csv,
    report_to_json,
)
from .exceptions import (
    BmsrateError,
    ConsistencyError,
    ConvergenceError,
    DivergenceError,
    FoldError,
    ParseError,
    SchemaError,
)
from .models import (
    KAPPA_COLUMN,
    N_COLUMN,
    CpgModel,
    claim_design,
    contract_design,
    fit_frequency,
    fit_loss_cost_cpg,
    fit_loss_cost_tweedie,
    fit_severity,
    load_model,
    save_model,
)
from .portfolio import (
    DEFAULT_WINDOW_YEARS,
    BmsStructure,
    load_portfolio,
    save_portfolio,
)
from .simulator import SimSpec, save_truth, simulate_portfolio

EXIT_CODES = {
    ParseError: 3,
    ConsistencyError: 4,
    SchemaError: 5,
    ConvergenceError: 6,
    DivergenceError: 7,
    FoldError: 8,
    BmsrateError: 9,
}

EPILOG = __doc__[__doc__.index("Exit codes:") :]


def _write_manifest(out_dir: Path, config: dict) -> None:
    blob = json.dumps(config, sort_keys=True, default=str)
    manifest = {
        "config": config,
        "config_sha256": hashlib.sha256(blob.encode()).hexdigest(),
        "versions": {
            "bmsrate": __version__,
            "python": sys.version.split()[0],
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "pandas": pd.__version__,
        },
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _load_config(path):
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def _cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    overrides = {
        k: v
        for k, v in {
            "n_policies": args.policies,
            "years": args.years,
            "seed": args.seed,
        }.items()
        if v is not None
    }
    cfg.update(overrides)
    if "structure_freq" in cfg:
        cfg["structure_freq"] = BmsStructure(**cfg["structure_freq"])
    if "structure_sev" in cfg:
        cfg["structure_sev"] = BmsStructure(**cfg["structure_sev"])
    for key in ("beta_freq", "beta_sev", "vehicle_probs"):
        if key in cfg:
            cfg[key] = tuple(cfg[key])
    spec = SimSpec(**cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    portfolio, truth = simulate_portfolio(spec)
    save_portfolio(portfolio, out / "contracts.csv", out / "claims.csv")
    save_truth(truth, out / "truth.csv")
    _write_manifest(out, {"command": "simulate", **{k: getattr(spec, k) for k in spec.__dataclass_fields__}})
    print(f"wrote {portfolio.n_contracts} contracts, {len(portfolio.claims)} claims to {out}")
    return 0


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------


def _select_covariates(portfolio, target, args):
    """Elastic-net covariate selection at the unpenalized experience stage."""
    kind = "kappa_n"
    exempt = (KAPPA_COLUMN, N_COLUMN)
    if target == "severity":
        design = claim_design(portfolio, kind, args.window)
        response = portfolio.claims["cost"].to_numpy(float)
        exposure = np.ones(len(response))
        claim_contracts = portfolio.claims["policy_id"].to_numpy()
        groups = claim_contracts
        family = "gamma"
    else:
        design = contract_design(portfolio, kind, args.window)
        response = portfolio.contracts["claim_count"].to_numpy(float)
        exposure = portfolio.contracts["exposure"].to_numpy(float)
        groups = portfolio.contracts["policy_id"].to_numpy()
        family = "poisson"
    result = cv_select(
        design,
        response,
        family,
        exposure,
        groups,
        alpha_grid=tuple(args.alpha_grid),
        n_lambda=args.n_lambda,
        folds=args.folds,
        seed=args.seed,
        exempt=exempt,
    )
    fit = fit_penalized(design, response, family, exposure, result.one_se)
    selected = [
        lbl
        for lbl, b in zip(fit.labels, fit.beta)
        if b != 0 and lbl in portfolio.covariate_names
    ]
    return selected, result


def _cmd_fit(args) -> int:
    portfolio = load_portfolio(args.contracts, args.claims)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    covariates = list(portfolio.covariate_names)
    cv_result = None
    if args.elastic_net:
        sel_target = "severity" if args.target == "severity" else "frequency"
        covariates, cv_result = _select_covariates(portfolio, sel_target, args)
        cv_table_to_csv(cv_result.table, out / "cv_table.csv")

    target, kind = args.target, args.model
    if kind == "bms":
        psi_grid = tuple(args.psi_grid)
        lmin_grid = tuple(args.lmin_grid)
        lmax_grid = tuple(args.lmax_grid)
        if target == "loss_cost_cpg":
            freq = fit_bms(portfolio, "frequency", covariates, psi_grid, lmin_grid, lmax_grid, args.window)
            sev = fit_bms(portfolio, "severity", covariates, psi_grid, lmin_grid, lmax_grid, args.window)
            model = CpgModel(freq.as_fitted_model(), sev.as_fitted_model())
            profile_table_to_csv(freq.profile_table, out / "profile_table_frequency.csv")
            profile_table_to_csv(sev.profile_table, out / "profile_table_severity.csv")
            rel = None
        else:
            bms_target = "loss_cost" if target == "loss_cost_tweedie" else target
            bm = fit_bms(
                portfolio, bms_target, covariates, psi_grid, lmin_grid, lmax_grid,
                args.window, p=args.p,
            )
            model = bm.as_fitted_model()
            profile_table_to_csv(bm.profile_table, out / "profile_table.csv")
            rel = (bm.gamma0, bm.structure)
    else:
        rel = None
        if target == "frequency":
            model = fit_frequency(portfolio, kind, args.window, covariates=covariates)
        elif target == "severity":
            model = fit_severity(portfolio, kind, args.window, covariates=covariates)
        elif target == "loss_cost_tweedie":
            model = fit_loss_cost_tweedie(portfolio, args.p, kind, args.window, covariates=covariates)
        else:
            model = fit_loss_cost_cpg(portfolio, kind, args.window, covariates=covariates)

    save_model(model, out / "model.json")
    report = build_report(
        model,
        portfolio,
        gamma0=rel[0] if rel else None,
        structure=rel[1] if rel else None,
    )
    report_to_json(report, out / "report.json")
    _write_manifest(out, {"command": "fit", **vars(args)})
    print(f"fitted {kind} {target} model: loglik={report.loglik:.4f} aic={report.aic:.4f}")
    return 0


# ---------------------------------------------------------------------------
# compare / score / report
# ---------------------------------------------------------------------------


def _cmd_compare(args) -> int:
    test = None
    if args.test_contracts:
        test = load_portfolio(args.test_contracts, args.test_claims)
    rows = []
    for label_path in args.fits:
        label, path = label_path.split("=", 1) if "=" in label_path else (Path(label_path).stem, label_path)
        model = load_model(path)
        if isinstance(model, CpgModel):
            family = "cpg"
            n_params = model.n_params
            train_ll = model.frequency.fit.loglik + model.severity.fit.loglik
            n_obs = model.frequency.fit.n_obs
        else:
            family = model.fit.family if hasattr(model.fit, "family") else "tweedie"
            n_params = model.n_params
            train_ll = model.fit.loglik
            n_obs = model.fit.n_obs
        sl = logarithmic_score(model, test) if test is not None else None
        rows.append(
            ComparisonRow(
                model=label,
                family=family,
                n_params=n_params,
                loglik=train_ll,
                aic=-2 * train_ll + 2 * n_params,
                bic=-2 * train_ll + n_params * float(np.log(n_obs)),
                sl=sl,
            )
        )
    comparison_to_csv(rows, args.out)
    print(f"wrote comparison of {len(rows)} models to {args.out}")
    return 0


def _cmd_score(args) -> int:
    model = load_model(args.model)
    test = load_portfolio(args.contracts, args.claims)
    sl = logarithmic_score(model, test)
    print(f"SL = {sl!r}")
    return 0


def trajectory_levels(claims_by_year, structure, window_years=DEFAULT_WINDOW_YEARS):
    """Level at each year given a claim-count history (year 1 onward)."""
    levels = []
    for t in range(len(claims_by_year) + 1):
        lev = float(structure.l_start)
        for tau in range(max(0, t - window_years), t):
            n = claims_by_year[tau]
            lev = lev - (n == 0) + structure.psi * n
            if structure.clamped:
                lev = float(min(max(lev, structure.l_min), structure.l_max))
        levels.append(lev)
    return levels[1:]  # level entering year t+1 after observing year t


def _cmd_report(args) -> int:
    model = load_model(args.model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    structure = None
    gamma0 = None
    if isinstance(model, CpgModel):
        single = model.frequency
    else:
        single = model
    if single.kind == "bms":
        structure = single.structure
        labels = (
            single.fit.labels_mean if hasattr(single.fit, "labels_mean") else single.fit.labels
        )
        beta = single.fit.beta_mean if hasattr(single.fit, "beta_mean") else single.fit.beta
        gamma0 = float(beta[list(labels).index("bms_level")])
        relativity_table_to_csv(relativity_table(gamma0, structure), out / "relativities.csv")
    if args.trajectories:
        if structure is None:
            if args.psi is None:
                raise SchemaError(
                    "trajectories need a scale: a bms model or --psi/--lmin/--lmax"
                )
            structure = BmsStructure(psi=args.psi, l_min=args.lmin, l_max=args.lmax)
        hist = pd.read_csv(args.trajectories)
        with open(out / "trajectories.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["insured_id", "year", "claims", "level_after"])
            for insured, grp in hist.groupby("insured_id", sort=False):
                grp = grp.sort_values("year")
                claims = grp["claims"].tolist()
                levels = trajectory_levels(claims, structure, args.window)
                for year, n, lev in zip(grp["year"], claims, levels):
                    writer.writerow([insured, year, n, lev])
    _write_manifest(out, {"command": "report", **vars(args)})
    print(f"wrote report artifacts to {out}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bmsrate",
        description="Experience-rating engine for claim frequency, severity and loss cost.",
        epilog=EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a synthetic portfolio", epilog=EPILOG,
                         formatter_class=argparse.RawDescriptionHelpFormatter)
    sim.add_argument("--config", help="JSON file of generator settings")
    sim.add_argument("--policies", type=int, help="number of policies")
    sim.add_argument("--years", type=int, help="number of calendar years")
    sim.add_argument("--seed", type=int, help="random seed")
    sim.add_argument("--out", required=True, help="output directory")
    sim.set_defaults(func=_cmd_simulate)

    fit = sub.add_parser("fit", help="fit a model to portfolio files", epilog=EPILOG,
                         formatter_class=argparse.RawDescriptionHelpFormatter)
    fit.add_argument("--contracts", required=True)
    fit.add_argument("--claims", required=True)
    fit.add_argument("--model", choices=("standard", "kappa_n", "bms"), default="standard")
    fit.add_argument(
        "--target",
        choices=("frequency", "severity", "loss_cost_cpg", "loss_cost_tweedie"),
        default="frequency",
    )
    fit.add_argument("--window", type=int, default=DEFAULT_WINDOW_YEARS)
    fit.add_argument("--p", type=float, default=1.5, help="Tweedie variance power")
    fit.add_argument("--psi-grid", type=int, nargs="+", default=list(DEFAULT_PSI_GRID))
    fit.add_argument("--lmin-grid", type=int, nargs="+", default=list(DEFAULT_LMIN_GRID))
    fit.add_argument("--lmax-grid", type=int, nargs="+", default=list(DEFAULT_LMAX_GRID))
    fit.add_argument("--elastic-net", action="store_true", help="run covariate selection")
    fit.add_argument("--alpha-grid", type=float, nargs="+", default=[0.0, 0.5, 1.0])
    fit.add_argument("--n-lambda", type=int, default=20)
    fit.add_argument("--folds", type=int, default=5)
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("--out", required=True, help="output directory")
    fit.set_defaults(func=_cmd_fit)

    cmp_ = sub.add_parser("compare", help="tabulate fitted models side by side", epilog=EPILOG,
                          formatter_class=argparse.RawDescriptionHelpFormatter)
    cmp_.add_argument("fits", nargs="+", help="model.json paths, optionally label=path")
    cmp_.add_argument("--test-contracts")
    cmp_.add_argument("--test-claims")
    cmp_.add_argument("--out", required=True, help="comparison CSV path")
    cmp_.set_defaults(func=_cmd_compare)

    score = sub.add_parser("score", help="logarithmic score on a test set", epilog=EPILOG,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
    score.add_argument("--model", required=True)
    score.add_argument("--contracts", required=True)
    score.add_argument("--claims", required=True)
    score.set_defaults(func=_cmd_score)

    rep = sub.add_parser("report", help="relativity tables and level trajectories", epilog=EPILOG,
                         formatter_class=argparse.RawDescriptionHelpFormatter)
    rep.add_argument("--model", required=True)
    rep.add_argument("--trajectories", help="CSV insured_id,year,claims of claim histories")
    rep.add_argument("--psi", type=int)
    rep.add_argument("--lmin", type=int)
    rep.add_argument("--lmax", type=int)
    rep.add_argument("--window", type=int, default=DEFAULT_WINDOW_YEARS)
    rep.add_argument("--out", required=True, help="output directory")
    rep.set_defaults(func=_cmd_report)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except BmsrateError as exc:
        for klass, code in EXIT_CODES.items():
            if isinstance(exc, klass):
                print(f"error: {exc}", file=sys.stderr)
                return code
        print(f"error: {exc}", file=sys.stderr)
        return 9
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
