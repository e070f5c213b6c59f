"""Experience-rating engine for insurance claim frequency, severity and
loss cost, with experience-based (Kappa-N) and bonus-malus scale models
under compound Poisson-gamma and Tweedie distributions."""

__version__ = "0.1.0"

from .exceptions import (
    BmsrateError,
    ConsistencyError,
    ConvergenceError,
    DivergenceError,
    FoldError,
    ParseError,
    SchemaError,
)
from .portfolio import (
    BmsStructure,
    ClaimRecord,
    ContractRecord,
    Portfolio,
    ScopeSummary,
    bms_level,
    classify_insured_type,
    compute_scope,
    load_portfolio,
    save_portfolio,
    split_train_test,
)
from .glm import DesignMatrix, GlmFit, design_matrix, fit_gamma, fit_poisson, predict_mean
from .tweedie import (
    DglmFit,
    TweedieObservation,
    TweedieObservations,
    cpg_to_tweedie,
    deviance_response,
    fit_dglm,
    joint_log_density,
    select_p,
)
from .elasticnet import PenaltySpec, cv_select, fit_penalized
from .bms_search import BmsModel, KappaNResult, fit_bms, fit_kappa_n
from .models import (
    CpgModel,
    FittedModel,
    fit_frequency,
    fit_loss_cost_cpg,
    fit_loss_cost_tweedie,
    fit_severity,
    load_model,
    save_model,
)
from .simulator import SimSpec, simulate_portfolio
from .evaluate import (
    ModelReport,
    build_report,
    combined_cpg_relativity,
    group_ratio_report,
    logarithmic_score,
    off_balance_factor,
    relativity_table,
)

__all__ = [name for name in dir() if not name.startswith("_")]
