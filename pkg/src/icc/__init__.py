"""Causal inference with instruments exogenous only conditional on proxied confounders.

The observed proxies W pin down the latent confounder directions inside the
instrument block Z; conditioning on the fitted control T removes them, and
the remaining instrument variation identifies the causal effect of A on Y.
"""

from .data import (
    Dataset,
    LoadResult,
    SeedSpec,
    IccError,
    GateError,
    RelevanceError,
    CompletenessError,
    DegenerateControlError,
    StrongRelevanceError,
    load_csv,
    save_csv,
    write_report,
    read_report,
)
from .lineardgp import (
    LinearDGPSpec,
    PopulationMoments,
    implied_covariances,
    sample_linear,
    population_tsls,
    population_icc_beta,
    population_icc_beta_at_rank,
    sigma_zw_factor,
    spec_s1,
)
from .control import (
    GammaTilde,
    ControlFunction,
    estimate_gamma_tilde,
    build_control,
    orthogonalize_instruments,
    population_control,
)
from .estimators import EstimateResult, SweepResult, estimate, bias_variance_sweep
from .htests import (
    RankTestResult,
    RelevanceTestResult,
    SpecificationTestResult,
    rank_test,
    relevance_test,
    specification_test,
)
from .debias import (
    DebiasSystem,
    DmlResult,
    NuisanceSet,
    SieveSpace,
    build_system,
    check_neyman_orthogonality,
    compute_nuisances_exact,
    dml_estimate,
    moment_m3,
    perturb_nuisances,
    population_m3,
    solve_nuisances,
    verify_error_decomposition,
)
from .discrete import (
    DiscreteModel,
    JointTable,
    BridgeSolution,
    enumerate_joint,
    cond_expect,
    minimal_discrete_control,
    check_completeness,
    solve_ls_bridge,
    counterfactual_mean_deviation,
    sample_from_joint,
    random_discrete_model,
    random_class_model,
    separable_class_model,
    sharp_discrete_model,
)
from .monotone import (
    MonotoneControl,
    SupportReport,
    AverageCausalResult,
    estimate_vt,
    check_common_support,
    average_causal,
)

__version__ = "0.1.0"
