"""Stochastic-intervention effect estimation and intervention search."""

from .data import (
    ColumnSchema,
    DatasetError,
    DgpConfig,
    FoldAssignment,
    GroundTruth,
    ObservationalDataset,
    OP_DEFAULTS,
    default_schema,
    generate_ihdp_like,
    generate_op_like,
    load_csv,
    split_folds,
    train_test_split,
    write_csv,
    write_truth_csv,
)
from .effects import (
    EstimateReport,
    FoldDiagnostics,
    InfluenceTable,
    NuisanceSpec,
    OutcomeSpec,
    PropensitySpec,
    UnitRecords,
    baseline_ipwe,
    baseline_ols,
    cross_fit_records,
    epsilon_ate,
    estimate_ate_difference,
    estimate_sie,
    expected_response,
    expected_response_from_records,
    influence,
    m_term,
    report_from_records,
    stochastic_propensity,
    sweep_expected_outcome,
    write_influence_csv,
)
from .genetic import (
    GaConfig,
    GaTrace,
    InterventionVector,
    crossover,
    fitness,
    initialize_population,
    mutate,
    optimize,
    optimize_records,
    select_parents,
)
from .nuisance import (
    BasisExpansion,
    FitError,
    OutcomeConfig,
    OutcomeModel,
    PropensityModel,
    SolverConfig,
    fit_outcome,
    fit_propensity,
    load_model,
    make_basis,
    save_model,
)

__version__ = "0.1.0"
