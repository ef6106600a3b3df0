"""Causal structure learning for spatially replicated time series.

Constraint-based search over lag-expanded variables, with conditional
independence decided by a residual-product (GCM) test whose regressions
can include spatial coordinates as proxies for latent spatial confounders.
Ships simulators with known ground truth and graph-evaluation metrics.
"""

from .citest import (
    CITestResult,
    GcmTester,
    OracleTester,
    ResidualCache,
    gcm_statistic,
    gcm_test,
    oracle_test,
)
from .discovery import (
    DiscoveryConfig,
    DiscoveryRun,
    StabilityReport,
    contemporaneous_phase,
    discover,
    lagged_phase,
    run_discovery,
    significance_sweep,
)
from .errors import (
    AlignmentError,
    ConfigError,
    DataError,
    DegenerateStatisticError,
    DuplicateRowError,
    EmptyDesignError,
    GraphStructureError,
    SimulationError,
    SingularSystemError,
    StcausalError,
    UnbalancedPanelError,
    ZeroVarianceError,
)
from .graphs import (
    ConflictRecord,
    EdgeMark,
    SepsetRecord,
    SepsetRecords,
    TemporalGraph,
    d_separated,
    ic_star_marks,
    orient_colliders,
    propagate_orientations,
)
from .metrics import (
    BaselineTest,
    GraphScore,
    adjacency_scores,
    edge_differences,
    random_edge_baseline,
)
from .panel import (
    DesignMatrix,
    LaggedNode,
    LocationRecord,
    SpatialPanel,
    lagged_design,
    load_panel,
    save_panel,
    standardize,
)
from .regression import (
    RegressorSpec,
    ResidualVector,
    fit_residuals,
    median_heuristic,
    rbf_gram,
    select_penalty,
)
from .simulate import (
    AbmSpec,
    BiasPolicy,
    Mechanism,
    NoiseSpec,
    ScmSpec,
    SpatialFieldSpec,
    bias_sample,
    generate_abm_panel,
    generate_scm_panel,
    median_nn_spacing,
    random_temporal_dag,
    spatial_field,
)

__version__ = "0.1.0"

__all__ = [
    "AbmSpec",
    "AlignmentError",
    "BaselineTest",
    "BiasPolicy",
    "CITestResult",
    "ConfigError",
    "ConflictRecord",
    "DataError",
    "DegenerateStatisticError",
    "DesignMatrix",
    "DuplicateRowError",
    "EmptyDesignError",
    "UnbalancedPanelError",
    "ZeroVarianceError",
    "DiscoveryConfig",
    "DiscoveryRun",
    "EdgeMark",
    "GcmTester",
    "GraphScore",
    "GraphStructureError",
    "LaggedNode",
    "LocationRecord",
    "Mechanism",
    "NoiseSpec",
    "OracleTester",
    "RegressorSpec",
    "ResidualCache",
    "ResidualVector",
    "ScmSpec",
    "SepsetRecord",
    "SepsetRecords",
    "SimulationError",
    "SingularSystemError",
    "SpatialFieldSpec",
    "SpatialPanel",
    "StabilityReport",
    "StcausalError",
    "TemporalGraph",
    "adjacency_scores",
    "bias_sample",
    "contemporaneous_phase",
    "d_separated",
    "discover",
    "edge_differences",
    "fit_residuals",
    "gcm_statistic",
    "gcm_test",
    "generate_abm_panel",
    "generate_scm_panel",
    "ic_star_marks",
    "lagged_design",
    "lagged_phase",
    "load_panel",
    "median_heuristic",
    "median_nn_spacing",
    "oracle_test",
    "orient_colliders",
    "propagate_orientations",
    "random_edge_baseline",
    "random_temporal_dag",
    "rbf_gram",
    "run_discovery",
    "save_panel",
    "select_penalty",
    "significance_sweep",
    "spatial_field",
    "standardize",
]
