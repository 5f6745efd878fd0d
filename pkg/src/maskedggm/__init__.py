"""Edge-wise inference for Gaussian graphical models from masked data."""

from .obsmodel import (
    MaskedDataError,
    MaskedDataset,
    ObservationIndex,
    PairCounts,
    load_masked_csv,
    pairwise_counts,
    quad_count,
)
from .covest import PairwiseCovariance, unbiased_cov
from .psdproj import (
    ProjectedCovariance,
    ProjectionConfig,
    ProjectionError,
    eig_threshold,
    project_psd_weighted,
    project_weighted_l1_ball,
)
from .nblasso import (
    DebiasRow,
    DegenerateVarianceError,
    NeighborhoodFit,
    PenaltyVector,
    SolverError,
    default_penalties,
    neighborhood_support,
    solve_penalized_quadratic,
    tau_and_row,
)
from .edgewise import (
    EdgeInference,
    ThetaBar,
    build_theta_bar,
    debiased_stat,
    edge_test,
    edges_to_neighbors,
    normal_cdf,
    normal_quantile,
    s1_s2_sets,
    infer_all_edges,
    threshold_test,
    variance_estimate,
)
from .multitest import FdrSelection, PvalueTable, fdp_fdr_metrics, fdr_select, holm
from .simlab import (
    GraphSpec,
    MeasurementSpec,
    PrecisionSpec,
    baseline_nlasso_joe,
    gen_graph,
    gen_pattern,
    gen_precision,
    sample_data,
    selection_metrics,
    stability_select,
)

__version__ = "0.1.0"
