"""Bandwidth selection for density clustering by split-sample instability."""

__version__ = "0.1.0"

from .clustertree import (
    ClusterTree,
    ComponentLabeling,
    StableLevelReport,
    build_tree,
    connected_components,
    detect_stable_levels,
    grid_tree,
)
from .data import CSVParseError, GeneratorSpec, generate, make_rng, read_csv, task_rng, write_csv
from .instability import (
    BandwidthChoice,
    Heatmap,
    InstabilityCurve,
    Measure,
    SplitTriple,
    confidence_bands,
    gamma_curve,
    gamma_importance,
    gamma_numeric,
    local_maxima,
    select_bandwidth,
    split_three,
    tree_instability,
    xi_alpha_heatmap,
    xi_curve,
    xi_fixed_alpha,
    xi_fixed_lambda,
)
from .kde import (
    THREE_MODE_MIXTURE,
    BinnedKDE,
    EmpiricalKDE,
    NumericalError,
    OracleMixture,
    SmoothedOracle,
    binned_fit,
    eval_density,
    reference_bandwidth,
    smoothed_density,
)
from .kernels import DimensionError, KernelSpec, ParameterError, default_kernel, kernel_value
from .levelset import (
    GridIntegrator,
    LevelSetQuery,
    MonteCarloIntegrator,
    SampleLevelSet,
    content_level_set,
    empirical_level,
    estimate_lambda_alpha,
    membership,
    symmetric_difference_loss,
)
from .oracle import (
    level_set_mass,
    pi_h_mc,
    r_band_probability,
    risk_curve_mc,
    theory_probe,
    true_lambda_alpha,
)
