"""Conformal prediction bands and cluster trees for functional data."""

from .bands import (
    Band,
    BandMethod,
    Ellipsoid,
    build_band,
    band_contains,
    component_overlap_delta,
    conformal_threshold,
    ellipsoid_support,
    empirical_coverage,
    fit_band,
    gaussian_level_set,
    overlap_deltas,
    split,
    trust_region_max,
)
from .funcdata import (
    Basis,
    BasisKind,
    CurveSet,
    Grid,
    analytic_distance,
    cosine_coefficients,
    fpca,
    inner_product,
    l2_distance,
    project,
    reconstruct,
)
from .gmm import (
    FitConfig,
    MixtureModel,
    fit_em,
    gaussian_density,
    max_component_score,
    mixture_density,
)
from .pdens import (
    ConformalTree,
    Distance,
    Kernel,
    PseudoDensityModel,
    build_linkage_graph,
    conformal_pvalue,
    conformal_tree,
    cplus_threshold,
    data_subset,
    default_bandwidth,
    default_epsilon,
    mean_shift_modes,
    pseudo_density,
    summary_sets,
)
from .simulate import ComponentSpec, SimSpec, simulate

__version__ = "0.1.0"
