"""Spectral laboratory for the cut-off Gaussian free field on flat model surfaces."""

__version__ = "0.1.0"

from .capacity import (
    CapacityError,
    CapacityResult,
    CapacitySolver,
    Disk,
    DomainMask,
    Rect,
    Union,
    conformal_invariance_check,
    dual_capacity,
    equilibrium_potential,
    sigma_poisson,
    sigma_quadratic,
    solve_capacity_primal,
)
from .config import ConfigError, RunConfig, parse_config
from .experiments import (
    BoxEmbedding,
    TailEstimate,
    check_log_correlated,
    embed_box,
    estimate_hole_probability,
    estimate_sup_tail,
    low_point_area,
    modulus_of_continuity,
)
from .fields import (
    CGFFSampler,
    DgffSample,
    FieldSample,
    sample_cgff,
    sample_dgff,
    sample_two_scale,
    shift_field,
)
from .kernels import (
    ResidualReport,
    asymptotic_residual,
    band_covariance,
    covariance,
    derivative_kernel,
    link_residual,
    projector_kernel,
)
from .surfaces import (
    EigenPair,
    SpectralBasis,
    SurfaceModel,
    enumerate_eigenpairs,
    eval_eigenfunction,
    geodesic_distance,
    gram_matrix,
)
from .validation import ValidationError
