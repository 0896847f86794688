"""Spline interpolation in the space of probability measures.

Discrete path and spline energies over several optimal transport backends
(exact, 1D, Gaussian closed forms, entropic grids), solvers for keyframe
interpolation problems, and a sample-wise spline baseline.
"""

from .baselines import TSplineResult, t_spline_1d, t_spline_pointcloud
from .curves import (
    PiecewiseCubic,
    TemporalExtension,
    cubic_spline_interpolate,
    discrete_euclidean_spline,
    temporal_extension,
)
from .errors import (
    AllZero,
    BackendMismatch,
    ConfigError,
    ConstraintViolated,
    DegenerateRaster,
    EpsTooSmall,
    InfeasibleConstraint,
    NegativeMass,
    NoConvergence,
    NoProgress,
    NotConverged,
    NotSPD,
    SingularSystem,
    TooLarge,
    WSplineError,
)
from .gaussian import (
    DiagGaussianPath,
    GaussianCurveSample,
    bures_distance2,
    diag_spline_energy,
    gaussian_barycenter,
    gaussian_espline,
    gaussian_gen_barycenter,
    gaussian_monge_map,
    sqrt2x2_spd,
)
from .measures import (
    Atoms,
    DiscreteMeasure,
    Gaussian,
    Grid2,
    PointCloud,
    measure_from_density_grid,
    moments,
    rasterize_gaussian,
)
from .optimizer import (
    OptimizerConfig,
    OptimizerTrace,
    simplex_project,
    solve_grid_spline,
    solve_pointcloud_spline,
)
from .ot_exact import Coupling, monge_map_1d, wasserstein2_1d, wasserstein2_exact_small
from .sinkhorn import (
    EntropicBarycenter,
    SinkhornState,
    apply_gibbs_kernel,
    entropic_barycenter,
    sinkhorn_distance,
    sinkhorn_grad_weights,
)
from .spline import (
    SplineProblem,
    SplineSolution,
    discrete_gen_spline_energy,
    discrete_path_energy,
    discrete_spline_energy,
    full_objective,
    polarization_spline_energy,
)

__version__ = "0.1.0"
