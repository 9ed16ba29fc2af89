"""Structured full-covariance Gaussian models for reconstruction residuals."""

from ._backend import active_backend, use_backend
from .estimator import (
    CondRegressor,
    DiagonalHead,
    FitReport,
    LowRankHead,
    PredictedGaussian,
    SparseHead,
    TrainConfig,
    evaluate,
    fit,
    forward,
    init_regressor,
    load_regressor,
    nll_grad_wrt_params,
    predict_gaussian,
    save_regressor,
)
from .denoise import DenoiseResult, denoise, eigen_project
from .gaussian import (
    ConvergenceError,
    DenseGaussian,
    EigenPairs,
    NotPositiveDefiniteError,
    chol_factor,
    covariance_from_factor,
    frobenius_dist,
    gaussian_kl,
    logdet_cov,
    nll_dense,
    sample_dense,
    sym_eigen,
)
from .lowrank import (
    COVARIANCE_SIDE,
    PRECISION_SIDE,
    LowRankFactor,
    lr_logdet,
    lr_nll,
    lr_sample,
    ortho_penalty,
    woodbury_inverse,
)
from .synthdata import (
    EllipseConfig,
    LinearReconstructor,
    SplineConfig,
    SynthRecord,
    cubic_spline,
    ellipse_covariance,
    gen_ellipses,
    gen_splines,
    linear_reconstructor_fit,
    read_dataset,
    spline_covariance,
    write_dataset,
)
from .sparse import (
    GridShape,
    NeighborhoodPattern,
    SparseCholesky,
    build_pattern,
    nll_sparse,
    precision_bandwidth,
    read_sparse_chol,
    sample_sparse,
    to_dense,
    write_sparse_chol,
)

__version__ = "0.1.0"

__all__ = [
    "COVARIANCE_SIDE",
    "CondRegressor",
    "ConvergenceError",
    "DenoiseResult",
    "DenseGaussian",
    "DiagonalHead",
    "EigenPairs",
    "EllipseConfig",
    "FitReport",
    "GridShape",
    "LinearReconstructor",
    "LowRankFactor",
    "LowRankHead",
    "NeighborhoodPattern",
    "NotPositiveDefiniteError",
    "PRECISION_SIDE",
    "PredictedGaussian",
    "SparseCholesky",
    "SparseHead",
    "SplineConfig",
    "SynthRecord",
    "TrainConfig",
    "active_backend",
    "build_pattern",
    "chol_factor",
    "covariance_from_factor",
    "cubic_spline",
    "denoise",
    "eigen_project",
    "ellipse_covariance",
    "evaluate",
    "fit",
    "forward",
    "frobenius_dist",
    "gaussian_kl",
    "gen_ellipses",
    "gen_splines",
    "init_regressor",
    "linear_reconstructor_fit",
    "load_regressor",
    "logdet_cov",
    "lr_logdet",
    "lr_nll",
    "lr_sample",
    "nll_dense",
    "nll_grad_wrt_params",
    "nll_sparse",
    "ortho_penalty",
    "precision_bandwidth",
    "predict_gaussian",
    "read_dataset",
    "read_sparse_chol",
    "sample_dense",
    "sample_sparse",
    "save_regressor",
    "spline_covariance",
    "sym_eigen",
    "to_dense",
    "use_backend",
    "write_dataset",
    "write_sparse_chol",
]
