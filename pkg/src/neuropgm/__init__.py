"""Probabilistic graphical models for multi-subject spatiotemporal data.

A numpy/scipy library plus command-line harness covering five model
families over time x voxel matrices:

- shared response models (deterministic, probabilistic, hyperalignment),
- topographic factor analysis with radial-basis factors, single subject
  and hierarchical multi-subject,
- Bayesian linear decoding with ridge, automatic relevance
  determination, and a Gaussian-process prior over log prior variances,
- Bayesian representational similarity analysis with AR(1) noise,
- matrix-normal factor models with Kronecker-separable residuals.

Every model ships with a seeded forward simulator and an inference
engine so each fitter is verified by simulate-and-recover experiments;
structured-covariance algebra and exact Gaussian densities live in
:mod:`neuropgm.covariance` and :mod:`neuropgm.densities`.
"""

from . import errors
from .errors import (BadMagic, BadShape, BadSpec, ConfigError,
                     DataFormatError, DegenerateNoise, DimensionMismatch,
                     NeuropgmError, NonNumericCell, NonPositiveWidth, NotSPD,
                     RankDeficient, SolverFailure, TruncatedFile)
from .brsa import (BrsaModel, DesignMatrix, brsa_neg_marginal_loglik,
                   convolve_design, default_hrf, expected_spurious_similarity,
                   fit_brsa, naive_rsa, similarity_from_cov)
from .config import parse_config, parse_config_text
from .covariance import (AR1, CovarianceSpec, DenseSPD, Diagonal, SEKernel,
                         ScaledIdentity, cov_materialize)
from .densities import (kron_sum_mvn_logpdf, kron_sum_mvn_logpdf_grads,
                        matnormal_logpdf, matnormal_logpdf_grads, mvn_logpdf)
from .drd import (DrdModel, drd_classify, drd_covariance,
                  drd_neg_log_posterior, drd_predict, fit_ard, fit_drd,
                  fit_ridge)
from .htfa import (HtfaGlobalTemplate, HtfaSubjectModel, VoxelGrid,
                   factor_matrix, fit_htfa, htfa_global_step,
                   htfa_map_objective, isfc, node_connectivity, rbf_factor,
                   tfa_local_step, tfa_weight_step)
from .linalg import CholeskyFactor, cholesky_logdet, orthogonal_procrustes
from .matio import read_events, read_matrix, write_events, write_matrix
from .matnormal import (MnModel, dpsrm_marginal_grads, dpsrm_marginal_loglik,
                        fit_dpsrm, fit_mnsrm, mn_heldout_score,
                        mnsrm_marginal_loglik)
from .metrics import (aligned_recovery_score, canonical_correlations,
                      matched_center_error, pearson)
from .report import FitReport, read_report, render_report, write_report
from .simulate import (SimSpec, SimTruth, simulate_brsa, simulate_drd,
                       simulate_htfa, simulate_matnormal, simulate_srm)
from .srm import (SrmModel, fit_hyperalignment, fit_srm_deterministic,
                  fit_srm_probabilistic, srm_heldout_score, srm_transform)

__version__ = "0.1.0"

__all__ = [
    "errors",
    "NeuropgmError",
    "NotSPD",
    "DimensionMismatch",
    "BadShape",
    "BadSpec",
    "RankDeficient",
    "DegenerateNoise",
    "NonPositiveWidth",
    "SolverFailure",
    "DataFormatError",
    "BadMagic",
    "TruncatedFile",
    "NonNumericCell",
    "ConfigError",
    "CovarianceSpec",
    "ScaledIdentity",
    "Diagonal",
    "AR1",
    "DenseSPD",
    "SEKernel",
    "cov_materialize",
    "CholeskyFactor",
    "cholesky_logdet",
    "orthogonal_procrustes",
    "mvn_logpdf",
    "matnormal_logpdf",
    "matnormal_logpdf_grads",
    "kron_sum_mvn_logpdf",
    "kron_sum_mvn_logpdf_grads",
    "SimSpec",
    "SimTruth",
    "simulate_srm",
    "simulate_htfa",
    "simulate_drd",
    "simulate_brsa",
    "simulate_matnormal",
    "SrmModel",
    "fit_srm_deterministic",
    "fit_srm_probabilistic",
    "fit_hyperalignment",
    "srm_transform",
    "srm_heldout_score",
    "VoxelGrid",
    "HtfaGlobalTemplate",
    "HtfaSubjectModel",
    "rbf_factor",
    "factor_matrix",
    "tfa_weight_step",
    "tfa_local_step",
    "htfa_global_step",
    "htfa_map_objective",
    "fit_htfa",
    "node_connectivity",
    "isfc",
    "DrdModel",
    "fit_ridge",
    "fit_ard",
    "fit_drd",
    "drd_covariance",
    "drd_neg_log_posterior",
    "drd_predict",
    "drd_classify",
    "BrsaModel",
    "DesignMatrix",
    "default_hrf",
    "convolve_design",
    "similarity_from_cov",
    "naive_rsa",
    "expected_spurious_similarity",
    "brsa_neg_marginal_loglik",
    "fit_brsa",
    "MnModel",
    "mnsrm_marginal_loglik",
    "dpsrm_marginal_loglik",
    "dpsrm_marginal_grads",
    "fit_mnsrm",
    "fit_dpsrm",
    "mn_heldout_score",
    "canonical_correlations",
    "aligned_recovery_score",
    "matched_center_error",
    "pearson",
    "read_matrix",
    "write_matrix",
    "read_events",
    "write_events",
    "parse_config",
    "parse_config_text",
    "FitReport",
    "read_report",
    "write_report",
    "render_report",
    "__version__",
]
