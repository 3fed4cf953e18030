"""Two-stage multivariate genomic prediction from time-series secondary phenotypes.

Stage one reduces per-timepoint secondary traits to latent factor scores:
genetic correlation matrices are estimated by moments, factor models are
fitted by maximum likelihood with Varimax rotation, and loadings are
aligned across timepoints by Procrustes rotation smoothed to signed
permutations. Stage two selects the most predictive timepoint factors by
BIC and predicts the focal trait with closed-form multivariate gBLUP
under CV1 and CV2, benchmarked by a cross-validation harness against a
ground-truth simulator.
"""

from .core import (
    SymMatrix,
    TrialDataset,
    TrialDesign,
    build_incidence,
    cov_to_cor,
    genotype_blues,
    nearest_psd,
    plot_residuals,
)
from .covest import CovariancePair, estimate_genetic_cov, estimate_residual_cov, heritability
from .factor import (
    FactorModel,
    ScreeProfile,
    fit_factor_model,
    select_dimension,
    varimax,
    varimax_criterion,
)
from .gblup import (
    BlupResult,
    MultiTraitCov,
    cv1_predict,
    cv2_predict,
    estimate_multitrait_cov,
    univariate_gblup,
)
from .kinship import KinshipPartition, genomic_relationship, partition_kinship
from .pipeline import CvPlan, CvReport, emit_reports, predictive_ability, run_cv
from .procrustes import (
    AlignedLoadingsSeries,
    SignedPermutation,
    align_series,
    orthogonal_procrustes,
    smooth_to_signed_permutation,
)
from .scores import ScoreSeries, score_series, thomson_scores
from .simulate import SimConfig, SimTruth, preset_cimmyt_like, simulate_trial
from .splines import SplineCharacteristics, TrajectoryFit, extract_characteristics, fit_trajectories

__version__ = "0.1.0"

__all__ = [
    "SymMatrix", "TrialDataset", "TrialDesign", "build_incidence", "cov_to_cor",
    "genotype_blues", "nearest_psd", "plot_residuals",
    "CovariancePair", "estimate_genetic_cov", "estimate_residual_cov", "heritability",
    "FactorModel", "ScreeProfile", "fit_factor_model", "select_dimension",
    "varimax", "varimax_criterion",
    "BlupResult", "MultiTraitCov", "cv1_predict", "cv2_predict",
    "estimate_multitrait_cov", "univariate_gblup",
    "KinshipPartition", "genomic_relationship", "partition_kinship",
    "CvPlan", "CvReport", "emit_reports", "predictive_ability", "run_cv",
    "AlignedLoadingsSeries", "SignedPermutation", "align_series",
    "orthogonal_procrustes", "smooth_to_signed_permutation",
    "ScoreSeries", "score_series", "thomson_scores",
    "SimConfig", "SimTruth", "preset_cimmyt_like", "simulate_trial",
    "SplineCharacteristics", "TrajectoryFit", "extract_characteristics", "fit_trajectories",
    "__version__",
]
