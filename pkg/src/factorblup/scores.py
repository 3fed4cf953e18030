"""Thomson regression factor scores at genotype and plot level.

Scores project centered observations onto the factor space through the
model-implied covariance of genotype means: with A = Psi + w Sigma_E,

    scores = data A^-1 Lambda [I + Lambda' A^-1 Lambda]^-1,

where w is the residual weight of the data level (1/r for a mean over r
replicates). The projection is a fixed s-by-m matrix, so plot-level
scores averaged within genotype reproduce the genotype-level scores
exactly up to the averaging itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from .core import SymMatrix, TrialDataset, genotype_blues
from .errors import MatrixConditionError, ShapeError
from .procrustes import AlignedLoadingsSeries

__all__ = ["ScoreSeries", "thomson_projection", "thomson_scores", "scoring_projection", "score_series"]


@dataclass(frozen=True)
class ScoreSeries:
    """Factor scores per timepoint at genotype and plot level."""

    genotype_scores: tuple[np.ndarray, ...]
    plot_scores: tuple[np.ndarray, ...]
    aligned: bool
    timepoints: tuple[float, ...]

    @property
    def n_timepoints(self) -> int:
        return len(self.genotype_scores)

    @property
    def n_factors(self) -> int:
        return self.genotype_scores[0].shape[1]

    def stacked_genotype_scores(self) -> np.ndarray:
        """Genotype-by-(timepoint, factor) candidate matrix, timepoint-major."""
        return np.hstack(self.genotype_scores)


def thomson_projection(
    loadings: np.ndarray,
    psi: np.ndarray,
    sigma_E: SymMatrix | np.ndarray,
    weight: float,
) -> np.ndarray:
    """The s-by-m scoring matrix A^-1 L [I + L' A^-1 L]^-1 with A = Psi + w Sigma_E."""
    lam = np.asarray(loadings, dtype=float)
    psi = np.asarray(psi, dtype=float)
    se = sigma_E.values if isinstance(sigma_E, SymMatrix) else np.asarray(sigma_E, dtype=float)
    s, m = lam.shape
    if psi.shape != (s,) or se.shape != (s, s):
        raise ShapeError("loadings, uniquenesses and residual covariance disagree in size")
    a = np.diag(psi) + weight * se
    try:
        c, low = cho_factor(a)
    except LinAlgError as exc:
        raise MatrixConditionError(
            "Psi + w Sigma_E is singular; raise the uniqueness floor or the weight"
        ) from exc
    b = cho_solve((c, low), lam)
    inner = np.eye(m) + lam.T @ b
    try:
        ci, clow = cho_factor(inner)
    except LinAlgError as exc:
        raise MatrixConditionError("scoring system is singular") from exc
    return cho_solve((ci, clow), b.T).T


def thomson_scores(
    data: np.ndarray,
    loadings: np.ndarray,
    psi: np.ndarray,
    sigma_E: SymMatrix | np.ndarray,
    weight: float,
) -> np.ndarray:
    """Score centered rows onto the factors; rows-by-m output."""
    data = np.asarray(data, dtype=float)
    proj = thomson_projection(loadings, psi, sigma_E, weight)
    if data.shape[1] != proj.shape[0]:
        raise ShapeError(f"data has {data.shape[1]} traits, projection expects {proj.shape[0]}")
    return data @ proj


def scoring_projection(model, cov, r: float) -> np.ndarray:
    """Raw-data scoring matrix for a correlation-scale factor model.

    The factor model lives on the genetic correlation scale, so raw
    (centered) data is standardized by the genetic standard deviations
    and the residual covariance is moved to the same scale before the
    Thomson projection; both steps fold into one s-by-m matrix.
    """
    sd = np.sqrt(np.diag(cov.sigma_G.values))
    if np.any(sd <= 0.0):
        raise MatrixConditionError("a trait has zero genetic variance; cannot standardize scores")
    se_std = cov.sigma_E.values / np.outer(sd, sd)
    proj = thomson_projection(model.loadings, model.uniquenesses, se_std, 1.0 / r)
    return proj / sd[:, None]


def score_series(
    dataset: TrialDataset,
    models,
    covariances,
    alignment: AlignedLoadingsSeries | None = None,
    center: list[np.ndarray] | None = None,
) -> ScoreSeries:
    """Genotype- and plot-level Thomson scores for every timepoint.

    Genotype scores come from column-centered, genetically standardized
    BLUEs with weight 1/r; plot scores apply the same projection matrix
    to the centered plot data, so their within-genotype averages
    reproduce the genotype scores. When an alignment is given, the
    timepoint's signed permutation is applied to the score columns
    (exactly equivalent to scoring with the aligned loadings). `center`
    optionally supplies per-timepoint column means (e.g. training-set
    means inside cross-validation) to avoid leakage.
    """
    design = dataset.design
    tau = design.n_timepoints
    if len(models) != tau or len(covariances) != tau:
        raise ShapeError("need one factor model and covariance pair per timepoint")
    if alignment is not None and alignment.n_timepoints != tau:
        raise ShapeError("alignment series length does not match timepoints")
    r_counts = design.replicates_per_genotype()
    r = float(np.mean(r_counts))
    geno, plot = [], []
    for l in range(tau):
        model, cov = models[l], covariances[l]
        y_l = dataset.timepoint_slice(l)
        blues = genotype_blues(y_l, design)
        mu = center[l] if center is not None else blues.mean(axis=0)
        try:
            proj = scoring_projection(model, cov, r)
        except MatrixConditionError as exc:
            raise MatrixConditionError(f"timepoint {design.timepoints[l]}: {exc}") from exc
        gs = (blues - mu) @ proj
        ps = (y_l - mu) @ proj
        if alignment is not None:
            p = alignment.permutations[l].matrix
            gs = gs @ p
            ps = ps @ p
        geno.append(gs)
        plot.append(ps)
    return ScoreSeries(
        genotype_scores=tuple(geno),
        plot_scores=tuple(plot),
        aligned=alignment is not None,
        timepoints=design.timepoints,
    )
