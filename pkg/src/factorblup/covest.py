"""Moment-based per-timepoint genetic and residual covariance estimation.

The phenotypic covariance of genotype means decomposes as
Sigma_P = Sigma_G + Sigma_E / r, so the genetic covariance is estimated
as the BLUE covariance minus the scaled plot-residual covariance, with a
PSD repair for the finite-sample indefiniteness of that difference.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core import SymMatrix, TrialDesign, nearest_psd
from .errors import (
    DataValidationError,
    InsufficientReplicationError,
    ShapeError,
    UndefinedHeritabilityError,
)


@dataclass(frozen=True)
class CovariancePair:
    """Genetic, residual and phenotypic (BLUE-level) covariances of one timepoint."""

    sigma_G: SymMatrix
    sigma_E: SymMatrix
    sigma_P: SymMatrix
    r_used: float

    @property
    def dim(self) -> int:
        return self.sigma_G.dim


def estimate_residual_cov(residuals: np.ndarray, design: TrialDesign) -> SymMatrix:
    """Plot-residual covariance R'R / (n - g), correcting for the g fitted means."""
    r = np.asarray(residuals, dtype=float)
    n, g = design.n_plots, design.n_genotypes
    if r.shape[0] != n:
        raise ShapeError(f"residuals have {r.shape[0]} rows, design has {n} plots")
    if n <= g:
        raise InsufficientReplicationError(
            f"no residual degrees of freedom: n={n} plots, g={g} genotypes"
        )
    return SymMatrix((r.T @ r) / (n - g), kind="covariance")


def estimate_genetic_cov(
    blues: np.ndarray,
    sigma_E: SymMatrix,
    r: float,
    labels: tuple[str, ...] | None = None,
) -> CovariancePair:
    """Two-moment genetic covariance: Sigma_P minus Sigma_E / r, PSD-repaired."""
    b = np.asarray(blues, dtype=float)
    g, s = b.shape
    if sigma_E.dim != s:
        raise ShapeError(f"sigma_E dimension {sigma_E.dim} does not match {s} traits")
    if g < 3:
        raise DataValidationError(f"need at least 3 genotypes to estimate covariances, got {g}")
    if g < s + 1:
        warnings.warn(
            f"genetic covariance of {s} traits from only {g} genotypes is ill-conditioned",
            stacklevel=2,
        )
    sigma_P = np.cov(b, rowvar=False, ddof=1).reshape(s, s)
    raw_G = sigma_P - sigma_E.values / r
    sigma_G = nearest_psd(raw_G)
    if labels is not None:
        sigma_G = SymMatrix(sigma_G.values, kind="covariance", labels=labels)
    return CovariancePair(
        sigma_G=sigma_G,
        sigma_E=SymMatrix(sigma_E.values, kind="covariance", labels=labels),
        sigma_P=SymMatrix(sigma_P, kind="covariance", labels=labels),
        r_used=float(r),
    )


def heritability(sigma_G_trait: float, sigma_E_trait: float, r: float) -> float:
    """Broad-sense heritability at the genotype-mean level, clipped to [0, 1]."""
    if sigma_G_trait < 0 or sigma_E_trait < 0:
        raise DataValidationError("variance components must be nonnegative")
    denom = sigma_G_trait + sigma_E_trait / r
    if denom == 0.0:
        raise UndefinedHeritabilityError("both variance components are zero")
    return float(min(max(sigma_G_trait / denom, 0.0), 1.0))
