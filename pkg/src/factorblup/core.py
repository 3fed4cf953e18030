"""Shared data model and matrix hygiene.

Holds the trial design bookkeeping (genotypes, replicates, plots,
timepoints with growth-stage labels), the plot-level dataset container,
and the small matrix utilities everything downstream leans on: incidence
matrices, genotype means (BLUEs under a resolved design), plot residuals,
covariance-to-correlation scaling and eigenvalue-clipping PSD repair.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DataValidationError,
    DegenerateVarianceError,
    DesignError,
    MissingGenotypeError,
    NumericalError,
    ShapeError,
)

STAGES = ("vegetative", "heading", "grain-filling")

# Asymmetry beyond this is treated as corrupt input rather than round-trip noise.
_ASYM_GATE = 1e-6


@dataclass(frozen=True)
class SymMatrix:
    """Dense symmetric matrix with a semantic kind tag.

    The constructor symmetrizes by averaging with the transpose (guards
    against file round-trip asymmetry) and validates the kind invariants:
    unit diagonal for correlations, nonnegative diagonal for covariance
    and kinship matrices.
    """

    values: np.ndarray
    kind: str = "covariance"
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ShapeError(f"symmetric matrix must be square, got {v.shape}")
        if self.kind not in ("covariance", "correlation", "kinship"):
            raise DataValidationError(f"unknown matrix kind {self.kind!r}")
        asym = float(np.max(np.abs(v - v.T))) if v.size else 0.0
        if asym > _ASYM_GATE:
            raise DataValidationError(f"matrix asymmetry {asym:.3e} exceeds gate {_ASYM_GATE}")
        v = (v + v.T) / 2.0
        if self.kind == "correlation":
            dev = float(np.max(np.abs(np.diag(v) - 1.0))) if v.size else 0.0
            if dev > 1e-10:
                raise DataValidationError(f"correlation diagonal deviates from 1 by {dev:.3e}")
        elif v.size and np.min(np.diag(v)) < 0.0:
            raise DataValidationError(f"{self.kind} matrix has a negative diagonal entry")
        if self.labels is not None and len(self.labels) != v.shape[0]:
            raise ShapeError("label count does not match matrix dimension")
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class TrialDesign:
    """Resolved experimental design: who was planted where and when measured.

    plot_genotype[i] / plot_replicate[i] give plot i's genotype index
    (into genotype_ids) and replicate number. timepoints are strictly
    increasing day offsets (or similar numeric dates), each carrying one
    growth-stage label.
    """

    genotype_ids: tuple[str, ...]
    replicate_count: int
    plot_genotype: np.ndarray
    plot_replicate: np.ndarray
    timepoints: tuple[float, ...]
    stage_labels: tuple[str, ...]

    def __post_init__(self):
        g = len(self.genotype_ids)
        if len(set(self.genotype_ids)) != g:
            raise DesignError("genotype ids are not unique")
        pg = np.asarray(self.plot_genotype, dtype=int)
        pr = np.asarray(self.plot_replicate, dtype=int)
        if pg.shape != pr.shape or pg.ndim != 1:
            raise DesignError("plot genotype/replicate arrays must be 1-d and equal length")
        if pg.size and (pg.min() < 0 or pg.max() >= g):
            raise DesignError("plot mapped to unknown genotype")
        pairs = set(zip(pg.tolist(), pr.tolist()))
        if len(pairs) != pg.size:
            raise DesignError("a (genotype, replicate) pair occurs more than once")
        if self.replicate_count < 1:
            raise DesignError("replicate count must be >= 1")
        tp = np.asarray(self.timepoints, dtype=float)
        if tp.size and np.any(np.diff(tp) <= 0):
            raise DesignError("timepoints must be strictly increasing")
        if len(self.stage_labels) != tp.size:
            raise DesignError("need exactly one stage label per timepoint")
        for s in self.stage_labels:
            if s not in STAGES:
                raise DesignError(f"unknown stage label {s!r}")
        object.__setattr__(self, "plot_genotype", pg)
        object.__setattr__(self, "plot_replicate", pr)

    @property
    def n_genotypes(self) -> int:
        return len(self.genotype_ids)

    @property
    def n_plots(self) -> int:
        return int(self.plot_genotype.size)

    @property
    def n_timepoints(self) -> int:
        return len(self.timepoints)

    def replicates_per_genotype(self) -> np.ndarray:
        """Count of plots per genotype (r_c); all equal r when balanced."""
        return np.bincount(self.plot_genotype, minlength=self.n_genotypes)

    def stage_timepoint_indices(self, stages) -> tuple[int, ...]:
        wanted = set(stages)
        return tuple(i for i, s in enumerate(self.stage_labels) if s in wanted)


@dataclass(frozen=True)
class TrialDataset:
    """Plot-level trial data: secondary traits per timepoint, focal trait, markers.

    secondary has shape (n_plots, n_traits, n_timepoints); focal is the
    plot-level focal trait vector; markers holds {0,1,2} codes per
    genotype, ordered like design.genotype_ids.
    """

    design: TrialDesign
    secondary: np.ndarray
    focal: np.ndarray
    trait_labels: tuple[str, ...]
    markers: np.ndarray | None = None

    def __post_init__(self):
        y = np.asarray(self.secondary, dtype=float)
        f = np.asarray(self.focal, dtype=float)
        n, tau = self.design.n_plots, self.design.n_timepoints
        if y.shape != (n, len(self.trait_labels), tau):
            raise ShapeError(
                f"secondary array shape {y.shape} does not match "
                f"(plots={n}, traits={len(self.trait_labels)}, timepoints={tau})"
            )
        if y.shape[1] < 2 or tau < 2:
            raise DataValidationError("need at least 2 secondary traits and 2 timepoints")
        if f.shape != (n,):
            raise ShapeError(f"focal vector has shape {f.shape}, expected ({n},)")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(f))):
            raise DataValidationError("dataset contains missing or non-finite cells")
        if self.markers is not None:
            m = np.asarray(self.markers, dtype=float)
            if m.shape[0] != self.design.n_genotypes:
                raise ShapeError("marker row count does not match genotype count")
            object.__setattr__(self, "markers", m)
        object.__setattr__(self, "secondary", y)
        object.__setattr__(self, "focal", f)

    @property
    def n_traits(self) -> int:
        return len(self.trait_labels)

    def timepoint_slice(self, l: int) -> np.ndarray:
        """Plot-by-trait matrix for timepoint index l."""
        return self.secondary[:, :, l]


def build_incidence(design: TrialDesign) -> np.ndarray:
    """Zero/one plot-by-genotype incidence matrix Z.

    Row i carries a single 1 in the column of plot i's genotype, so
    column sums equal each genotype's replicate count.
    """
    n, g = design.n_plots, design.n_genotypes
    z = np.zeros((n, g))
    z[np.arange(n), design.plot_genotype] = 1.0
    return z


def genotype_blues(y_l: np.ndarray, design: TrialDesign) -> np.ndarray:
    """Per-genotype means across replicates (BLUEs under a resolved design).

    Unbalanced designs use the mean over the available replicates of
    each genotype.
    """
    y_l = np.asarray(y_l, dtype=float)
    if y_l.shape[0] != design.n_plots:
        raise ShapeError(f"data has {y_l.shape[0]} rows, design has {design.n_plots} plots")
    counts = design.replicates_per_genotype()
    if np.any(counts == 0):
        empty = [design.genotype_ids[i] for i in np.nonzero(counts == 0)[0]]
        raise MissingGenotypeError(f"genotypes without plots: {empty[:5]}")
    sums = np.zeros((design.n_genotypes, y_l.shape[1]))
    np.add.at(sums, design.plot_genotype, y_l)
    return sums / counts[:, None]


def plot_residuals(y_l: np.ndarray, blues: np.ndarray, design: TrialDesign) -> np.ndarray:
    """Plot value minus its genotype's BLUE row; rows sum to zero per genotype."""
    y_l = np.asarray(y_l, dtype=float)
    blues = np.asarray(blues, dtype=float)
    if blues.shape != (design.n_genotypes, y_l.shape[1]):
        raise ShapeError(
            f"blues shape {blues.shape} does not match "
            f"({design.n_genotypes}, {y_l.shape[1]})"
        )
    if y_l.shape[0] != design.n_plots:
        raise ShapeError("data row count does not match design plot count")
    return y_l - blues[design.plot_genotype]


def cov_to_cor(s: SymMatrix) -> SymMatrix:
    """Scale a covariance matrix to a correlation matrix.

    R = (S o I)^(-1/2) S (S o I)^(-1/2). Requires a strictly positive
    diagonal; the offending trait is named otherwise.
    """
    v = s.values
    d = np.diag(v)
    bad = np.nonzero(d <= 0.0)[0]
    if bad.size:
        j = int(bad[0])
        name = s.labels[j] if s.labels is not None else f"index {j}"
        raise DegenerateVarianceError(
            f"trait {name} has non-positive variance {d[j]:.3e}; cannot scale to correlation"
        )
    inv_sd = 1.0 / np.sqrt(d)
    r = v * inv_sd[:, None] * inv_sd[None, :]
    overshoot = float(np.max(np.abs(r))) - 1.0
    if overshoot > 1e-10:
        raise NumericalError(f"correlation entry exceeds 1 by {overshoot:.3e}")
    np.clip(r, -1.0, 1.0, out=r)
    np.fill_diagonal(r, 1.0)
    return SymMatrix(r, kind="correlation", labels=s.labels)


def nearest_psd(s: SymMatrix | np.ndarray, floor: float | None = None, kind: str = "covariance") -> SymMatrix:
    """Repair an indefinite symmetric matrix by eigenvalue clipping.

    Eigenvalues below the floor (default 1e-8 times the largest, never
    negative) are raised to it and the matrix rebuilt in the same
    eigenbasis, which is the Frobenius-nearest matrix among floor-clipped
    spectra for those eigenvectors. Accepts a raw array because the
    matrices needing repair (e.g. Sigma_P - Sigma_E / r) may violate the
    covariance-kind diagonal invariant before repair.
    """
    if isinstance(s, SymMatrix):
        v, kind, labels = s.values, s.kind, s.labels
    else:
        v = np.asarray(s, dtype=float)
        v = (v + v.T) / 2.0
        labels = None
    if not np.all(np.isfinite(v)):
        raise NumericalError("matrix contains non-finite entries")
    w, q = np.linalg.eigh(v)
    if floor is None:
        floor = 1e-8 * max(float(w[-1]), 0.0)
    w_clipped = np.maximum(w, floor)
    out = (q * w_clipped) @ q.T
    out = (out + out.T) / 2.0
    return SymMatrix(out, kind=kind, labels=labels)
