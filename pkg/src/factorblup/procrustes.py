"""Alignment of per-timepoint loadings to a common target.

Each timepoint's loadings are rotated towards the target by the
orthogonal least-squares (Procrustes) solution, and the rotation is then
smoothed to the nearest signed permutation so factors only get relabeled
and repolarized, never mixed. Applying the signed permutation keeps
communalities and the implied correlation structure exactly intact.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import AlignmentError, AmbiguousAssignmentError, ShapeError
from .factor import FactorModel

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SignedPermutation:
    """Permutation matrix with +-1 entries; exactly orthogonal."""

    matrix: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.matrix, dtype=float)
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise ShapeError("signed permutation must be square")
        ok = np.all(np.isin(p, (-1.0, 0.0, 1.0)))
        ok = ok and np.all(np.sum(p != 0.0, axis=0) == 1) and np.all(np.sum(p != 0.0, axis=1) == 1)
        if not ok:
            raise ShapeError("not a signed permutation matrix")
        object.__setattr__(self, "matrix", p)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def is_identity(self) -> bool:
        return bool(np.array_equal(self.matrix, np.eye(self.dim)))


@dataclass(frozen=True)
class AlignedLoadingsSeries:
    """Per-timepoint raw loadings, rotations, smoothed permutations and aligned loadings."""

    raw: tuple[np.ndarray, ...]
    rotations: tuple[np.ndarray, ...]
    permutations: tuple[SignedPermutation, ...]
    aligned: tuple[np.ndarray, ...]
    target_index: int

    @property
    def n_timepoints(self) -> int:
        return len(self.raw)


def orthogonal_procrustes(source: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Orthogonal matrix T minimizing ||source T - target||_F.

    T = U V' from the SVD of source' target; the global optimum of the
    least-squares rotation problem. A rank-deficient cross-product still
    yields a valid orthogonal T (the SVD breaks the tie) but is logged.
    """
    a = np.asarray(source, dtype=float)
    b = np.asarray(target, dtype=float)
    if a.shape != b.shape:
        raise ShapeError(f"source shape {a.shape} != target shape {b.shape}")
    if a.ndim != 2 or a.shape[1] < 1:
        raise ShapeError("need 2-d loadings with at least one column")
    u, sv, vt = np.linalg.svd(a.T @ b)
    if sv.size and sv[-1] <= 1e-12 * max(sv[0], 1.0):
        log.warning("rank-deficient Procrustes cross-product (min singular value %.3e)", sv[-1])
    return u @ vt


def smooth_to_signed_permutation(t: np.ndarray) -> SignedPermutation:
    """Nearest signed permutation to an (approximately) orthogonal matrix.

    Solves the linear assignment problem maximizing the summed |t| weight
    over permutations and takes the sign of each selected entry, which is
    the Frobenius-closest signed permutation to t.
    """
    t = np.asarray(t, dtype=float)
    m = t.shape[0]
    if t.shape != (m, m):
        raise ShapeError("rotation must be square")
    ortho_dev = float(np.linalg.norm(t.T @ t - np.eye(m)))
    if ortho_dev >= 0.5:
        log.warning("smoothing a matrix far from orthogonal (||T'T - I|| = %.3f)", ortho_dev)
    a = np.abs(t)
    if np.any(a.sum(axis=0) == 0.0) or np.any(a.sum(axis=1) == 0.0):
        raise AmbiguousAssignmentError("zero row or column in |T|; assignment is ambiguous")
    rows, cols = linear_sum_assignment(-a)
    p = np.zeros_like(t)
    p[rows, cols] = np.where(t[rows, cols] >= 0.0, 1.0, -1.0)
    return SignedPermutation(p)


def align_series(models, target_index: int) -> AlignedLoadingsSeries:
    """Align each timepoint's loadings to the target timepoint's.

    All models must share the factor dimension (re-fit at a common
    dimension first if they do not). The target timepoint itself stays
    untouched: its rotation smooths to the identity.
    """
    loadings = [m.loadings if isinstance(m, FactorModel) else np.asarray(m, float) for m in models]
    if not loadings:
        raise AlignmentError("empty loadings series")
    dims = {lam.shape[1] for lam in loadings}
    if len(dims) != 1:
        raise AlignmentError(
            f"factor dimensions differ across timepoints ({sorted(dims)}); "
            "re-fit all timepoints at a common dimension before aligning"
        )
    if not (0 <= target_index < len(loadings)):
        raise AlignmentError(f"target index {target_index} outside series of {len(loadings)}")
    target = loadings[target_index]
    rotations, perms, aligned = [], [], []
    for lam in loadings:
        t = orthogonal_procrustes(lam, target)
        p = smooth_to_signed_permutation(t)
        rotations.append(t)
        perms.append(p)
        aligned.append(lam @ p.matrix)
    return AlignedLoadingsSeries(
        raw=tuple(loadings),
        rotations=tuple(rotations),
        permutations=tuple(perms),
        aligned=tuple(aligned),
        target_index=target_index,
    )
