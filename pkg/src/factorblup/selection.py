"""BIC best-subset selection of timepoint-factor scores against the focal trait.

Candidate subsets are scored by ordinary least squares of the training
genotype means on [1, X_sub] with BIC = n ln(RSS / n) + (k + 1) ln n.
Up to 15 candidates the search is exhaustive; above that a forward
stepwise search adds the best column while BIC strictly decreases.
Ties break deterministically towards the lexicographically smallest
index set.
"""

from __future__ import annotations

import itertools
import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

log = logging.getLogger(__name__)

EXHAUSTIVE_LIMIT = 15
_RSS_FLOOR = 1e-12


@dataclass(frozen=True)
class SubsetResult:
    """Selected candidate columns with the BIC search trace."""

    selected: tuple[int, ...]
    bic: float
    trace: tuple[tuple[tuple[int, ...], float], ...]
    method: str


def _filter_collinear(x: np.ndarray) -> list[int]:
    """Indices of a maximal left-to-right linearly independent column set."""
    kept: list[int] = []
    for j in range(x.shape[1]):
        cols = x[:, kept + [j]]
        if np.linalg.matrix_rank(cols) == len(kept) + 1:
            kept.append(j)
    return kept


def bic_of_subset(y: np.ndarray, x_sub: np.ndarray) -> float:
    """BIC of the OLS fit of y on an intercept plus the given columns.

    Collinear columns are dropped (keeping the lowest index) with a
    warning; a perfect fit is guarded by an RSS floor.
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    x_sub = np.asarray(x_sub, dtype=float)
    if x_sub.size == 0:
        x_sub = np.empty((n, 0))
    if x_sub.ndim != 2 or x_sub.shape[0] != n:
        raise ShapeError(f"candidate block shape {x_sub.shape} does not match {n} responses")
    if x_sub.shape[1] >= n:
        raise ShapeError(f"subset of {x_sub.shape[1]} columns with only {n} observations")
    design = np.column_stack([np.ones(n), x_sub])
    if x_sub.shape[1] and np.linalg.matrix_rank(design) < design.shape[1]:
        kept = _filter_collinear(design)
        warnings.warn(
            f"rank-deficient design; dropped columns {sorted(set(range(design.shape[1])) - set(kept))}",
            stacklevel=2,
        )
        design = design[:, kept]
    coef, _, _, _ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    rss = max(float(resid @ resid), _RSS_FLOOR)
    k = design.shape[1] - 1
    return n * np.log(rss / n) + (k + 1) * np.log(n)


class _GramEvaluator:
    """Subset BIC via precomputed cross-products (one pass over the data).

    Coefficients come from the subset Gram system, but the RSS is always
    evaluated directly against the data: that stays a genuine (upper
    bound on the) residual sum of squares even when the Gram solve is
    ill-conditioned, so collinear subsets can never win through
    cancellation artifacts.
    """

    def __init__(self, y: np.ndarray, candidates: np.ndarray):
        self.n = y.size
        self.y = y
        self.design = np.column_stack([np.ones(self.n), candidates])
        self.gram = self.design.T @ self.design
        self.xty = self.design.T @ y
        self.logn = np.log(self.n)

    def bic(self, subset: tuple[int, ...]) -> float:
        idx = [0] + [j + 1 for j in subset]
        g = self.gram[np.ix_(idx, idx)]
        c = self.xty[idx]
        try:
            coef = np.linalg.solve(g, c)
        except np.linalg.LinAlgError:
            coef, _, _, _ = np.linalg.lstsq(g, c, rcond=None)
        resid = self.y - self.design[:, idx] @ coef
        rss = max(float(resid @ resid), _RSS_FLOOR)
        return self.n * np.log(rss / self.n) + (len(subset) + 1) * self.logn


def best_subset(
    y: np.ndarray,
    candidates: np.ndarray,
    exhaustive_limit: int = EXHAUSTIVE_LIMIT,
) -> SubsetResult:
    """Best BIC subset of candidate columns for predicting y.

    Exhaustive over all 2^q subsets when q <= exhaustive_limit, forward
    stepwise otherwise. The intercept-only model is always a candidate,
    so the winner's BIC never exceeds it.
    """
    y = np.asarray(y, dtype=float)
    candidates = np.asarray(candidates, dtype=float)
    if candidates.ndim != 2 or candidates.shape[0] != y.size:
        raise ShapeError(
            f"candidates shape {candidates.shape} does not match {y.size} responses"
        )
    q = candidates.shape[1]
    ev = _GramEvaluator(y, candidates)
    trace: list[tuple[tuple[int, ...], float]] = []
    if q <= exhaustive_limit:
        best: tuple[float, tuple[int, ...]] | None = None
        for k in range(q + 1):
            for subset in itertools.combinations(range(q), k):
                b = ev.bic(subset)
                trace.append((subset, b))
                if best is None or (b, subset) < best:
                    best = (b, subset)
        assert best is not None
        return SubsetResult(best[1], best[0], tuple(trace), "exhaustive")
    # Forward stepwise: add the best column while BIC strictly decreases.
    current: tuple[int, ...] = ()
    current_bic = ev.bic(current)
    trace.append((current, current_bic))
    remaining = list(range(q))
    while remaining:
        scored = [(ev.bic(tuple(sorted(current + (j,)))), j) for j in remaining]
        cand_bic, j_best = min(scored)
        if cand_bic >= current_bic:
            break
        current = tuple(sorted(current + (j_best,)))
        current_bic = cand_bic
        trace.append((current, current_bic))
        remaining.remove(j_best)
    return SubsetResult(current, current_bic, tuple(trace), "forward")
