"""Smoothed factor-score trajectories and their stage-interval characteristics.

Trajectories are penalized cubic B-splines (second-difference penalty on
the coefficients) fitted in two levels: a population curve through the
per-timepoint score means, and per-genotype deviation curves fitted to
the deviations from those means with one shared penalty, chosen by
generalized cross-validation on request. Deviations from the empirical
mean sum to zero across genotypes at every evaluation point, so the
population curve is exactly the mean of the genotype curves.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import BSpline
from scipy.optimize import minimize_scalar

from .errors import ExtrapolationError, TooFewTimepointsError
from .scores import ScoreSeries

MAX_BASIS = 12
_GCV_GRID = np.logspace(-6.0, 6.0, 25)


@dataclass(frozen=True)
class TrajectoryFit:
    """Fitted population and genotype-deviation curves per factor."""

    timepoints: np.ndarray
    knots: np.ndarray
    degree: int
    pop_coefs: np.ndarray          # (n_factors, n_basis)
    dev_coefs: np.ndarray          # (n_factors, n_genotypes, n_basis)
    resid_var: np.ndarray          # (n_factors, n_timepoints)
    penalty_pop: float
    penalty_dev: float

    @property
    def n_factors(self) -> int:
        return self.pop_coefs.shape[0]

    @property
    def n_genotypes(self) -> int:
        return self.dev_coefs.shape[1]

    def _check_domain(self, t: np.ndarray):
        lo, hi = self.timepoints[0], self.timepoints[-1]
        if np.any(t < lo) or np.any(t > hi):
            raise ExtrapolationError(
                f"evaluation outside the fitted range [{lo}, {hi}]"
            )

    def basis(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        self._check_domain(t)
        return BSpline.design_matrix(t, self.knots, self.degree).toarray()

    def population(self, t, factor: int) -> np.ndarray:
        """Population curve values at times t."""
        return self.basis(t) @ self.pop_coefs[factor]

    def genotype(self, t, genotype: int, factor: int) -> np.ndarray:
        """Genotype curve (population plus deviation) at times t."""
        b = self.basis(t)
        return b @ (self.pop_coefs[factor] + self.dev_coefs[factor, genotype])

    def deviations(self, t, factor: int) -> np.ndarray:
        """All genotype deviations at times t, (len(t), n_genotypes)."""
        return self.basis(t) @ self.dev_coefs[factor].T


@dataclass(frozen=True)
class SplineCharacteristics:
    """Per genotype-by-factor summaries of the fitted curves over one interval."""

    interval: tuple[float, float]
    auc: np.ndarray
    minimum: np.ndarray
    maximum: np.ndarray
    time_of_max: np.ndarray
    mean_slope: np.ndarray


def _basis_and_penalty(t: np.ndarray, degree: int, n_basis: int):
    # Uniform knots extended past the boundary (classic P-spline layout):
    # Greville sites are then equally spaced, so the second-difference
    # penalty exactly annihilates linear coefficient sequences.
    n_seg = n_basis - degree
    h = (t[-1] - t[0]) / n_seg
    knots = t[0] + h * np.arange(-degree, n_seg + degree + 1)
    b = BSpline.design_matrix(t, knots, degree).toarray()
    d2 = np.diff(np.eye(n_basis), n=2, axis=0)
    return knots, b, d2.T @ d2


def _solve_penalized(b, pen, y, lam):
    a = b.T @ b + lam * pen
    return np.linalg.solve(a, b.T @ y)


def _gcv_lambda(b, pen, y_cols) -> float:
    """Shared-penalty GCV over a column stack of response vectors."""
    n = b.shape[0]
    n_series = y_cols.shape[1] if y_cols.ndim == 2 else 1
    best = (np.inf, float(_GCV_GRID[0]))
    for lam in _GCV_GRID:
        a = b.T @ b + lam * pen
        try:
            h = b @ np.linalg.solve(a, b.T)
        except np.linalg.LinAlgError:
            continue
        df = float(np.trace(h))
        fitted = h @ y_cols
        rss = float(np.sum((y_cols - fitted) ** 2))
        denom = n_series * n - n_series * df
        if denom <= 0:
            continue
        gcv = n_series * n * rss / denom**2
        if gcv < best[0]:
            best = (gcv, float(lam))
    return best[1]


def fit_trajectories(scores: ScoreSeries, penalty="gcv") -> TrajectoryFit:
    """Fit population and genotype-deviation trajectories to a score series.

    penalty is a nonnegative smoothing parameter applied to both levels,
    or "gcv" to select one per level by generalized cross-validation.
    With only 2 or 3 timepoints the fit degrades to piecewise-linear
    interpolation with a warning.
    """
    t = np.asarray(scores.timepoints, dtype=float)
    tau = t.size
    if tau < 2:
        raise TooFewTimepointsError(f"need at least 2 timepoints, got {tau}")
    # scores per factor: (tau, g) response matrices
    geno = np.stack(scores.genotype_scores)           # (tau, g, m)
    m = geno.shape[2]
    if tau < 4:
        warnings.warn(
            f"only {tau} timepoints; degrading to piecewise-linear trajectories",
            stacklevel=2,
        )
        degree, n_basis = 1, tau
    else:
        degree, n_basis = 3, min(tau, MAX_BASIS)
    knots, b, pen = _basis_and_penalty(t, degree, n_basis)
    g = geno.shape[1]
    pop_coefs = np.empty((m, n_basis))
    dev_coefs = np.empty((m, g, n_basis))
    resid_var = np.empty((m, tau))
    lam_pop = lam_dev = 0.0
    for k in range(m):
        y = geno[:, :, k]                              # (tau, g)
        mean = y.mean(axis=1)
        dev = y - mean[:, None]
        if penalty == "gcv":
            lam_pop = _gcv_lambda(b, pen, mean[:, None])
            lam_dev = _gcv_lambda(b, pen, dev)
        else:
            lam_pop = lam_dev = float(penalty)
            if lam_pop < 0:
                raise ValueError("penalty must be nonnegative")
        pop_coefs[k] = _solve_penalized(b, pen, mean, lam_pop)
        dev_coefs[k] = _solve_penalized(b, pen, dev, lam_dev).T
        fitted = (b @ pop_coefs[k])[:, None] + b @ dev_coefs[k].T
        resid_var[k] = np.var(y - fitted, axis=1)
    return TrajectoryFit(
        timepoints=t,
        knots=knots,
        degree=degree,
        pop_coefs=pop_coefs,
        dev_coefs=dev_coefs,
        resid_var=resid_var,
        penalty_pop=float(lam_pop),
        penalty_dev=float(lam_dev),
    )


def extract_characteristics(fit: TrajectoryFit, interval) -> SplineCharacteristics:
    """AUC, extrema and mean slope of every genotype curve over an interval.

    AUC by adaptive quadrature; extrema from a 256-point grid refined
    locally. The interval must lie inside the fitted timepoint range.
    """
    t0, t1 = (float(v) for v in interval)
    lo, hi = fit.timepoints[0], fit.timepoints[-1]
    if t0 < lo or t1 > hi or t0 >= t1:
        raise ExtrapolationError(
            f"interval [{t0}, {t1}] not inside the fitted range [{lo}, {hi}]"
        )
    g, m = fit.n_genotypes, fit.n_factors
    auc = np.empty((g, m))
    mn = np.empty((g, m))
    mx = np.empty((g, m))
    tmx = np.empty((g, m))
    slope = np.empty((g, m))
    grid = np.linspace(t0, t1, 256)
    b_grid = fit.basis(grid)
    b_ends = fit.basis(np.array([t0, t1]))
    inner_knots = [float(k) for k in fit.knots if t0 < k < t1]
    for k in range(m):
        coefs = fit.pop_coefs[k][None, :] + fit.dev_coefs[k]       # (g, n_basis)
        values = b_grid @ coefs.T                                  # (256, g)
        ends = b_ends @ coefs.T                                    # (2, g)
        for c in range(g):
            spl = BSpline(fit.knots, fit.pop_coefs[k] + fit.dev_coefs[k, c], fit.degree)
            auc[c, k] = quad(spl, t0, t1, points=inner_knots or None, limit=200)[0]
            col = values[:, c]
            mn[c, k] = float(col.min())
            i = int(np.argmax(col))
            left = grid[max(i - 1, 0)]
            right = grid[min(i + 1, grid.size - 1)]
            if right > left:
                res = minimize_scalar(lambda x: -spl(x), bounds=(left, right), method="bounded")
                if -res.fun >= col[i]:
                    mx[c, k] = float(-res.fun)
                    tmx[c, k] = float(res.x)
                else:
                    mx[c, k] = float(col[i])
                    tmx[c, k] = float(grid[i])
            else:
                mx[c, k] = float(col[i])
                tmx[c, k] = float(grid[i])
            slope[c, k] = (ends[1, c] - ends[0, c]) / (t1 - t0)
    return SplineCharacteristics(
        interval=(t0, t1),
        auc=auc,
        minimum=mn,
        maximum=mx,
        time_of_max=tmx,
        mean_slope=slope,
    )
