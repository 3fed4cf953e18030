import numpy as np
import pytest

from factorblup.core import SymMatrix
from factorblup.errors import MatrixConditionError, ShapeError, TooFewTraitsError
from factorblup.factor import (
    _discrepancy_and_grad,
    fit_factor_model,
    select_dimension,
    sort_by_explained_variance,
    varimax,
    varimax_criterion,
)

from conftest import correlation_with_spectrum


def discrepancy(loadings, psi, r):
    """Direct evaluation of the ML discrepancy (independent of the profile path)."""
    implied = loadings @ loadings.T + np.diag(psi)
    sign, logdet_i = np.linalg.slogdet(implied)
    assert sign > 0
    _, logdet_r = np.linalg.slogdet(r)
    return logdet_i + np.trace(r @ np.linalg.inv(implied)) - logdet_r - r.shape[0]


def block_correlation(sizes, strengths):
    s = sum(sizes)
    lam = np.zeros((s, len(sizes)))
    start = 0
    for k, (n, v) in enumerate(zip(sizes, strengths)):
        lam[start:start + n, k] = v
        start += n
    return lam, lam @ lam.T + np.diag(1.0 - np.sum(lam**2, axis=1))


class TestSelectDimension:
    def test_spec_spectrum(self, rng):
        delta = np.array([3.0, 2.0, 0.9, 0.05, 0.03, 0.02])
        corr = correlation_with_spectrum(delta, rng)
        m_star, profile = select_dimension(SymMatrix(corr, kind="correlation"))
        # oracle: central second difference of the eigenvalue sequence
        af = delta[2:] - 2.0 * delta[1:-1] + delta[:-2]
        s_prime = int(np.argmax(af)) + 2
        expected = int(np.sum((delta >= 1.0) & (np.arange(1, 7) < s_prime)))
        assert m_star == expected == 2
        assert np.allclose(profile.eigenvalues, delta, atol=1e-8)
        assert profile.eigenvalues.sum() == pytest.approx(6.0, abs=1e-8)

    def test_identity_floor(self):
        m_star, _ = select_dimension(SymMatrix(np.eye(5), kind="correlation"))
        assert m_star == 1

    def test_two_factor_simulation(self):
        rng = np.random.default_rng(42)
        lam, corr = block_correlation((10, 10), (0.8, 0.7))
        chol = np.linalg.cholesky(corr)
        hits = 0
        for _ in range(20):
            x = rng.normal(size=(500, 20)) @ chol.T
            sample = np.corrcoef(x, rowvar=False)
            m_star, _ = select_dimension(SymMatrix(sample, kind="correlation"))
            hits += m_star == 2
        assert hits >= 18

    def test_reorder_invariance(self, rng):
        _, corr = block_correlation((4, 4), (0.8, 0.6))
        perm = rng.permutation(8)
        m1, p1 = select_dimension(SymMatrix(corr, kind="correlation"))
        m2, p2 = select_dimension(SymMatrix(corr[np.ix_(perm, perm)], kind="correlation"))
        assert m1 == m2
        assert np.allclose(p1.eigenvalues, p2.eigenvalues)

    def test_too_few_traits(self):
        with pytest.raises(TooFewTraitsError):
            select_dimension(SymMatrix(np.eye(2), kind="correlation"))


class TestFitFactorModel:
    def test_identity_input(self):
        fm = fit_factor_model(SymMatrix(np.eye(6), kind="correlation"), 1)
        assert np.allclose(fm.loadings, 0.0, atol=1e-4)
        assert np.allclose(fm.uniquenesses, 1.0, atol=1e-4)
        assert fm.fit_value == pytest.approx(0.0, abs=1e-8)

    def test_exact_structure_recovery(self):
        lam0, corr = block_correlation((4, 4), (0.8, 0.7))
        fm = fit_factor_model(SymMatrix(corr, kind="correlation"), 2)
        assert fm.fit_value < 1e-6
        assert np.linalg.norm(fm.implied_matrix() - corr) < 1e-3

    def test_one_factor_sign_recovery(self):
        lam0 = np.array([0.9, 0.8, 0.7, 0.6])
        corr = np.outer(lam0, lam0) + np.diag(1.0 - lam0**2)
        fm = fit_factor_model(SymMatrix(corr, kind="correlation"), 1)
        est = fm.loadings[:, 0]
        err = min(np.max(np.abs(est - lam0)), np.max(np.abs(est + lam0)))
        assert err < 1e-3

    def test_fit_value_matches_direct_formula(self):
        lam0, corr = block_correlation((5, 4), (0.75, 0.6))
        fm = fit_factor_model(SymMatrix(corr, kind="correlation"), 2)
        assert discrepancy(fm.loadings, fm.uniquenesses, corr) == pytest.approx(
            fm.fit_value, abs=1e-8
        )

    def test_rotation_invariance_of_fit(self, rng):
        lam0, corr = block_correlation((5, 5), (0.8, 0.65))
        fm = fit_factor_model(SymMatrix(corr, kind="correlation"), 2)
        f0 = discrepancy(fm.loadings, fm.uniquenesses, corr)
        for _ in range(5):
            q, _ = np.linalg.qr(rng.normal(size=(2, 2)))
            f1 = discrepancy(fm.loadings @ q, fm.uniquenesses, corr)
            assert abs(f1 - f0) < 1e-10

    def test_communalities_in_unit_interval(self, rng):
        lam0, corr = block_correlation((6, 5), (0.85, 0.7))
        chol = np.linalg.cholesky(corr)
        sample = np.corrcoef((rng.normal(size=(400, 11)) @ chol.T), rowvar=False)
        fm = fit_factor_model(SymMatrix(sample, kind="correlation"), 2)
        comm = fm.communalities()
        assert np.all(comm > -0.02) and np.all(comm < 1.02)
        assert np.allclose(np.diag(fm.implied_matrix()), 1.0, atol=0.02)

    def test_gradient_matches_finite_differences(self, rng):
        for _ in range(5):
            a = rng.normal(size=(9, 2))
            a /= 1.3 * np.sqrt((a**2).sum(axis=1)).max()
            corr = a @ a.T + np.diag(1.0 - np.sum(a**2, axis=1))
            log_psi = np.log(rng.uniform(0.3, 0.9, size=9))
            _, grad = _discrepancy_and_grad(log_psi, corr, 2)
            h = 1e-6
            for j in range(9):
                e = np.zeros(9)
                e[j] = h
                fp, _ = _discrepancy_and_grad(log_psi + e, corr, 2)
                fm_, _ = _discrepancy_and_grad(log_psi - e, corr, 2)
                fd = (fp - fm_) / (2 * h)
                assert abs(grad[j] - fd) <= 1e-5 * max(abs(fd), 1e-3)

    def test_heywood_flagged(self):
        lam0 = np.array([0.999, 0.9, 0.5, 0.4])
        corr = np.outer(lam0, lam0) + np.diag(1.0 - lam0**2)
        fm = fit_factor_model(SymMatrix(corr, kind="correlation"), 1)
        assert fm.heywood
        assert np.all(fm.uniquenesses >= 0.005 * (1 - 1e-9))

    def test_non_pd_rejected(self):
        bad = np.full((4, 4), 1.0)
        with pytest.raises(MatrixConditionError):
            fit_factor_model(SymMatrix(bad, kind="correlation"), 1)

    def test_bad_dimension(self):
        with pytest.raises(ShapeError):
            fit_factor_model(SymMatrix(np.eye(3), kind="correlation"), 3)


class TestVarimax:
    def test_single_column_sign_only(self, rng):
        lam = rng.normal(size=(6, 1))
        out = varimax(lam)
        assert np.allclose(out, lam) or np.allclose(out, -lam)

    def test_outer_product_invariant(self, rng):
        lam = rng.normal(size=(10, 3))
        out = varimax(lam)
        assert np.allclose(out @ out.T, lam @ lam.T, atol=1e-10)

    def test_criterion_non_decreasing(self, rng):
        for _ in range(10):
            lam = rng.normal(size=(8, 2))
            out = varimax(lam)
            assert varimax_criterion(out) >= varimax_criterion(lam) - 1e-12

    def test_simple_structure_fixed_point(self):
        lam, _ = block_correlation((4, 4), (0.8, 0.6))
        out = varimax(lam)
        # fixed point up to a signed column permutation
        best = np.inf
        for perm in ([0, 1], [1, 0]):
            for s0 in (1, -1):
                for s1 in (1, -1):
                    cand = np.column_stack([s0 * lam[:, perm[0]], s1 * lam[:, perm[1]]])
                    best = min(best, np.max(np.abs(out - cand)))
        assert best < 1e-6

    def test_grid_search_oracle_2d(self, rng):
        lam = rng.normal(size=(7, 2))
        out = varimax(lam, normalize=True)
        crit = varimax_criterion(out, normalize=True)
        best = -np.inf
        for theta in np.linspace(0.0, 2 * np.pi, 3600, endpoint=False):
            c, s = np.cos(theta), np.sin(theta)
            rot = np.array([[c, -s], [s, c]])
            best = max(best, varimax_criterion(lam @ rot, normalize=True))
        assert crit >= best - 1e-6

    def test_sort_by_explained_variance(self):
        lam = np.array([[0.2, 0.9], [0.1, 0.8], [0.3, 0.7]])
        out = sort_by_explained_variance(lam)
        ss = np.sum(out**2, axis=0)
        assert ss[0] >= ss[1]
