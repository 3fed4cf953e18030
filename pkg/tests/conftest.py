"""Shared helpers: random PSD matrices, correlation matrices with a given
spectrum, toy trial builders and the dense BLUP oracles."""

import numpy as np
import pytest

from factorblup.core import TrialDataset, TrialDesign


def random_psd(n, rng, jitter=0.3):
    a = rng.normal(size=(n, n))
    return a @ a.T / n + jitter * np.eye(n)


def correlation_with_spectrum(eigenvalues, rng):
    """Correlation matrix with the given spectrum (Davies-Higham Givens sweeps).

    The eigenvalues must be nonnegative and sum to their count.
    """
    lam = np.asarray(eigenvalues, dtype=float)
    n = lam.size
    assert abs(lam.sum() - n) < 1e-9
    q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    a = (q * lam) @ q.T
    for _ in range(n):
        d = np.diag(a)
        if np.all(np.abs(d - 1.0) < 1e-12):
            break
        i = int(np.argmin(d))
        j = int(np.argmax(d))
        if d[i] > 1.0 - 1e-12 or d[j] < 1.0 + 1e-12:
            break
        # Givens rotation on (i, j) making a_ii = 1.
        aii, ajj, aij = a[i, i], a[j, j], a[i, j]
        disc = aij**2 - (aii - 1.0) * (ajj - 1.0)
        t = (aij + np.sqrt(max(disc, 0.0))) / (ajj - 1.0)
        c = 1.0 / np.sqrt(1.0 + t**2)
        s = c * t
        rot = np.eye(n)
        rot[i, i] = c
        rot[j, j] = c
        rot[i, j] = s
        rot[j, i] = -s
        a = rot.T @ a @ rot
        a = (a + a.T) / 2.0
    np.fill_diagonal(a, 1.0)
    return a


def balanced_design(g, r, tau=2, stages=None):
    if stages is None:
        stages = tuple(["vegetative"] * max(1, tau // 2) + ["heading"] * (tau - max(1, tau // 2)))
    return TrialDesign(
        genotype_ids=tuple(f"G{i:03d}" for i in range(g)),
        replicate_count=r,
        plot_genotype=np.repeat(np.arange(g), r),
        plot_replicate=np.tile(np.arange(1, r + 1), g),
        timepoints=tuple(float(7 * l) for l in range(tau)),
        stage_labels=stages,
    )


def tiny_dataset(rng, g=12, r=2, s=4, tau=3):
    design = balanced_design(g, r, tau=tau, stages=("vegetative", "heading", "grain-filling")[:tau])
    secondary = rng.normal(size=(g * r, s, tau))
    focal = rng.normal(size=g * r)
    markers = rng.integers(0, 3, size=(g, 40)).astype(float)
    return TrialDataset(
        design=design,
        secondary=secondary,
        focal=focal,
        trait_labels=tuple(f"t{j}" for j in range(s)),
        markers=markers,
    )


# ---------------------------------------------------------------------------
# Dense joint-normal oracles for the BLUP suite


def dense_gls_beta(y, sigma_G, sigma_E, h_o):
    """Plot-level GLS intercepts and the dense V^-1."""
    n, t = y.shape
    v = np.kron(sigma_G, h_o) + np.kron(sigma_E, np.eye(n))
    vi = np.linalg.inv(v)
    x = np.kron(np.eye(t), np.ones((n, 1)))
    beta = np.linalg.solve(x.T @ vi @ x, x.T @ vi @ y.ravel(order="F"))
    return beta, vi


def dense_cv1_oracle(y_o, plot_geno, sigma_G, sigma_E, k_o, k_uo):
    """E(g_f | Y_o) for training and test genotypes by explicit inversion."""
    n, t = y_o.shape
    z = np.zeros((n, k_o.shape[0]))
    z[np.arange(n), plot_geno] = 1.0
    h_o = z @ k_o @ z.T
    beta, vi = dense_gls_beta(y_o, sigma_G, sigma_E, h_o)
    yc = (y_o - beta[None, :]).ravel(order="F")
    row_f = sigma_G[-1, :].reshape(1, t)
    g_fo = (np.kron(row_f, k_o @ z.T) @ vi @ yc).ravel()
    g_fu = (np.kron(row_f, k_uo @ z.T) @ vi @ yc).ravel()
    return g_fo, g_fu, beta


def dense_cv2_oracle(y_o, plot_geno, y_wu_means, r, sigma_G, sigma_E, k_o, k_uo, k_u):
    """E(g_fu | Y_o, test score means) from the full dense joint normal."""
    n, t = y_o.shape
    m = t - 1
    n_u = k_u.shape[0]
    z = np.zeros((n, k_o.shape[0]))
    z[np.arange(n), plot_geno] = 1.0
    h_o = z @ k_o @ z.T
    beta, _ = dense_gls_beta(y_o, sigma_G, sigma_E, h_o)
    c_oo = np.kron(sigma_G, h_o) + np.kron(sigma_E, np.eye(n))
    c_ww = np.kron(sigma_G[:m, :m], k_u) + np.kron(sigma_E[:m, :m], np.eye(n_u) / r)
    c_ow = np.kron(sigma_G[:, :m], z @ k_uo.T)
    big = np.block([[c_oo, c_ow], [c_ow.T, c_ww]])
    cov_f = np.hstack(
        [
            np.kron(sigma_G[-1, :].reshape(1, t), k_uo @ z.T),
            np.kron(sigma_G[-1, :m].reshape(1, m), k_u),
        ]
    )
    obs = np.concatenate(
        [
            (y_o - beta[None, :]).ravel(order="F"),
            (y_wu_means - beta[None, :m]).ravel(order="F"),
        ]
    )
    return (cov_f @ np.linalg.solve(big, obs)).ravel()


def toy_blup_instance(seed, g=9, t=3, r=3, test_frac=3):
    """Random kinship/covariances plus simulated plot data for oracle checks."""
    rng = np.random.default_rng(seed)
    k = random_psd(g, rng, jitter=0.5)
    sigma_G = random_psd(t, rng)
    sigma_E = random_psd(t, rng)
    ids = np.arange(g)
    test = ids[: max(1, g // test_frac)]
    train = ids[max(1, g // test_frac):]
    plot_geno = np.repeat(np.arange(train.size), r)
    lk = np.linalg.cholesky(k + 1e-12 * np.eye(g))
    ls = np.linalg.cholesky(sigma_G + 1e-12 * np.eye(t))
    le = np.linalg.cholesky(sigma_E + 1e-12 * np.eye(t))
    g_all = lk @ rng.normal(size=(g, t)) @ ls.T
    beta_true = rng.normal(size=t)
    y_o = beta_true[None, :] + g_all[train][plot_geno] + rng.normal(size=(plot_geno.size, t)) @ le.T
    y_u = (
        beta_true[None, :]
        + g_all[test][np.repeat(np.arange(test.size), r)]
        + rng.normal(size=(test.size * r, t)) @ le.T
    )
    return {
        "k": k, "sigma_G": sigma_G, "sigma_E": sigma_E,
        "train": train, "test": test, "plot_geno": plot_geno,
        "y_o": y_o, "y_u": y_u, "r": r, "g_all": g_all,
    }


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
