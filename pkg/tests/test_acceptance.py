"""Acceptance suite: one test per criterion, each reporting a pass/fail line.

Every tolerance here is pinned; a summary line per criterion is printed
in the pytest terminal summary.
"""

import time

import numpy as np

import conftest
from factorblup.core import SymMatrix, TrialDataset, cov_to_cor
from factorblup.factor import _discrepancy_and_grad, fit_factor_model, select_dimension
from factorblup.gblup import MultiTraitCov, cv1_predict, cv2_predict, univariate_gblup
from factorblup.kinship import partition_kinship
from factorblup.pipeline import (
    CvPlan,
    emit_reports,
    fit_training_model,
    run_cv,
    split_genotypes,
)
from factorblup.procrustes import align_series, smooth_to_signed_permutation
from factorblup.scores import ScoreSeries
from factorblup.selection import best_subset
from factorblup.simulate import SimConfig, preset_cimmyt_like, simulate_trial
from factorblup.splines import extract_characteristics, fit_trajectories

from conftest import (
    dense_cv1_oracle,
    dense_cv2_oracle,
    random_psd,
    toy_blup_instance,
)


def record(n, name, ok, detail, elapsed, limit):
    status = "PASS" if ok else "FAIL"
    line = f"criterion {n} ({name}): {status} [{detail}; {elapsed:.1f}s / limit {limit:.0f}s]"
    conftest.ACCEPTANCE_LINES.append(line)
    print("\n" + line)
    assert ok, line
    assert elapsed < limit, line


def test_criterion_1_blup_oracle_equivalence():
    t0 = time.time()
    worst_cv1 = worst_cv2 = worst_uni = 0.0
    n_instances = 50
    for seed in range(n_instances):
        inst = toy_blup_instance(seed, g=9, t=3, r=3)
        part = partition_kinship(
            SymMatrix(inst["k"], kind="kinship"), inst["train"].tolist(), inst["test"].tolist()
        )
        cov = MultiTraitCov(inst["sigma_G"], inst["sigma_E"])
        res1 = cv1_predict(inst["y_o"], inst["plot_geno"], cov, part)
        g_fo, g_fu, _ = dense_cv1_oracle(
            inst["y_o"], inst["plot_geno"], inst["sigma_G"], inst["sigma_E"], part.k_o, part.k_uo
        )
        worst_cv1 = max(
            worst_cv1,
            float(np.max(np.abs(res1.g_hat_train - g_fo))),
            float(np.max(np.abs(res1.g_hat_test - g_fu))),
        )
        r, t = inst["r"], inst["sigma_G"].shape[0]
        y_wu = inst["y_u"].reshape(part.n_test, r, t).mean(axis=1)[:, :-1]
        res2 = cv2_predict(inst["y_o"], inst["plot_geno"], y_wu, cov, part, r_test=r)
        oracle2 = dense_cv2_oracle(
            inst["y_o"], inst["plot_geno"], y_wu, r,
            inst["sigma_G"], inst["sigma_E"], part.k_o, part.k_uo, part.k_u,
        )
        worst_cv2 = max(worst_cv2, float(np.max(np.abs(res2.g_hat_test - oracle2))))
        y_means = inst["y_o"][:, -1].reshape(part.n_train, r).mean(axis=1)
        sg, se = inst["sigma_G"][-1, -1], inst["sigma_E"][-1, -1] / r
        uni = univariate_gblup(y_means, (sg, se), part)
        g_o = part.n_train
        k_inv = np.linalg.inv(part.k_o)
        lhs = np.block(
            [
                [np.array([[float(g_o)]]), np.ones((1, g_o))],
                [np.ones((g_o, 1)), np.eye(g_o) + (se / sg) * k_inv],
            ]
        )
        sol = np.linalg.solve(lhs, np.concatenate([[y_means.sum()], y_means]))
        worst_uni = max(worst_uni, float(np.max(np.abs(sol[1:] - uni.g_hat_train))))
    elapsed = time.time() - t0
    ok = worst_cv1 < 1e-8 and worst_cv2 < 1e-8 and worst_uni < 1e-8
    record(
        1, "BLUP oracle equivalence", ok,
        f"{n_instances} instances, max |err| cv1 {worst_cv1:.1e}, cv2 {worst_cv2:.1e}, uni-MME {worst_uni:.1e}",
        elapsed, 30.0,
    )


def test_criterion_2_factor_recovery():
    t0 = time.time()
    s, g = 20, 500
    lam0 = np.zeros((s, 2))
    lam0[:10, 0] = 0.8
    lam0[10:, 1] = 0.7
    psi0 = 1.0 - np.sum(lam0**2, axis=1)
    r_pop = lam0 @ lam0.T + np.diag(psi0)
    chol = np.linalg.cholesky(r_pop)
    rng = np.random.default_rng(2024)
    hits = 0
    for _ in range(100):
        x = rng.normal(size=(g, s)) @ chol.T
        sample = np.corrcoef(x, rowvar=False)
        m_star, _ = select_dimension(SymMatrix(sample, kind="correlation"))
        hits += m_star == 2
    fm = fit_factor_model(SymMatrix(r_pop, kind="correlation"), 2)
    resid = float(np.linalg.norm(fm.implied_matrix() - r_pop))
    elapsed = time.time() - t0
    ok = hits >= 90 and resid < 0.05
    record(
        2, "factor recovery", ok,
        f"dimension hits {hits}/100 (need >= 90), population-fit residual {resid:.1e} (need < 0.05)",
        elapsed, 120.0,
    )


def test_criterion_3_alignment_recovery():
    t0 = time.time()
    rng = np.random.default_rng(77)

    def random_signed_perm(m):
        p = np.zeros((m, m))
        p[np.arange(m), rng.permutation(m)] = rng.choice([-1.0, 1.0], size=m)
        return p

    noiseless_hits = 0
    for _ in range(100):
        target = rng.normal(size=(8, 3))
        perms = [np.eye(3)] + [random_signed_perm(3) for _ in range(4)]
        series = align_series([target @ p for p in perms], target_index=0)
        ok_trial = all(
            np.array_equal(got.matrix, p.T)
            for got, p in zip(series.permutations, perms)
        )
        noiseless_hits += ok_trial

    noisy_hits = 0
    for _ in range(100):
        p = random_signed_perm(4)
        t = p + rng.uniform(-0.1, 0.1, size=(4, 4))
        noisy_hits += np.array_equal(smooth_to_signed_permutation(t).matrix, p)
    elapsed = time.time() - t0
    ok = noiseless_hits == 100 and noisy_hits >= 99
    record(
        3, "alignment recovery", ok,
        f"noiseless {noiseless_hits}/100 (need 100), noisy {noisy_hits}/100 (need >= 99)",
        elapsed, 30.0,
    )


def test_criterion_4_selection_power_and_size():
    t0 = time.time()
    rng = np.random.default_rng(404)
    n = 2000
    power_hits = 0
    for _ in range(100):
        x = rng.normal(size=(n, 11))
        y = x[:, 3] + rng.normal(size=n) / np.sqrt(5.0)
        power_hits += best_subset(y, x).selected == (3,)
    null_hits = 0
    for _ in range(100):
        x = rng.normal(size=(n, 10))
        y = rng.normal(size=n)
        null_hits += best_subset(y, x).selected == ()
    elapsed = time.time() - t0
    ok = power_hits >= 90 and null_hits >= 85
    record(
        4, "selection power/size", ok,
        f"informative recovered {power_hits}/100 (need >= 90), null empty {null_hits}/100 (need >= 85)",
        elapsed, 60.0,
    )


def test_criterion_5_cv2_gain_reproduction():
    t0 = time.time()
    # Unpinned knobs (marker count, population structure) sit in the
    # weak-relatedness regime where the CV1 similarity between models holds.
    cfg = SimConfig(
        g=500, s=12, r=3, tau=4, p=20000, seed=505,
        factor_blocks=(tuple(range(6)), tuple(range(6, 12))),
        strengths=np.tile([0.8, 0.7], (4, 1)),
        rho=(0.8, 0.0),
        h2_focal=0.3,
        h2_secondary=0.8,
        n_families=None,
    )
    dataset, _ = simulate_trial(cfg)
    plan = CvPlan(
        n_replicates=50,
        stage_subsets=("all",),
        models=("uni", "pertime"),
        base_seed=99,
        full_fit_artifacts=False,
    )
    report = run_cv(dataset, plan)
    uni_cv1 = report.pa_values("uni", "CV1", "all")
    glf_cv1 = report.pa_values("pertime", "CV1", "all")
    uni_cv2 = report.pa_values("uni", "CV2", "all")
    glf_cv2 = report.pa_values("pertime", "CV2", "all")
    assert uni_cv1.size == glf_cv1.size == uni_cv2.size == glf_cv2.size == 50
    gain = float(glf_cv2.mean() - uni_cv2.mean())
    cv1_diff = float((glf_cv1 - uni_cv1).mean())
    elapsed = time.time() - t0
    ok = gain >= 0.05 and abs(cv1_diff) <= 0.05
    record(
        5, "CV2 gain reproduction", ok,
        f"mean PA gain CV2 {gain:+.3f} (need >= +0.05), paired CV1 diff {cv1_diff:+.3f} (need within +-0.05)",
        elapsed, 600.0,
    )


def test_criterion_6_numerical_hygiene():
    t0 = time.time()
    rng = np.random.default_rng(606)
    checks = []

    # cov_to_cor idempotence and scale invariance at 1e-10
    s = random_psd(5, rng)
    r1 = cov_to_cor(SymMatrix(s))
    r2 = cov_to_cor(SymMatrix(r1.values, kind="correlation"))
    d = np.diag(rng.uniform(0.2, 5.0, size=5))
    r3 = cov_to_cor(SymMatrix(d @ s @ d))
    checks.append(("cov_to_cor", np.allclose(r1.values, r2.values, atol=1e-10)
                   and np.allclose(r1.values, r3.values, atol=1e-10)))

    # discrepancy gradient vs central finite differences at 1e-5 relative
    grad_ok = True
    for _ in range(3):
        a = rng.normal(size=(8, 2))
        a /= 1.3 * np.sqrt((a**2).sum(axis=1)).max()
        corr = a @ a.T + np.diag(1.0 - np.sum(a**2, axis=1))
        lp = np.log(rng.uniform(0.3, 0.9, size=8))
        _, grad = _discrepancy_and_grad(lp, corr, 2)
        h = 1e-6
        for j in range(8):
            e = np.zeros(8)
            e[j] = h
            fp, _ = _discrepancy_and_grad(lp + e, corr, 2)
            fm, _ = _discrepancy_and_grad(lp - e, corr, 2)
            fd = (fp - fm) / (2 * h)
            if abs(grad[j] - fd) > 1e-5 * max(abs(fd), 1e-3):
                grad_ok = False
    checks.append(("gradient", grad_ok))

    # AUC closed forms at 1e-4
    tpts = np.array([0.0, 1.0, 2.0, 3.0])
    lin = (1.5 - 0.75 * tpts)[:, None, None]
    quad = (tpts**2)[:, None, None]

    def mk_series(vals):
        geno = tuple(vals[l] for l in range(4))
        return ScoreSeries(geno, geno, True, tuple(tpts))

    fit_lin = fit_trajectories(mk_series(lin), penalty=1.0)
    fit_quad = fit_trajectories(mk_series(quad), penalty=0.0)
    auc_lin = extract_characteristics(fit_lin, (0.0, 3.0)).auc[0, 0]
    auc_quad = extract_characteristics(fit_quad, (0.0, 3.0)).auc[0, 0]
    checks.append(("auc", abs(auc_lin - (1.5 * 3 - 0.75 * 4.5)) < 1e-4 and abs(auc_quad - 9.0) < 1e-4))

    # leakage sentinel: perturbing test-set focal leaves training artifacts bitwise unchanged
    cfg = SimConfig(
        g=90, s=6, r=2, tau=3, p=150, seed=33,
        factor_blocks=(tuple(range(3)), tuple(range(3, 6))),
        strengths=np.tile([0.8, 0.7], (3, 1)),
        rho=(0.6, 0.0), h2_focal=0.5,
    )
    dataset, _ = simulate_trial(cfg)
    train, test = split_genotypes(90, 2 / 3, 0, 0)
    trained = fit_training_model(dataset, train, (0, 1, 2), "pertime")
    focal = dataset.focal.copy()
    focal[np.isin(dataset.design.plot_genotype, test)] += 123.0
    perturbed = TrialDataset(
        design=dataset.design, secondary=dataset.secondary, focal=focal,
        trait_labels=dataset.trait_labels, markers=dataset.markers,
    )
    trained_p = fit_training_model(perturbed, train, (0, 1, 2), "pertime")
    sentinel_ok = (
        trained.selection.selected == trained_p.selection.selected
        and np.array_equal(trained.plot_matrix, trained_p.plot_matrix)
        and np.array_equal(trained.mt_cov.sigma_G, trained_p.mt_cov.sigma_G)
        and all(
            np.array_equal(a, b) for a, b in zip(trained.projections, trained_p.projections)
        )
    )
    checks.append(("leakage-sentinel", sentinel_ok))

    elapsed = time.time() - t0
    ok = all(flag for _, flag in checks)
    detail = ", ".join(f"{name} {'ok' if flag else 'FAILED'}" for name, flag in checks)
    record(6, "numerical hygiene", ok, detail, elapsed, 60.0)


def test_criterion_7_scale_smoke(tmp_path):
    t0 = time.time()
    cfg = preset_cimmyt_like(seed=2015)
    dataset, _ = simulate_trial(cfg)
    assert dataset.design.n_plots == 3099
    assert dataset.n_traits == 62
    assert dataset.design.n_timepoints == 10
    plan = CvPlan(
        n_replicates=1,
        stage_subsets=("vegetative", "vegetative+heading", "all"),
        models=("uni", "concat", "pertime", "pertime_noproc"),
        base_seed=7,
        full_fit_artifacts=True,
    )
    report = run_cv(dataset, plan)
    failures = [r for r in report.rows if r.error]
    m_stars = report.artifacts.get("m_star_per_timepoint", [])
    paths = emit_reports(report, tmp_path)
    missing = [p for p in paths if not p or not __import__("os").path.exists(p)]
    elapsed = time.time() - t0
    ok = (
        not failures
        and len(m_stars) == 10
        and all(m == 2 for m in m_stars)
        and not missing
        and elapsed < 600.0
    )
    record(
        7, "scale smoke test", ok,
        f"m* per timepoint {m_stars}, {len(report.rows)} PA rows, "
        f"{len(failures)} failures, {len(paths)} report files",
        elapsed, 600.0,
    )
