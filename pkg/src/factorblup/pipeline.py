"""Cross-validation harness, model suite, predictive ability and report emission.

Each replicate splits the genotypes 2/3 train : 1/3 test (a genotype's
plots never straddle the split), fits every model strictly on training
rows, predicts the test genotype means under CV1 and, with test-set
secondary data scored through training-fitted projections, under CV2,
and records Pearson predictive abilities. Splits are a pure function of
(base seed, replicate index) and are shared across models within a
replicate for paired comparison.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import SymMatrix, TrialDataset, cov_to_cor
from .covest import estimate_genetic_cov
from .errors import (
    BaselineDegenerateError,
    DataValidationError,
    FactorBlupError,
    UndefinedPAError,
)
from .factor import fit_factor_model, select_dimension, sort_by_explained_variance, varimax
from .gblup import (
    BlupResult,
    MultiTraitCov,
    cv1_predict,
    cv2_predict,
    estimate_multitrait_cov,
    univariate_gblup,
)
from .kinship import KinshipPartition, genomic_relationship, partition_kinship
from .procrustes import AlignedLoadingsSeries, align_series
from .scores import score_series, scoring_projection
from .splines import fit_trajectories

log = logging.getLogger(__name__)

MODELS = ("uni", "concat", "pertime", "pertime_noproc")
STAGE_SUBSETS = {
    "vegetative": ("vegetative",),
    "vegetative+heading": ("vegetative", "heading"),
    "all": ("vegetative", "heading", "grain-filling"),
}
SCENARIOS = ("CV1", "CV2")

REDUNDANCY_LIMIT = 0.99


@dataclass(frozen=True)
class CvPlan:
    """What to run: replicates, split fraction, scenarios, stages, models."""

    n_replicates: int = 100
    train_fraction: float = 2.0 / 3.0
    scenarios: tuple[str, ...] = SCENARIOS
    stage_subsets: tuple[str, ...] = ("vegetative", "vegetative+heading", "all")
    models: tuple[str, ...] = MODELS
    base_seed: int = 0
    cv2_variant: str = "exact"
    full_fit_artifacts: bool = True
    threads: int = 1

    def __post_init__(self):
        if not (0.0 < self.train_fraction < 1.0):
            raise DataValidationError("train fraction must be strictly between 0 and 1")
        for sc in self.scenarios:
            if sc not in SCENARIOS:
                raise DataValidationError(f"unknown scenario {sc!r}")
        for st in self.stage_subsets:
            if st not in STAGE_SUBSETS:
                raise DataValidationError(f"unknown stage subset {st!r}")
        for mo in self.models:
            if mo not in MODELS:
                raise DataValidationError(f"unknown model {mo!r}")


@dataclass(frozen=True)
class PaRecord:
    model: str
    scenario: str
    stage: str
    replicate: int
    pa: float | None
    error: str | None = None
    runtime: float = 0.0


@dataclass(frozen=True)
class SelectionRecord:
    replicate: int
    model: str
    stage: str
    timepoint: float | str
    factor: int
    selected: bool


@dataclass(frozen=True)
class PredictionRecord:
    genotype: str
    scenario: str
    model: str
    stage: str
    replicate: int
    predicted: float
    observed_mean: float


@dataclass
class CvReport:
    """Per-replicate predictive abilities plus selection incidence and artifacts.

    Per-genotype predictions are kept for the first replicate only; the
    full PA distribution is what the boxplot rows carry.
    """

    plan: CvPlan
    rows: list[PaRecord] = field(default_factory=list)
    selection: list[SelectionRecord] = field(default_factory=list)
    predictions: list[PredictionRecord] = field(default_factory=list)
    artifacts: dict = field(default_factory=dict)

    def pa_values(self, model: str, scenario: str, stage: str) -> np.ndarray:
        vals = [
            r.pa
            for r in self.rows
            if r.model == model and r.scenario == scenario and r.stage == stage and r.pa is not None
        ]
        return np.asarray(vals, dtype=float)

    def summary(self) -> list[dict]:
        out = []
        seen = sorted({(r.model, r.scenario, r.stage) for r in self.rows})
        for model, scenario, stage in seen:
            vals = self.pa_values(model, scenario, stage)
            if vals.size:
                qs = np.quantile(vals, [0.25, 0.5, 0.75])
                out.append(
                    {
                        "model": model, "scenario": scenario, "stage": stage,
                        "n": int(vals.size), "mean": float(vals.mean()),
                        "q25": float(qs[0]), "median": float(qs[1]), "q75": float(qs[2]),
                    }
                )
            else:
                out.append(
                    {
                        "model": model, "scenario": scenario, "stage": stage,
                        "n": 0, "mean": None, "q25": None, "median": None, "q75": None,
                    }
                )
        return out


def predictive_ability(predicted: np.ndarray, observed_means: np.ndarray) -> float:
    """Pearson correlation between predicted and observed genotype means."""
    p = np.asarray(predicted, dtype=float)
    o = np.asarray(observed_means, dtype=float)
    if p.shape != o.shape or p.ndim != 1:
        raise DataValidationError("predicted and observed vectors must have equal length")
    if p.size < 3:
        raise DataValidationError(f"need at least 3 test genotypes, got {p.size}")
    if np.std(p) == 0.0 or np.std(o) == 0.0:
        raise UndefinedPAError("zero variance; predictive ability undefined")
    return float(np.corrcoef(p, o)[0, 1])


def split_genotypes(n_genotypes: int, train_fraction: float, base_seed: int, replicate: int):
    """Deterministic genotype split for one replicate; returns sorted index arrays."""
    rng = np.random.default_rng([base_seed, replicate])
    perm = rng.permutation(n_genotypes)
    n_train = int(round(train_fraction * n_genotypes))
    n_train = min(max(n_train, 1), n_genotypes - 1)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def _group_means(x: np.ndarray, idx: np.ndarray, n_groups: int) -> np.ndarray:
    sums = np.zeros((n_groups, x.shape[1]) if x.ndim == 2 else n_groups)
    np.add.at(sums, idx, x)
    counts = np.bincount(idx, minlength=n_groups).astype(float)
    return sums / (counts[:, None] if x.ndim == 2 else counts)


@dataclass(frozen=True)
class _TrainView:
    """Training rows of the dataset with local genotype indexing."""

    train_gidx: np.ndarray          # sorted dataset genotype indices
    plot_rows: np.ndarray           # dataset plot row indices (training plots)
    plot_local: np.ndarray          # local genotype index per training plot
    r_bar: float

    @property
    def n_train(self) -> int:
        return self.train_gidx.size


def _train_view(dataset: TrialDataset, train_gidx: np.ndarray) -> _TrainView:
    train_gidx = np.sort(np.asarray(train_gidx, dtype=int))
    mask = np.isin(dataset.design.plot_genotype, train_gidx)
    rows = np.nonzero(mask)[0]
    local = np.searchsorted(train_gidx, dataset.design.plot_genotype[rows])
    return _TrainView(train_gidx, rows, local, r_bar=rows.size / train_gidx.size)


@dataclass(frozen=True)
class TrainedModel:
    """Training-only artifacts of one model on one stage subset.

    Every array here is a function of training rows alone; the leakage
    sentinel test relies on that.
    """

    kind: str
    timepoint_indices: tuple[int, ...]
    m_star_per_timepoint: tuple[int, ...]
    modal_m: int
    covariances: tuple
    loadings: tuple[np.ndarray, ...]
    alignment: AlignedLoadingsSeries | None
    projections: tuple[np.ndarray, ...]
    train_means: tuple[np.ndarray, ...]
    candidate_labels: tuple
    selection: object
    mt_cov: MultiTraitCov | None
    plot_matrix: np.ndarray | None
    plot_local: np.ndarray | None
    focal_variances: tuple[float, float]
    focal_means_train: np.ndarray
    concat_keep: tuple[int, ...] | None = None


def _fit_timepoint_covariances(dataset, view, timepoint_indices):
    """Per-timepoint BLUEs, covariance pairs and training means (training rows only)."""
    design = dataset.design
    covs, blues_all, means = [], [], []
    for l in timepoint_indices:
        y = dataset.secondary[view.plot_rows, :, l]
        blues = _group_means(y, view.plot_local, view.n_train)
        resid = y - blues[view.plot_local]
        dof = y.shape[0] - view.n_train
        sigma_E = SymMatrix((resid.T @ resid) / dof, kind="covariance")
        pair = estimate_genetic_cov(blues, sigma_E, view.r_bar)
        covs.append(pair)
        blues_all.append(blues)
        means.append(blues.mean(axis=0))
    return covs, blues_all, means


def _fit_focal_variances(dataset, view):
    y = dataset.focal[view.plot_rows][:, None]
    means = _group_means(y, view.plot_local, view.n_train)[:, 0]
    resid = dataset.focal[view.plot_rows] - means[view.plot_local]
    dof = view.plot_rows.size - view.n_train
    sigma_e = float(resid @ resid) / dof
    sigma_p = float(np.var(means, ddof=1))
    sigma_g = max(sigma_p - sigma_e / view.r_bar, 0.0)
    return (sigma_g, sigma_e), means


def _alignment_target(design, timepoint_indices) -> int:
    """Position (within the subset) of the first heading timepoint, else the last."""
    for pos, l in enumerate(timepoint_indices):
        if design.stage_labels[l] == "heading":
            return pos
    return len(timepoint_indices) - 1


def fit_training_model(dataset: TrialDataset, train_gidx, timepoint_indices, kind: str) -> TrainedModel:
    """Fit one model's training-stage artifacts (covariances, factors, selection)."""
    if kind not in MODELS:
        raise DataValidationError(f"unknown model kind {kind!r}")
    view = _train_view(dataset, train_gidx)
    focal_var, focal_means = _fit_focal_variances(dataset, view)
    timepoint_indices = tuple(timepoint_indices)
    if not timepoint_indices and kind != "uni":
        raise DataValidationError("no timepoints in the requested stage subset")
    if kind == "uni":
        return TrainedModel(
            kind=kind, timepoint_indices=timepoint_indices, m_star_per_timepoint=(),
            modal_m=0, covariances=(), loadings=(), alignment=None, projections=(),
            train_means=(), candidate_labels=(), selection=None, mt_cov=None,
            plot_matrix=None, plot_local=view.plot_local, focal_variances=focal_var,
            focal_means_train=focal_means,
        )
    if kind == "concat":
        return _fit_concat(dataset, view, timepoint_indices, focal_var, focal_means)
    return _fit_pertime(dataset, view, timepoint_indices, focal_var, focal_means, align=(kind == "pertime"))


def _fit_pertime(dataset, view, timepoint_indices, focal_var, focal_means, align):
    from .selection import best_subset

    design = dataset.design
    covs, blues_all, means = _fit_timepoint_covariances(dataset, view, timepoint_indices)
    m_stars, r_gs = [], []
    for pair in covs:
        r_g = cov_to_cor(pair.sigma_G)
        m_star, _ = select_dimension(r_g)
        m_stars.append(m_star)
        r_gs.append(r_g)
    modal = int(np.bincount(m_stars).argmax())
    loadings, models = [], []
    for r_g in r_gs:
        fm = fit_factor_model(r_g, modal)
        lam = sort_by_explained_variance(varimax(fm.loadings))
        # Uniquenesses consistent with the rotated loadings on the correlation scale.
        fm = replace_model_loadings(fm, lam)
        models.append(fm)
        loadings.append(lam)
    alignment = align_series(loadings, _alignment_target(design, timepoint_indices)) if align else None
    projections, geno_scores, plot_scores = [], [], []
    for pos, l in enumerate(timepoint_indices):
        proj = scoring_projection(models[pos], covs[pos], view.r_bar)
        if alignment is not None:
            proj = proj @ alignment.permutations[pos].matrix
        projections.append(proj)
        centered_blues = blues_all[pos] - means[pos]
        geno_scores.append(centered_blues @ proj)
        plot_scores.append((dataset.secondary[view.plot_rows, :, l] - means[pos]) @ proj)
    candidates = np.hstack(geno_scores)
    labels = tuple(
        (design.timepoints[l], k) for l in timepoint_indices for k in range(modal)
    )
    sel = best_subset(focal_means, candidates)
    plot_cand = np.hstack(plot_scores)
    plot_matrix = np.column_stack(
        [plot_cand[:, list(sel.selected)], dataset.focal[view.plot_rows]]
    )
    mt_cov = estimate_multitrait_cov(plot_matrix, view.plot_local)
    return TrainedModel(
        kind="pertime" if align else "pertime_noproc",
        timepoint_indices=timepoint_indices,
        m_star_per_timepoint=tuple(m_stars),
        modal_m=modal,
        covariances=tuple(covs),
        loadings=tuple(loadings),
        alignment=alignment,
        projections=tuple(projections),
        train_means=tuple(means),
        candidate_labels=labels,
        selection=sel,
        mt_cov=mt_cov,
        plot_matrix=plot_matrix,
        plot_local=view.plot_local,
        focal_variances=focal_var,
        focal_means_train=focal_means,
    )


def replace_model_loadings(fm, lam):
    """Factor model with rotated loadings; uniquenesses are rotation-invariant."""
    from dataclasses import replace as dc_replace

    return dc_replace(fm, loadings=lam)


def _fit_concat(dataset, view, timepoint_indices, focal_var, focal_means):
    from .selection import best_subset

    design = dataset.design
    blocks = [dataset.secondary[view.plot_rows, :, l] for l in timepoint_indices]
    x = np.hstack(blocks)
    labels_full = [
        (design.timepoints[l], j) for l in timepoint_indices for j in range(dataset.n_traits)
    ]
    blues = _group_means(x, view.plot_local, view.n_train)
    resid = x - blues[view.plot_local]
    dof = x.shape[0] - view.n_train
    sigma_e_full = (resid.T @ resid) / dof
    sigma_p_full = np.cov(blues, rowvar=False, ddof=1)
    sigma_g_raw = sigma_p_full - sigma_e_full / view.r_bar
    diag = np.diag(sigma_g_raw).copy()
    positive = diag > 0.0
    # Redundancy filter on the raw genetic correlations, lowest index kept.
    sd = np.sqrt(np.where(positive, diag, np.nan))
    corr = sigma_g_raw / np.outer(sd, sd)
    keep: list[int] = []
    for j in range(x.shape[1]):
        if not positive[j]:
            continue
        if keep and np.any(np.abs(corr[j, keep]) > REDUNDANCY_LIMIT):
            continue
        keep.append(j)
    if len(keep) < 3:
        raise BaselineDegenerateError(
            f"only {len(keep)} columns survive the redundancy filter"
        )
    keep_arr = np.asarray(keep, dtype=int)
    sigma_E = SymMatrix(sigma_e_full[np.ix_(keep_arr, keep_arr)], kind="covariance")
    pair = estimate_genetic_cov(blues[:, keep_arr], sigma_E, view.r_bar)
    r_g = cov_to_cor(pair.sigma_G)
    m_star, _ = select_dimension(r_g)
    fm = fit_factor_model(r_g, m_star)
    lam = sort_by_explained_variance(varimax(fm.loadings))
    fm = replace_model_loadings(fm, lam)
    proj = scoring_projection(fm, pair, view.r_bar)
    mean = blues[:, keep_arr].mean(axis=0)
    geno_scores = (blues[:, keep_arr] - mean) @ proj
    plot_scores = (x[:, keep_arr] - mean) @ proj
    sel = best_subset(focal_means, geno_scores)
    plot_matrix = np.column_stack(
        [plot_scores[:, list(sel.selected)], dataset.focal[view.plot_rows]]
    )
    mt_cov = estimate_multitrait_cov(plot_matrix, view.plot_local)
    return TrainedModel(
        kind="concat",
        timepoint_indices=timepoint_indices,
        m_star_per_timepoint=(m_star,),
        modal_m=m_star,
        covariances=(pair,),
        loadings=(lam,),
        alignment=None,
        projections=(proj,),
        train_means=(mean,),
        candidate_labels=tuple(("concat", k) for k in range(m_star)),
        selection=sel,
        mt_cov=mt_cov,
        plot_matrix=plot_matrix,
        plot_local=view.plot_local,
        focal_variances=focal_var,
        focal_means_train=focal_means,
        concat_keep=tuple(keep),
    )


def _test_secondary_scores(dataset, trained: TrainedModel, test_gidx) -> np.ndarray:
    """Genotype-level test-set scores through the training-fitted projections."""
    design = dataset.design
    test_gidx = np.sort(np.asarray(test_gidx, dtype=int))
    mask = np.isin(design.plot_genotype, test_gidx)
    rows = np.nonzero(mask)[0]
    local = np.searchsorted(test_gidx, design.plot_genotype[rows])
    if trained.kind == "concat":
        x = np.hstack([dataset.secondary[rows, :, l] for l in trained.timepoint_indices])
        blues = _group_means(x, local, test_gidx.size)
        scores = (blues[:, np.asarray(trained.concat_keep)] - trained.train_means[0]) @ trained.projections[0]
    else:
        parts = []
        for pos, l in enumerate(trained.timepoint_indices):
            blues = _group_means(dataset.secondary[rows, :, l], local, test_gidx.size)
            parts.append((blues - trained.train_means[pos]) @ trained.projections[pos])
        scores = np.hstack(parts)
    return scores[:, list(trained.selection.selected)]


def predict_model(
    dataset: TrialDataset,
    trained: TrainedModel,
    partition: KinshipPartition,
    test_gidx,
    scenario: str,
    cv2_variant: str = "exact",
) -> BlupResult:
    """Test-genotype focal BLUPs for one trained model under one scenario."""
    r = float(dataset.design.replicate_count)
    if trained.kind == "uni" or (trained.mt_cov is not None and trained.mt_cov.n_factors == 0):
        sg, se = trained.focal_variances
        return univariate_gblup(trained.focal_means_train, (sg, se / r), partition)
    if scenario == "CV1":
        return cv1_predict(trained.plot_matrix, trained.plot_local, trained.mt_cov, partition)
    secondary_test = _test_secondary_scores(dataset, trained, test_gidx)
    return cv2_predict(
        trained.plot_matrix,
        trained.plot_local,
        secondary_test,
        trained.mt_cov,
        partition,
        r_test=r,
        variant=cv2_variant,
    )


def _run_replicate(dataset: TrialDataset, kinship: SymMatrix, plan: CvPlan, rep: int):
    design = dataset.design
    train_gidx, test_gidx = split_genotypes(design.n_genotypes, plan.train_fraction, plan.base_seed, rep)
    train_ids = [design.genotype_ids[i] for i in train_gidx]
    test_ids = [design.genotype_ids[i] for i in test_gidx]
    partition = partition_kinship(kinship, train_ids, test_ids)
    test_mask = np.isin(design.plot_genotype, test_gidx)
    rows_t = np.nonzero(test_mask)[0]
    local_t = np.searchsorted(test_gidx, design.plot_genotype[rows_t])
    observed = _group_means(dataset.focal[rows_t][:, None], local_t, test_gidx.size)[:, 0]
    pa_rows: list[PaRecord] = []
    sel_rows: list[SelectionRecord] = []
    pred_rows: list[PredictionRecord] = []
    for stage in plan.stage_subsets:
        tp_idx = design.stage_timepoint_indices(STAGE_SUBSETS[stage])
        for kind in plan.models:
            t0 = time.perf_counter()
            try:
                trained = fit_training_model(dataset, train_gidx, tp_idx, kind)
            except FactorBlupError as exc:
                msg = f"{type(exc).__name__}: {exc}"
                for scenario in plan.scenarios:
                    pa_rows.append(PaRecord(kind, scenario, stage, rep, None, msg))
                continue
            if trained.selection is not None:
                chosen = set(trained.selection.selected)
                for j, (tp, k) in enumerate(trained.candidate_labels):
                    sel_rows.append(SelectionRecord(rep, kind, stage, tp, k, j in chosen))
            for scenario in plan.scenarios:
                try:
                    result = predict_model(dataset, trained, partition, test_gidx, scenario, plan.cv2_variant)
                    pa = predictive_ability(result.g_hat_test, observed)
                    err = None
                    if rep == 0:
                        pred_rows.extend(
                            PredictionRecord(
                                gid, scenario, kind, stage, rep,
                                float(pred), float(obs),
                            )
                            for gid, pred, obs in zip(test_ids, result.g_hat_test, observed)
                        )
                except FactorBlupError as exc:
                    pa, err = None, f"{type(exc).__name__}: {exc}"
                pa_rows.append(
                    PaRecord(kind, scenario, stage, rep, pa, err, time.perf_counter() - t0)
                )
    return pa_rows, sel_rows, pred_rows


def _replicate_worker(args):
    dataset, kinship, plan, rep = args
    return rep, _run_replicate(dataset, kinship, plan, rep)


def run_cv(dataset: TrialDataset, plan: CvPlan, kinship: SymMatrix | None = None) -> CvReport:
    """Run the full cross-validation suite and collect a report.

    Per-replicate model failures are recorded with their reason and never
    abort the run. Replicates can run in a process pool; results merge in
    replicate order so the report is identical either way.
    """
    if kinship is None:
        if dataset.markers is None:
            raise DataValidationError("no markers and no precomputed kinship supplied")
        kinship = genomic_relationship(dataset.markers, labels=dataset.design.genotype_ids)
    report = CvReport(plan=plan)
    if plan.threads > 1 and plan.n_replicates > 1:
        with ProcessPoolExecutor(max_workers=plan.threads) as pool:
            results = list(
                pool.map(_replicate_worker, [(dataset, kinship, plan, rep) for rep in range(plan.n_replicates)])
            )
        results.sort(key=lambda x: x[0])
        for _, (pa_rows, sel_rows) in results:
            report.rows.extend(pa_rows)
            report.selection.extend(sel_rows)
    else:
        for rep in range(plan.n_replicates):
            pa_rows, sel_rows = _run_replicate(dataset, kinship, plan, rep)
            report.rows.extend(pa_rows)
            report.selection.extend(sel_rows)
            log.info("replicate %d/%d done", rep + 1, plan.n_replicates)
    if plan.full_fit_artifacts:
        try:
            report.artifacts = full_data_artifacts(dataset)
        except FactorBlupError as exc:
            log.warning("full-data artifact fit failed: %s", exc)
    return report


def full_data_artifacts(dataset: TrialDataset, target: str | float = "auto-heading", penalty="gcv") -> dict:
    """Loadings series, factor correlations and trajectories from a full-data fit."""
    design = dataset.design
    tau = design.n_timepoints
    all_idx = tuple(range(tau))
    view = _train_view(dataset, np.arange(design.n_genotypes))
    covs, blues_all, means = _fit_timepoint_covariances(dataset, view, all_idx)
    m_stars = []
    r_gs = []
    for pair in covs:
        r_g = cov_to_cor(pair.sigma_G)
        m_star, _ = select_dimension(r_g)
        m_stars.append(m_star)
        r_gs.append(r_g)
    modal = int(np.bincount(m_stars).argmax())
    models, loadings = [], []
    for r_g in r_gs:
        fm = fit_factor_model(r_g, modal)
        lam = sort_by_explained_variance(varimax(fm.loadings))
        models.append(replace_model_loadings(fm, lam))
        loadings.append(lam)
    if target == "auto-heading":
        tgt = _alignment_target(design, all_idx)
    else:
        tgt = int(np.argmin(np.abs(np.asarray(design.timepoints) - float(target))))
    alignment = align_series(loadings, tgt)
    series = score_series(dataset, models, covs, alignment=alignment)
    loadings_rows = []
    for pos, l in enumerate(all_idx):
        for phase, lam in (("varimax", loadings[pos]), ("aligned", alignment.aligned[pos])):
            for j, trait in enumerate(dataset.trait_labels):
                for k in range(modal):
                    loadings_rows.append(
                        {
                            "timepoint": design.timepoints[l], "phase": phase,
                            "trait": trait, "factor": k + 1, "loading": float(lam[j, k]),
                        }
                    )
    stacked = series.stacked_genotype_scores()
    corr = np.corrcoef(stacked, rowvar=False)
    corr_rows = []
    cols = [(design.timepoints[l], k + 1) for l in all_idx for k in range(modal)]
    for a in range(len(cols)):
        for b in range(len(cols)):
            corr_rows.append(
                {
                    "timepoint_a": cols[a][0], "factor_a": cols[a][1],
                    "timepoint_b": cols[b][0], "factor_b": cols[b][1],
                    "correlation": float(corr[a, b]),
                }
            )
    traj_rows = []
    if tau >= 2:
        fit = fit_trajectories(series, penalty=penalty)
        grid = np.linspace(design.timepoints[0], design.timepoints[-1], 50)
        basis = fit.basis(grid)
        for k in range(fit.n_factors):
            curves = basis @ (fit.pop_coefs[k][None, :] + fit.dev_coefs[k]).T
            for ci, gid in enumerate(design.genotype_ids):
                for ti, t in enumerate(grid):
                    traj_rows.append(
                        {
                            "genotype": gid, "factor": k + 1,
                            "time": float(t), "value": float(curves[ti, ci]),
                        }
                    )
    perm_rows = [
        {
            "timepoint": design.timepoints[l],
            "is_identity": alignment.permutations[pos].is_identity(),
            "permutation": alignment.permutations[pos].matrix.astype(int).tolist(),
        }
        for pos, l in enumerate(all_idx)
    ]
    return {
        "loadings_series": loadings_rows,
        "factor_correlations": corr_rows,
        "trajectories": traj_rows,
        "permutations": perm_rows,
        "m_star_per_timepoint": m_stars,
        "modal_m": modal,
    }


def concatenated_baseline(dataset: TrialDataset, train_gidx, timepoint_indices) -> TrainedModel:
    """Concatenated wavelength-timepoint baseline, exposed for direct use."""
    return fit_training_model(dataset, train_gidx, timepoint_indices, "concat")


# ---------------------------------------------------------------------------
# Report emission


def _write_csv(path, fieldnames, rows):
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def emit_reports(report: CvReport, out_dir) -> list[str]:
    """Write the report CSV files (plus report.json); returns the paths."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    paths = []

    def emit(name, fieldnames, rows):
        path = os.path.join(out_dir, name)
        _write_csv(path, fieldnames, rows)
        paths.append(path)

    emit(
        "pa_boxplot.csv",
        ["model", "scenario", "stage", "replicate", "pa"],
        [
            {
                "model": r.model, "scenario": r.scenario, "stage": r.stage,
                "replicate": r.replicate, "pa": "" if r.pa is None else repr(r.pa),
            }
            for r in report.rows
        ],
    )
    emit(
        "failures.csv",
        ["model", "scenario", "stage", "replicate", "error"],
        [
            {
                "model": r.model, "scenario": r.scenario, "stage": r.stage,
                "replicate": r.replicate, "error": r.error,
            }
            for r in report.rows
            if r.error
        ],
    )
    emit(
        "pa_summary.csv",
        ["model", "scenario", "stage", "n", "mean", "q25", "median", "q75"],
        report.summary(),
    )
    emit(
        "selection_incidence.csv",
        ["replicate", "model", "stage", "timepoint", "factor", "selected"],
        [
            {
                "replicate": s.replicate, "model": s.model, "stage": s.stage,
                "timepoint": s.timepoint, "factor": s.factor, "selected": int(s.selected),
            }
            for s in report.selection
        ],
    )
    art = report.artifacts or {}
    emit(
        "loadings_series.csv",
        ["timepoint", "phase", "trait", "factor", "loading"],
        art.get("loadings_series", []),
    )
    emit(
        "factor_correlations.csv",
        ["timepoint_a", "factor_a", "timepoint_b", "factor_b", "correlation"],
        art.get("factor_correlations", []),
    )
    emit(
        "trajectories.csv",
        ["genotype", "factor", "time", "value"],
        art.get("trajectories", []),
    )
    json_path = os.path.join(out_dir, "report.json")
    with open(json_path, "w") as fh:
        json.dump(report_to_dict(report), fh)
    paths.append(json_path)
    return paths


def report_to_dict(report: CvReport) -> dict:
    return {
        "plan": {
            "n_replicates": report.plan.n_replicates,
            "train_fraction": report.plan.train_fraction,
            "scenarios": list(report.plan.scenarios),
            "stage_subsets": list(report.plan.stage_subsets),
            "models": list(report.plan.models),
            "base_seed": report.plan.base_seed,
            "cv2_variant": report.plan.cv2_variant,
            "full_fit_artifacts": report.plan.full_fit_artifacts,
            "threads": report.plan.threads,
        },
        "rows": [
            {
                "model": r.model, "scenario": r.scenario, "stage": r.stage,
                "replicate": r.replicate, "pa": r.pa, "error": r.error, "runtime": r.runtime,
            }
            for r in report.rows
        ],
        "selection": [
            {
                "replicate": s.replicate, "model": s.model, "stage": s.stage,
                "timepoint": s.timepoint, "factor": s.factor, "selected": s.selected,
            }
            for s in report.selection
        ],
        "artifacts": report.artifacts,
    }


def report_from_dict(data: dict) -> CvReport:
    plan = CvPlan(
        n_replicates=data["plan"]["n_replicates"],
        train_fraction=data["plan"]["train_fraction"],
        scenarios=tuple(data["plan"]["scenarios"]),
        stage_subsets=tuple(data["plan"]["stage_subsets"]),
        models=tuple(data["plan"]["models"]),
        base_seed=data["plan"]["base_seed"],
        cv2_variant=data["plan"]["cv2_variant"],
        full_fit_artifacts=data["plan"]["full_fit_artifacts"],
        threads=data["plan"]["threads"],
    )
    report = CvReport(plan=plan)
    report.rows = [PaRecord(**row) for row in data["rows"]]
    report.selection = [SelectionRecord(**row) for row in data["selection"]]
    report.artifacts = data.get("artifacts") or {}
    return report
