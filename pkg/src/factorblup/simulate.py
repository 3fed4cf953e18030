"""Ground-truth trial simulator.

Generates markers, a marker-based kinship, kinship-structured genetic
effects with a planted per-timepoint factor structure, a focal trait
genetically correlated with the factor scores, and replicated plot
noise. Everything is driven by one seeded generator with a fixed draw
order, so identical configs give bitwise-identical datasets.

Planted "label switches" are realized as block strength crossovers: a
pure signed-permutation relabel of loadings and scores is statistically
invisible, but swapping which block explains the most variance flips the
fitted factor order at those timepoints, which is exactly the phenomenon
the alignment stage has to undo. The truth record stores the planted
signed permutation per switched timepoint.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import TrialDataset, TrialDesign
from .errors import DataValidationError
from .kinship import genomic_relationship

DEFAULT_STAGE_SPLIT = (0.4, 0.3)  # fraction vegetative, fraction heading


def default_stage_labels(tau: int) -> tuple[str, ...]:
    """First 40% of timepoints vegetative, next 30% heading, rest grain-filling."""
    n_veg = max(1, int(np.floor(DEFAULT_STAGE_SPLIT[0] * tau)))
    n_head = max(1, int(np.floor(DEFAULT_STAGE_SPLIT[1] * tau)))
    labels = ["vegetative"] * n_veg + ["heading"] * n_head
    labels += ["grain-filling"] * (tau - len(labels))
    return tuple(labels[:tau])


@dataclass(frozen=True)
class SimConfig:
    """Full description of a synthetic trial; the seed is mandatory."""

    g: int
    s: int
    r: int
    tau: int
    p: int
    seed: int
    factor_blocks: tuple[tuple[int, ...], ...]
    strengths: np.ndarray                       # (tau, m) block loading per timepoint
    rho: tuple[float, ...]                      # genetic corr of focal with each factor
    h2_focal: float
    h2_secondary: float = 0.8
    sigma_E: object | None = None               # scalar or (s, s); default from h2_secondary
    psi0: np.ndarray | None = None              # default 1 - communality (correlation scale)
    label_switches: dict = field(default_factory=dict)   # timepoint -> signed permutation
    n_families: int | None = None
    focal_mean: float = 5.6
    timepoints: tuple[float, ...] | None = None
    stage_labels: tuple[str, ...] | None = None
    trait_labels: tuple[str, ...] | None = None

    def __post_init__(self):
        strengths = np.atleast_2d(np.asarray(self.strengths, dtype=float))
        m = len(self.factor_blocks)
        if strengths.shape != (self.tau, m):
            raise DataValidationError(
                f"strengths shape {strengths.shape} must be (tau={self.tau}, m={m})"
            )
        if np.any(np.abs(strengths) > 1.0):
            raise DataValidationError("block strengths must lie in [-1, 1] (correlation scale)")
        used = [j for block in self.factor_blocks for j in block]
        if len(set(used)) != len(used) or (used and max(used) >= self.s):
            raise DataValidationError("factor blocks must be disjoint subsets of trait indices")
        if len(self.rho) != m:
            raise DataValidationError(f"need one genetic correlation per factor, got {len(self.rho)}")
        if not (0.0 <= self.h2_focal <= 1.0 and 0.0 <= self.h2_secondary <= 1.0):
            raise DataValidationError("heritabilities must lie in [0, 1]")
        if sum(v * v for v in self.rho) > 1.0:
            raise DataValidationError(
                "sum of squared focal-factor correlations exceeds 1; "
                "implied joint genetic covariance is not PSD"
            )
        for l, perm in self.label_switches.items():
            p = np.asarray(perm, dtype=float)
            if not (0 <= int(l) < self.tau):
                raise DataValidationError(f"label switch at unknown timepoint {l}")
            ok = p.shape == (m, m) and np.all(np.isin(p, (-1.0, 0.0, 1.0)))
            ok = ok and np.allclose(p.T @ p, np.eye(m))
            if not ok:
                raise DataValidationError(f"label switch at timepoint {l} is not a signed permutation")
        object.__setattr__(self, "strengths", strengths)

    @property
    def m(self) -> int:
        return len(self.factor_blocks)

    def base_loadings(self, l: int) -> np.ndarray:
        """Loadings with column k loading block k at timepoint l's strength."""
        lam = np.zeros((self.s, self.m))
        for k, block in enumerate(self.factor_blocks):
            lam[list(block), k] = self.strengths[l, k]
        return lam

    def true_loadings(self, l: int) -> np.ndarray:
        """Base loadings with the planted relabeling applied."""
        lam = self.base_loadings(l)
        perm = self.label_switches.get(l)
        return lam if perm is None else lam @ np.asarray(perm, dtype=float)

    def uniquenesses(self, l: int) -> np.ndarray:
        if self.psi0 is not None:
            psi = np.asarray(self.psi0, dtype=float)
        else:
            psi = 1.0 - np.sum(self.base_loadings(l) ** 2, axis=1)
        if np.any(psi <= 0.0):
            raise DataValidationError("uniquenesses must be positive; lower the block strengths")
        return psi

    def residual_cov(self, l: int) -> np.ndarray:
        if self.sigma_E is None:
            var = self.r * (1.0 / self.h2_secondary - 1.0) if self.h2_secondary > 0 else 0.0
            return var * np.eye(self.s)
        se = self.sigma_E
        if np.ndim(se) == 0:
            return float(se) * np.eye(self.s)
        se = np.asarray(se, dtype=float)
        if se.ndim == 2:
            return se
        return np.asarray(se[l], dtype=float)


@dataclass(frozen=True)
class SimTruth:
    """Everything the generator knew: effects, scores, loadings, covariances."""

    kinship: np.ndarray
    scores: np.ndarray                          # (g, m), shared across timepoints
    focal_genetic: np.ndarray                   # (g,)
    genetic_values: tuple[np.ndarray, ...]      # per timepoint (g, s)
    loadings: tuple[np.ndarray, ...]            # per timepoint, switches applied
    scores_per_timepoint: tuple[np.ndarray, ...]
    permutations: dict
    sigma_G: tuple[np.ndarray, ...]
    sigma_E: tuple[np.ndarray, ...]
    rho: tuple[float, ...]
    focal_residual_var: float


def _psd_sqrt(a: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        w, q = np.linalg.eigh(a)
        return q * np.sqrt(np.maximum(w, 0.0))


def _simulate_markers(cfg: SimConfig, rng: np.random.Generator) -> np.ndarray:
    freqs = rng.uniform(0.05, 0.5, size=cfg.p)
    if not cfg.n_families:
        return rng.binomial(2, freqs[None, :], size=(cfg.g, cfg.p)).astype(float)
    fam_of = np.arange(cfg.g) % cfg.n_families
    parent = rng.binomial(2, freqs[None, :], size=(cfg.n_families, cfg.p)).astype(float)
    from_parent = rng.binomial(1, parent[fam_of] / 2.0)
    from_pop = rng.binomial(1, freqs[None, :], size=(cfg.g, cfg.p))
    return (from_parent + from_pop).astype(float)


def simulate_trial(cfg: SimConfig) -> tuple[TrialDataset, SimTruth]:
    """Generate one trial dataset plus its ground-truth record.

    Draw order (fixed for reproducibility): marker frequencies and codes,
    factor scores, focal genetic residual, then per timepoint the unique
    genetic part and the plot noise, and finally the focal plot noise.
    """
    rng = np.random.default_rng(cfg.seed)
    markers = _simulate_markers(cfg, rng)
    k = genomic_relationship(markers).values
    l_k = _psd_sqrt(k)
    scores = l_k @ rng.standard_normal((cfg.g, cfg.m))
    rho = np.asarray(cfg.rho, dtype=float)
    resid_var = 1.0 - float(rho @ rho)
    focal_genetic = scores @ rho + np.sqrt(resid_var) * (l_k @ rng.standard_normal(cfg.g))

    n = cfg.g * cfg.r
    plot_genotype = np.repeat(np.arange(cfg.g), cfg.r)
    plot_replicate = np.tile(np.arange(1, cfg.r + 1), cfg.g)
    timepoints = cfg.timepoints or tuple(float(7 * l) for l in range(cfg.tau))
    stages = cfg.stage_labels or default_stage_labels(cfg.tau)
    if cfg.trait_labels is not None:
        trait_labels = cfg.trait_labels
    else:
        trait_labels = tuple(f"wl_{385.0 + 7.5 * j:g}" for j in range(cfg.s))

    secondary = np.empty((n, cfg.s, cfg.tau))
    genetic_values, loadings, scores_pt, sig_g, sig_e = [], [], [], [], []
    spectrum_mean = 0.2 + 0.2 * np.sin(np.linspace(0.0, np.pi, cfg.s))
    for l in range(cfg.tau):
        base = cfg.base_loadings(l)
        psi = cfg.uniquenesses(l)
        g_l = scores @ base.T + (l_k @ rng.standard_normal((cfg.g, cfg.s))) * np.sqrt(psi)[None, :]
        se = cfg.residual_cov(l)
        noise = rng.standard_normal((n, cfg.s)) @ _psd_sqrt(se).T
        secondary[:, :, l] = spectrum_mean[None, :] + g_l[plot_genotype] + noise
        perm = cfg.label_switches.get(l)
        p = np.asarray(perm, dtype=float) if perm is not None else np.eye(cfg.m)
        genetic_values.append(g_l)
        loadings.append(base @ p)
        scores_pt.append(scores @ p)
        sig_g.append(base @ base.T + np.diag(psi))
        sig_e.append(se)

    sigma_Ef = cfg.r * (1.0 / cfg.h2_focal - 1.0) if cfg.h2_focal > 0 else None
    if cfg.h2_focal == 0.0:
        # Focal independent of everything genetic; unit plot noise.
        focal = cfg.focal_mean + rng.standard_normal(n)
        focal_g = np.zeros(cfg.g)
    else:
        focal = cfg.focal_mean + focal_genetic[plot_genotype] + np.sqrt(sigma_Ef) * rng.standard_normal(n)
        focal_g = focal_genetic

    design = TrialDesign(
        genotype_ids=tuple(f"G{i + 1:05d}" for i in range(cfg.g)),
        replicate_count=cfg.r,
        plot_genotype=plot_genotype,
        plot_replicate=plot_replicate,
        timepoints=tuple(timepoints),
        stage_labels=tuple(stages),
    )
    dataset = TrialDataset(
        design=design,
        secondary=secondary,
        focal=focal,
        trait_labels=trait_labels,
        markers=markers,
    )
    truth = SimTruth(
        kinship=k,
        scores=scores,
        focal_genetic=focal_g,
        genetic_values=tuple(genetic_values),
        loadings=tuple(loadings),
        scores_per_timepoint=tuple(scores_pt),
        permutations=dict(cfg.label_switches),
        sigma_G=tuple(sig_g),
        sigma_E=tuple(sig_e),
        rho=tuple(cfg.rho),
        focal_residual_var=float(sigma_Ef if sigma_Ef is not None else 1.0),
    )
    return dataset, truth


def preset_cimmyt_like(seed: int = 2015) -> SimConfig:
    """Trial-sized preset: 1033 genotypes, 62 wavebands, 3 replicates, 10 timepoints.

    Two factors split the spectrum at 700 nm; the last two timepoints
    carry a planted factor switch via a block strength crossover. The
    focal trait has heritability 0.61.
    """
    s = 62
    wavelengths = [385.0 + 7.5 * j for j in range(s)]
    block_a = tuple(j for j, wl in enumerate(wavelengths) if wl < 700.0)
    block_b = tuple(j for j, wl in enumerate(wavelengths) if wl >= 700.0)
    tau = 10
    strengths = np.tile([0.85, 0.80], (tau, 1))
    strengths[8:] = [0.55, 0.85]
    swap = np.array([[0.0, 1.0], [1.0, 0.0]])
    return SimConfig(
        g=1033,
        s=s,
        r=3,
        tau=tau,
        p=8519,
        seed=seed,
        factor_blocks=(block_a, block_b),
        strengths=strengths,
        rho=(0.6, 0.35),
        h2_focal=0.61,
        h2_secondary=0.8,
        label_switches={8: swap, 9: swap},
        n_families=103,
        trait_labels=tuple(f"{wl:g}nm" for wl in wavelengths),
    )
