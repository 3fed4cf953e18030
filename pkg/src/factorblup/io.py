"""CSV ingestion and emission plus the flat key-value config format.

A dataset directory holds:
  phenotype.csv   long format: plot_id, genotype, replicate, timepoint, trait, value
  focal.csv       plot_id, genotype, replicate, value  (plot order defines row order)
  markers.csv     genotype, <marker columns with 0/1/2 codes>
  timepoints.csv  timepoint, stage
  kinship.csv     optional precomputed g-by-g kinship with genotype-id header

All files are UTF-8 with a header row and '.' decimal separator. Cells
must be complete: ingestion rejects missing plot/trait/timepoint
combinations rather than imputing.
"""

from __future__ import annotations

import os

import numpy as np
import pandas as pd

from .core import SymMatrix, TrialDataset, TrialDesign
from .errors import DataValidationError

PHENOTYPE_FILE = "phenotype.csv"
FOCAL_FILE = "focal.csv"
MARKERS_FILE = "markers.csv"
TIMEPOINTS_FILE = "timepoints.csv"
KINSHIP_FILE = "kinship.csv"


def write_dataset(dataset: TrialDataset, out_dir: str) -> None:
    """Write a dataset to the directory layout read_dataset understands."""
    os.makedirs(out_dir, exist_ok=True)
    design = dataset.design
    n, s, tau = dataset.secondary.shape
    plot_ids = [f"P{i + 1:06d}" for i in range(n)]
    genotypes = [design.genotype_ids[g] for g in design.plot_genotype]

    focal = pd.DataFrame(
        {
            "plot_id": plot_ids,
            "genotype": genotypes,
            "replicate": design.plot_replicate,
            "value": dataset.focal,
        }
    )
    focal.to_csv(os.path.join(out_dir, FOCAL_FILE), index=False)

    long = pd.DataFrame(
        {
            "plot_id": np.repeat(plot_ids, s * tau),
            "genotype": np.repeat(genotypes, s * tau),
            "replicate": np.repeat(design.plot_replicate, s * tau),
            "timepoint": np.tile(np.asarray(design.timepoints), n * s),
            "trait": np.tile(np.repeat(dataset.trait_labels, tau), n),
            "value": dataset.secondary.ravel(),
        }
    )
    long.to_csv(os.path.join(out_dir, PHENOTYPE_FILE), index=False)

    pd.DataFrame(
        {"timepoint": design.timepoints, "stage": design.stage_labels}
    ).to_csv(os.path.join(out_dir, TIMEPOINTS_FILE), index=False)

    if dataset.markers is not None:
        mk = pd.DataFrame(dataset.markers.astype(int))
        mk.columns = [f"m{j + 1}" for j in range(mk.shape[1])]
        mk.insert(0, "genotype", design.genotype_ids)
        mk.to_csv(os.path.join(out_dir, MARKERS_FILE), index=False)


def read_dataset(data_dir: str) -> TrialDataset:
    """Read a dataset directory back into a TrialDataset, validating completeness."""
    focal_path = os.path.join(data_dir, FOCAL_FILE)
    pheno_path = os.path.join(data_dir, PHENOTYPE_FILE)
    if not (os.path.exists(focal_path) and os.path.exists(pheno_path)):
        raise DataValidationError(f"{data_dir} lacks {FOCAL_FILE} or {PHENOTYPE_FILE}")
    focal = pd.read_csv(focal_path, dtype={"genotype": str, "plot_id": str}, float_precision="round_trip")
    for col in ("plot_id", "genotype", "replicate", "value"):
        if col not in focal.columns:
            raise DataValidationError(f"{FOCAL_FILE} lacks column {col!r}")
    plot_ids = focal["plot_id"].tolist()
    if len(set(plot_ids)) != len(plot_ids):
        raise DataValidationError("duplicate plot ids in focal.csv")
    genotype_ids = list(dict.fromkeys(focal["genotype"]))
    gindex = {g: i for i, g in enumerate(genotype_ids)}
    plot_genotype = np.array([gindex[g] for g in focal["genotype"]], dtype=int)

    tp_path = os.path.join(data_dir, TIMEPOINTS_FILE)
    pheno = pd.read_csv(
        pheno_path, dtype={"genotype": str, "plot_id": str, "trait": str}, float_precision="round_trip"
    )
    for col in ("plot_id", "timepoint", "trait", "value"):
        if col not in pheno.columns:
            raise DataValidationError(f"{PHENOTYPE_FILE} lacks column {col!r}")
    timepoints = np.sort(pheno["timepoint"].unique()).astype(float)
    if os.path.exists(tp_path):
        tp = pd.read_csv(tp_path)
        tp = tp.sort_values("timepoint")
        if not np.allclose(tp["timepoint"].astype(float).to_numpy(), timepoints):
            raise DataValidationError("timepoints.csv disagrees with phenotype.csv timepoints")
        stages = tuple(tp["stage"])
    else:
        from .simulate import default_stage_labels

        stages = default_stage_labels(timepoints.size)

    traits = list(dict.fromkeys(pheno["trait"]))
    n, s, tau = len(plot_ids), len(traits), timepoints.size
    pivot = pheno.pivot_table(
        index="plot_id", columns=["trait", "timepoint"], values="value", aggfunc="first"
    )
    expected = s * tau
    if pivot.shape[1] != expected or pivot.isna().any().any():
        raise DataValidationError(
            "phenotype.csv has missing plot/trait/timepoint cells; ingestion rejects incomplete data"
        )
    pivot = pivot.reindex(plot_ids)
    if pivot.isna().any().any():
        raise DataValidationError("phenotype.csv lacks rows for some plots in focal.csv")
    secondary = np.empty((n, s, tau))
    for j, trait in enumerate(traits):
        block = pivot[trait]
        block = block.reindex(columns=sorted(block.columns, key=float))
        secondary[:, j, :] = block.to_numpy(dtype=float)

    markers = None
    mk_path = os.path.join(data_dir, MARKERS_FILE)
    if os.path.exists(mk_path):
        mk = pd.read_csv(mk_path, dtype={"genotype": str}, float_precision="round_trip")
        mk = mk.set_index("genotype")
        missing = [g for g in genotype_ids if g not in mk.index]
        if missing:
            raise DataValidationError(f"markers.csv lacks genotypes {missing[:5]}")
        markers = mk.loc[genotype_ids].to_numpy(dtype=float)

    design = TrialDesign(
        genotype_ids=tuple(genotype_ids),
        replicate_count=int(np.bincount(plot_genotype).max()),
        plot_genotype=plot_genotype,
        plot_replicate=focal["replicate"].to_numpy(dtype=int),
        timepoints=tuple(timepoints),
        stage_labels=stages,
    )
    return TrialDataset(
        design=design,
        secondary=secondary,
        focal=focal["value"].to_numpy(dtype=float),
        trait_labels=tuple(traits),
        markers=markers,
    )


def read_kinship(path: str) -> SymMatrix:
    """Precomputed kinship CSV: square matrix with genotype ids as header and first column."""
    df = pd.read_csv(path, index_col=0, float_precision="round_trip")
    ids = tuple(str(c) for c in df.columns)
    if tuple(str(i) for i in df.index) != ids:
        raise DataValidationError("kinship.csv rows and columns disagree")
    return SymMatrix(df.to_numpy(dtype=float), kind="kinship", labels=ids)


def write_kinship(k: SymMatrix, path: str) -> None:
    ids = k.labels or tuple(str(i) for i in range(k.dim))
    pd.DataFrame(k.values, index=ids, columns=ids).to_csv(path)


def parse_config(path: str) -> dict[str, str]:
    """Flat key = value config file; '#' starts a comment, blank lines ignored."""
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataValidationError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def config_get(cfg: dict, key: str, cast, default=None):
    if key not in cfg:
        if default is None:
            raise DataValidationError(f"config lacks required key {key!r}")
        return default
    raw = cfg[key]
    try:
        if cast is bool:
            return raw.lower() in ("1", "true", "yes", "on")
        return cast(raw)
    except ValueError as exc:
        raise DataValidationError(f"config key {key!r}: cannot parse {raw!r}") from exc
