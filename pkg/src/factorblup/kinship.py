"""Marker-based genomic relationship matrix and its train/test partitions."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import SymMatrix
from .errors import DataValidationError, PartitionError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class KinshipPartition:
    """Training/cross/test blocks of one kinship matrix.

    k_o is the training block, k_u the test block and k_uo the
    test-by-training cross block, all in the order of train_ids/test_ids.
    """

    k_o: np.ndarray
    k_uo: np.ndarray
    k_u: np.ndarray
    train_ids: tuple[str, ...]
    test_ids: tuple[str, ...]

    @property
    def n_train(self) -> int:
        return len(self.train_ids)

    @property
    def n_test(self) -> int:
        return len(self.test_ids)


def genomic_relationship(
    markers: np.ndarray,
    maf_min: float = 0.01,
    ridge: float = 1e-6,
    labels: tuple[str, ...] | None = None,
) -> SymMatrix:
    """VanRaden genomic relationship matrix from {0,1,2} marker codes.

    Markers with minor allele frequency below maf_min or zero variance are
    dropped; the remaining codes are centered by twice the allele frequency
    and K = W W' / (2 sum p_k (1 - p_k)). A small ridge keeps K invertible
    for the downstream solves.
    """
    m = np.asarray(markers, dtype=float)
    if m.ndim != 2 or m.shape[1] < 1:
        raise DataValidationError("marker matrix must be 2-d with at least one column")
    if np.any((m != 0.0) & (m != 1.0) & (m != 2.0)):
        raise DataValidationError("marker codes must be in {0, 1, 2}")
    p = m.mean(axis=0) / 2.0
    maf = np.minimum(p, 1.0 - p)
    keep = (maf >= maf_min) & (m.var(axis=0) > 0.0)
    if not np.any(keep):
        raise DataValidationError(
            f"all {m.shape[1]} markers filtered out (maf_min={maf_min})"
        )
    m = m[:, keep]
    p = p[keep]
    w = m - 2.0 * p
    denom = 2.0 * float(np.sum(p * (1.0 - p)))
    k = (w @ w.T) / denom
    k = (k + k.T) / 2.0
    if ridge:
        k[np.diag_indices_from(k)] += ridge
    log.debug("kinship: kept %d/%d markers, mean diag %.3f", m.shape[1], keep.size, np.mean(np.diag(k)))
    return SymMatrix(k, kind="kinship", labels=labels)


def partition_kinship(k: SymMatrix, train_ids, test_ids) -> KinshipPartition:
    """Extract the K_o / K_uo / K_u blocks for a genotype split.

    Ids must name rows of k (via its labels, or be integer indices when k
    is unlabeled); train and test sets must be disjoint.
    """
    train_ids = tuple(train_ids)
    test_ids = tuple(test_ids)
    overlap = set(train_ids) & set(test_ids)
    if overlap:
        raise PartitionError(f"train/test overlap: {sorted(overlap)[:5]}")
    if k.labels is not None:
        index = {gid: i for i, gid in enumerate(k.labels)}
        try:
            tr = np.array([index[g] for g in train_ids], dtype=int)
            te = np.array([index[g] for g in test_ids], dtype=int)
        except KeyError as exc:
            raise PartitionError(f"unknown genotype id {exc.args[0]!r}") from None
    else:
        tr = np.asarray(train_ids, dtype=int)
        te = np.asarray(test_ids, dtype=int)
        if tr.size and te.size:
            lo, hi = min(tr.min(), te.min()), max(tr.max(), te.max())
            if lo < 0 or hi >= k.dim:
                raise PartitionError("integer id outside kinship dimension")
    v = k.values
    k_o = v[np.ix_(tr, tr)]
    k_uo = v[np.ix_(te, tr)]
    k_u = v[np.ix_(te, te)]
    if k_o.size:
        eigs = np.linalg.eigvalsh(k_o)
        cond = float(eigs[-1] / eigs[0]) if eigs[0] > 0 else np.inf
        log.debug("K_o condition number %.3e", cond)
    return KinshipPartition(k_o, k_uo, k_u, tuple(map(str, train_ids)), tuple(map(str, test_ids)))
