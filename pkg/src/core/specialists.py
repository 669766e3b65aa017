from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Literal, Sequence

import numpy as np
from scipy import sparse

from .dataset import Example, to_csr
from .errors import DimensionMismatch, PartitionViolation, ZeroCoverageRow
from .forest import Forest

if TYPE_CHECKING:
    from .model import Model

logger = logging.getLogger(__name__)


@dataclass(frozen=True, order=True)
class RowKey:
    """Identity of an ensemble row: a whole tree, or one leaf of a tree."""

    kind: Literal["tree", "leaf"]
    tree: int
    leaf: int = -1

    @classmethod
    def for_tree(cls, tree: int) -> "RowKey":
        return cls("tree", tree)

    @classmethod
    def for_leaf(cls, tree: int, leaf: int) -> "RowKey":
        return cls("leaf", tree, leaf)

    def to_list(self) -> list:
        return [self.kind, self.tree, self.leaf]

    @classmethod
    def from_list(cls, item: Sequence) -> "RowKey":
        kind, tree, leaf = item
        if kind not in ("tree", "leaf"):
            raise ValueError(f"unknown row kind {kind!r}")
        return cls(kind, int(tree), int(leaf))


@dataclass(frozen=True)
class RowSpec:
    """
    One row's realized behaviour on the unlabeled set.

    `columns` are the (sorted) unlabeled indices where the row is awake, i.e. v = 1 there
    and 0 elsewhere; `h` holds the row's predictions on exactly those columns.
    """

    key: RowKey
    columns: np.ndarray
    h: np.ndarray

    def __post_init__(self) -> None:
        if self.columns.shape != self.h.shape:
            raise DimensionMismatch("columns and h must have the same length")

    @property
    def coverage(self) -> int:
        return int(self.columns.size)

    def participation(self, n: int) -> np.ndarray:
        v = np.zeros(n, dtype=np.float64)
        v[self.columns] = 1.0
        return v


@dataclass(frozen=True)
class SpecialistMatrix:
    """
    The sparse matrix S (rows x n) with S_ij = n * rho_i(x_j) * h_i(x_j).

    `row_scale[i] = n / coverage_i` is kept so a model can score points outside the
    unlabeled set. Stored entries are exactly the awake (row, column) pairs, explicit
    zeros included.
    """

    keys: tuple[RowKey, ...]
    n: int
    matrix: sparse.csr_matrix
    row_scale: np.ndarray

    @property
    def num_rows(self) -> int:
        return len(self.keys)

    @property
    def nnz(self) -> int:
        return int(self.matrix.indptr[-1])

    def coverage(self) -> np.ndarray:
        return np.diff(self.matrix.indptr)

    def row_norms(self) -> np.ndarray:
        owner = np.repeat(np.arange(self.num_rows), self.coverage())
        squares = np.bincount(owner, weights=self.matrix.data**2, minlength=self.num_rows)
        return np.sqrt(squares)

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def subset(self, keep: np.ndarray) -> "SpecialistMatrix":
        """Rows `keep` (increasing indices), order preserved."""
        keep = np.asarray(keep, dtype=np.int64)
        return SpecialistMatrix(
            keys=tuple(self.keys[i] for i in keep),
            n=self.n,
            matrix=_take_rows(self.matrix, keep),
            row_scale=self.row_scale[keep].copy(),
        )

    def dump_coordinates(self, path: str | Path) -> None:
        """Write `row col value` lines (coordinate format) for debugging."""
        csr = self.matrix
        with Path(path).open("w", encoding="utf-8") as fh:
            for i in range(self.num_rows):
                for k in range(csr.indptr[i], csr.indptr[i + 1]):
                    fh.write(f"{i} {int(csr.indices[k])} {float(csr.data[k])!r}\n")
        logger.info("wrote %d coordinates of S to %s", self.nnz, path)

    @classmethod
    def from_dense(cls, F: np.ndarray) -> "SpecialistMatrix":
        """Uniform participation: every row awake everywhere, so S equals F."""
        F = np.asarray(F, dtype=np.float64)
        if F.ndim != 2:
            raise DimensionMismatch("F must be a 2-D array (rows x examples)")
        n = F.shape[1]
        rows = [
            RowSpec(RowKey.for_tree(i), np.arange(n), F[i].copy()) for i in range(F.shape[0])
        ]
        return assemble(rows, n)


def _take_rows(csr: sparse.csr_matrix, keep: np.ndarray) -> sparse.csr_matrix:
    # Built by hand so explicit zeros survive (fancy indexing may drop them).
    starts = csr.indptr[keep]
    ends = csr.indptr[keep + 1]
    lengths = ends - starts
    pick = np.concatenate([np.arange(s, e) for s, e in zip(starts, ends)]) if keep.size else (
        np.empty(0, dtype=np.int64)
    )
    indptr = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
    return sparse.csr_matrix(
        (csr.data[pick], csr.indices[pick], indptr), shape=(keep.size, csr.shape[1])
    )


# =======================
# Construction
# =======================

def build_rows(forest: Forest, X_unlabeled: sparse.spmatrix | np.ndarray) -> list[RowSpec]:
    """
    One tree row per tree, followed by that tree's covered leaves.

    Tree rows predict the soft leaf mean and are awake everywhere; leaf rows predict the
    sign of their leaf mean and are awake exactly on the unlabeled points routed to them.
    Leaves that receive no unlabeled point are left out.
    """
    n = X_unlabeled.shape[0]
    if n == 0:
        raise ValueError("the unlabeled set is empty")
    everywhere = np.arange(n)
    rows: list[RowSpec] = []
    for t, tree in enumerate(forest.trees):
        ids = tree.apply(X_unlabeled)
        rows.append(RowSpec(RowKey.for_tree(t), everywhere, tree.value[ids]))
        order = np.argsort(ids, kind="stable")
        leaves, starts, counts = np.unique(ids[order], return_index=True, return_counts=True)
        for leaf, start, count in zip(leaves, starts, counts):
            cols = np.sort(order[start:start + count])
            vote = tree.leaf_vote(int(leaf))
            rows.append(RowSpec(RowKey.for_leaf(t, int(leaf)), cols, np.full(count, vote)))
        logger.debug("tree %d: %d of %d leaves covered", t, leaves.size, tree.leaf_ids.size)
    return rows


def assemble(rows: Sequence[RowSpec], n: int) -> SpecialistMatrix:
    """Stack rows into S, scaling each by n / coverage."""
    indptr = [0]
    indices: list[np.ndarray] = []
    data: list[np.ndarray] = []
    scale = np.empty(len(rows), dtype=np.float64)
    for i, row in enumerate(rows):
        if row.coverage == 0:
            raise ZeroCoverageRow(f"row {row.key} is awake on no unlabeled example")
        if row.columns.min() < 0 or row.columns.max() >= n:
            raise DimensionMismatch(f"row {row.key} has columns outside 0..{n - 1}")
        scale[i] = n / row.coverage
        indices.append(np.asarray(row.columns, dtype=np.int64))
        data.append(scale[i] * np.asarray(row.h, dtype=np.float64))
        indptr.append(indptr[-1] + row.coverage)
    matrix = sparse.csr_matrix(
        (
            np.concatenate(data) if data else np.empty(0),
            np.concatenate(indices) if indices else np.empty(0, dtype=np.int64),
            np.asarray(indptr, dtype=np.int64),
        ),
        shape=(len(rows), n),
    )
    return SpecialistMatrix(keys=tuple(r.key for r in rows), n=n, matrix=matrix, row_scale=scale)


def check_tree_partition(S: SpecialistMatrix) -> None:
    """Each tree's leaf rows must store exactly n entries: every point sits in one leaf."""
    coverage = S.coverage()
    per_tree: dict[int, int] = {}
    for key, cov in zip(S.keys, coverage):
        if key.kind == "leaf":
            per_tree[key.tree] = per_tree.get(key.tree, 0) + int(cov)
    for tree, total in per_tree.items():
        if total != S.n:
            raise PartitionViolation(
                f"tree {tree}: leaf rows store {total} entries, expected {S.n}"
            )


# =======================
# Awake ensemble prediction
# =======================

def awake_prediction(S: SpecialistMatrix, sigma: np.ndarray) -> np.ndarray:
    """
    S^T sigma by one pass over the stored entries.

    Entries are accumulated per column in row order; `awake_predictions_out_of_sample`
    follows the same order, which makes the two agree bit for bit.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.shape != (S.num_rows,):
        raise DimensionMismatch(f"sigma has shape {sigma.shape}, expected ({S.num_rows},)")
    weights = S.matrix.data * np.repeat(sigma, S.coverage())
    return np.bincount(S.matrix.indices, weights=weights, minlength=S.n).astype(np.float64)


def awake_predictions_out_of_sample(
    model: "Model", X: sparse.spmatrix | np.ndarray
) -> np.ndarray:
    """
    Awake prediction for arbitrary points: sum over awake rows of sigma_i * scale_i * h_i(x).

    Tree rows are awake everywhere (their scale is 1); leaf rows are awake where the point
    routes to their leaf.
    """
    leaf_ids = model.forest.apply(X)
    out = np.zeros(X.shape[0], dtype=np.float64)
    for i, key in enumerate(model.keys):
        weight = model.sigma[i]
        if weight == 0.0:
            continue
        tree = model.forest.trees[key.tree]
        ids = leaf_ids[key.tree]
        if key.kind == "tree":
            out += (model.row_scale[i] * tree.value[ids]) * weight
        else:
            awake = ids == key.leaf
            out[awake] += (model.row_scale[i] * tree.leaf_vote(key.leaf)) * weight
    return out


def awake_prediction_out_of_sample(model: "Model", example: Example) -> float:
    """Single-point form of `awake_predictions_out_of_sample`."""
    X = to_csr([example], model.forest.n_features)
    return float(awake_predictions_out_of_sample(model, X)[0])
