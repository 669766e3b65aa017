from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterator

import numpy as np
from joblib import Parallel, delayed
from scipy import sparse

from src.config import ForestConfig
from .dataset import Example

logger = logging.getLogger(__name__)

LeafId = int

_LEAF = -1
_ROUTE_CHUNK = 4096
# Weighted-Gini improvements below this are treated as float noise, not as a gain.
_MIN_GAIN = 1e-12


@dataclass(frozen=True)
class InternalNode:
    feature: int          # 0-based column; the 1-based feature index is feature + 1
    threshold: float      # x[feature] <= threshold goes left
    left: int
    right: int


@dataclass(frozen=True)
class LeafNode:
    id: LeafId
    value: float          # training-label mean, in [-1, 1]
    train_count: int


TreeNode = InternalNode | LeafNode


@dataclass(frozen=True)
class DecisionTree:
    """
    A trained CART tree stored as parallel node arrays.

    Node 0 is the root. For a leaf, `feature[i] == -1` and `left/right` are -1; a leaf's
    `LeafId` is its node index. `value` holds the training-label mean at every node and
    `train_count` the number of (bootstrap) training samples that reached it.
    """

    feature: np.ndarray       # int64
    threshold: np.ndarray     # float64
    left: np.ndarray          # int64
    right: np.ndarray         # int64
    value: np.ndarray         # float64
    train_count: np.ndarray   # int64

    @property
    def num_nodes(self) -> int:
        return int(self.feature.size)

    @property
    def leaf_ids(self) -> np.ndarray:
        return np.flatnonzero(self.feature == _LEAF)

    def node(self, i: int) -> TreeNode:
        if self.feature[i] == _LEAF:
            return LeafNode(id=i, value=float(self.value[i]), train_count=int(self.train_count[i]))
        return InternalNode(
            feature=int(self.feature[i]),
            threshold=float(self.threshold[i]),
            left=int(self.left[i]),
            right=int(self.right[i]),
        )

    def leaves(self) -> Iterator[LeafNode]:
        for i in self.leaf_ids:
            yield self.node(int(i))  # type: ignore[misc]

    def leaf_vote(self, leaf: LeafId) -> float:
        """Hard ±1 prediction of a leaf specialist (0 only for an exactly tied leaf)."""
        return float(np.sign(self.value[leaf]))

    def apply(self, X: sparse.spmatrix | np.ndarray) -> np.ndarray:
        """Route every row of `X` to its leaf; returns leaf ids (int64)."""
        n = X.shape[0]
        out = np.empty(n, dtype=np.int64)
        for start in range(0, n, _ROUTE_CHUNK):
            block = X[start:start + _ROUTE_CHUNK]
            dense = block.toarray() if sparse.issparse(block) else np.asarray(block)
            out[start:start + dense.shape[0]] = self._route_dense(dense)
        return out

    def _route_dense(self, dense: np.ndarray) -> np.ndarray:
        node = np.zeros(dense.shape[0], dtype=np.int64)
        rows = np.arange(dense.shape[0])
        while True:
            active = self.feature[node] != _LEAF
            if not active.any():
                return node
            r = rows[active]
            nd = node[active]
            go_left = dense[r, self.feature[nd]] <= self.threshold[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])


@dataclass(frozen=True)
class Forest:
    trees: tuple[DecisionTree, ...]
    config: ForestConfig
    n_features: int
    min_leaf: int

    def __post_init__(self) -> None:
        if not self.trees:
            raise ValueError("a forest needs at least one tree")

    def apply(self, X: sparse.spmatrix | np.ndarray) -> np.ndarray:
        """Leaf ids, shape (num_trees, num_examples)."""
        return np.vstack([tree.apply(X) for tree in self.trees])


# =======================
# Training
# =======================

def _weighted_gini(count: np.ndarray, pos: np.ndarray) -> np.ndarray:
    # count * gini = count - (pos^2 + neg^2) / count
    neg = count - pos
    return count - (pos * pos + neg * neg) / count


def _best_split(
    X: np.ndarray,
    y: np.ndarray,
    idx: np.ndarray,
    min_leaf: int,
    max_features: int,
    rng: np.random.Generator,
) -> tuple[int, float] | None:
    """
    Best Gini split of the samples `idx`, or None if no legal split improves impurity.

    Candidate thresholds are midpoints between consecutive distinct sorted values; both
    children must keep at least `min_leaf` samples. Ties go to the lowest feature index,
    then the lowest threshold.
    """
    n = idx.size
    if n < 2 * min_leaf:
        return None
    ys = y[idx]
    pos_total = float(np.count_nonzero(ys > 0))
    if pos_total in (0.0, float(n)):
        return None
    parent = float(_weighted_gini(np.asarray(float(n)), np.asarray(pos_total)))

    Xn = X[idx]
    varying = np.flatnonzero(Xn.max(axis=0) > Xn.min(axis=0))
    if varying.size == 0:
        return None
    k = min(max_features, varying.size)
    candidates = np.sort(rng.choice(varying, size=k, replace=False))

    n_left = np.arange(1, n, dtype=np.float64)
    legal_size = (n_left >= min_leaf) & (n - n_left >= min_leaf)
    best: tuple[float, int, float] | None = None
    for f in candidates:
        order = np.argsort(Xn[:, f], kind="stable")
        xs = Xn[order, f]
        pos_left = np.cumsum(ys[order] > 0)[:-1].astype(np.float64)
        valid = legal_size & (xs[:-1] < xs[1:])
        if not valid.any():
            continue
        impurity = _weighted_gini(n_left, pos_left) + _weighted_gini(
            n - n_left, pos_total - pos_left
        )
        impurity[~valid] = np.inf
        i = int(np.argmin(impurity))
        if best is None or impurity[i] < best[0]:
            lo, hi = xs[i], xs[i + 1]
            thr = 0.5 * (lo + hi)
            if thr >= hi:  # adjacent floats: the midpoint rounded up onto `hi`
                thr = lo
            best = (float(impurity[i]), int(f), float(thr))

    if best is None or best[0] >= parent - _MIN_GAIN:
        return None
    return best[1], best[2]


def train_tree(
    X: np.ndarray,
    y: np.ndarray,
    config: ForestConfig,
    rng: np.random.Generator,
    min_leaf: int | None = None,
) -> DecisionTree:
    """
    Grow one CART tree on dense features `X` (m x d) and ±1 labels `y`.

    Growth has no depth limit; it stops at a node when the node is pure, has fewer than
    2 * min_leaf samples, or no sampled feature yields a legal split that lowers the
    weighted Gini impurity. Each leaf stores the mean training label.
    """
    m, d = X.shape
    if m == 0:
        raise ValueError("cannot grow a tree on an empty labeled set")
    leaf_min = min_leaf if min_leaf is not None else config.resolved_min_leaf(m)
    if leaf_min < 1:
        raise ValueError("min_leaf must be >= 1")
    max_features = config.resolved_max_features(d)

    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    value: list[float] = []
    count: list[int] = []

    # (sample indices, parent node, is-left-child); left children are popped first.
    stack: list[tuple[np.ndarray, int, bool]] = [(np.arange(m), -1, False)]
    while stack:
        idx, parent, is_left = stack.pop()
        node = len(feature)
        if parent >= 0:
            (left if is_left else right)[parent] = node
        feature.append(_LEAF)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(y[idx].mean()))
        count.append(int(idx.size))

        split = _best_split(X, y, idx, leaf_min, max_features, rng)
        if split is None:
            continue
        f, thr = split
        feature[node] = f
        threshold[node] = thr
        go_left = X[idx, f] <= thr
        stack.append((idx[~go_left], node, False))
        stack.append((idx[go_left], node, True))

    return DecisionTree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        value=np.asarray(value, dtype=np.float64),
        train_count=np.asarray(count, dtype=np.int64),
    )


def _grow(X: np.ndarray, y: np.ndarray, config: ForestConfig, tree_index: int, min_leaf: int):
    rng = np.random.default_rng([config.seed, tree_index])
    m = X.shape[0]
    if config.bootstrap:
        sample = rng.integers(0, m, size=m)
        return train_tree(X[sample], y[sample], config, rng, min_leaf=min_leaf)
    return train_tree(X, y, config, rng, min_leaf=min_leaf)


def train_forest(X: np.ndarray | sparse.spmatrix, y: np.ndarray, config: ForestConfig) -> Forest:
    """
    Train `config.num_trees` trees, each on its own bootstrap resample of size m.

    Tree t draws from `default_rng([seed, t])`, so the forest is the same whether trees
    are grown sequentially or by `joblib` workers.
    """
    dense = X.toarray() if sparse.issparse(X) else np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    m = dense.shape[0]
    if m == 0:
        raise ValueError("cannot train a forest on an empty labeled set")
    min_leaf = config.resolved_min_leaf(m)

    trees = Parallel(n_jobs=config.n_jobs)(
        delayed(_grow)(dense, y, config, t, min_leaf) for t in range(config.num_trees)
    )
    forest = Forest(trees=tuple(trees), config=config, n_features=dense.shape[1], min_leaf=min_leaf)
    logger.info(
        "trained %d trees on %d labeled examples (min_leaf=%d, max_features=%d, %d leaves total)",
        config.num_trees, m, min_leaf, config.resolved_max_features(dense.shape[1]),
        sum(t.leaf_ids.size for t in forest.trees),
    )
    return forest


# =======================
# Prediction
# =======================

def route(tree: DecisionTree, example: Example) -> LeafId:
    """The unique leaf `example` reaches (missing features read as 0)."""
    node = 0
    while tree.feature[node] != _LEAF:
        x = example.value(int(tree.feature[node]) + 1)
        node = int(tree.left[node] if x <= tree.threshold[node] else tree.right[node])
    return node


def majority_vote_score(forest: Forest, example: Example) -> float:
    """Base-RF score: the mean routed leaf value over all trees."""
    total = 0.0
    for tree in forest.trees:
        total += float(tree.value[route(tree, example)])
    return total / len(forest.trees)


def majority_vote_scores(forest: Forest, X: sparse.spmatrix | np.ndarray) -> np.ndarray:
    """Vectorized `majority_vote_score` over the rows of X."""
    total = np.zeros(X.shape[0], dtype=np.float64)
    for tree in forest.trees:
        total += tree.value[tree.apply(X)]
    return total / len(forest.trees)
