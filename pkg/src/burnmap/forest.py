"""Random forest of CART trees for per-pixel burnt/unburnt classification.

Each tree grows on a bootstrap resample; at every node a fresh random subset
of ceil(sqrt(d)) features is scanned for the split that maximizes Gini
impurity decrease (threshold = midpoint between the neighbouring sorted
values). Feature importances are the node-weighted impurity decreases summed
over the forest and normalized to 1. Per-tree generators are derived from
the fit seed, so forests are reproducible and tree order is immaterial to
the importance reduction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, FitError
from .modelio import block_text, load_blocks, save_blocks, text_block
from .seeding import rng_for

N_TREES = 100
MAX_DEPTH = 12
MIN_LEAF = 2


@dataclass(frozen=True)
class DecisionTree:
    """Flat array encoding: node i is a leaf iff feature[i] < 0."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # burnt fraction of the training rows in the node


@dataclass(frozen=True)
class RandomForestModel:
    trees: tuple[DecisionTree, ...]
    n_features: int
    max_depth: int
    min_leaf: int
    feature_importances: np.ndarray


def _validate_training_data(x: np.ndarray, y: np.ndarray):
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise DataError(f"features {x.shape} and labels {y.shape} do not align")
    if x.shape[0] == 0:
        raise DataError("empty training set")
    if not np.isfinite(x).all():
        raise DataError("non-finite feature values")
    classes = np.unique(y)
    if classes.size < 2:
        raise FitError(
            f"single-class training set (label {classes[0]!r}): model would be degenerate"
        )
    if not np.isin(classes, (0, 1)).all():
        raise DataError(f"labels must be 0/1, got {classes.tolist()}")


def _best_split(xs: np.ndarray, ys: np.ndarray, min_leaf: int, parent_gini: float):
    """Best (decrease, column, threshold) over the candidate columns of xs,
    or None. Ties keep the first candidate column, then the smallest left
    block, making the scan deterministic."""
    n = xs.shape[0]
    best = None
    sizes_l = np.arange(1, n, dtype=np.float64)
    sizes_r = n - sizes_l
    for j in range(xs.shape[1]):
        order = np.argsort(xs[:, j], kind="stable")
        vs = xs[order, j]
        cum = np.cumsum(ys[order], dtype=np.float64)[:-1]
        valid = (vs[:-1] < vs[1:]) & (sizes_l >= min_leaf) & (sizes_r >= min_leaf)
        if not valid.any():
            continue
        pl = cum / sizes_l
        pr = (cum[-1] + ys[order[-1]] - cum) / sizes_r
        weighted = (sizes_l * 2.0 * pl * (1.0 - pl) + sizes_r * 2.0 * pr * (1.0 - pr)) / n
        decrease = np.where(valid, parent_gini - weighted, -np.inf)
        i = int(np.argmax(decrease))
        if best is None or decrease[i] > best[0]:
            best = (float(decrease[i]), j, float((vs[i - 1] + vs[i]) / 2.0))
    return best


def _grow_tree(
    x: np.ndarray,
    y: np.ndarray,
    rng: np.random.Generator,
    max_depth: int,
    min_leaf: int,
    n_total: int,
    importances: np.ndarray,
) -> DecisionTree:
    d = x.shape[1]
    k = math.ceil(math.sqrt(d))
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    value: list[float] = []

    def new_node(burnt_fraction: float) -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(burnt_fraction)
        return len(feature) - 1

    def grow(rows: np.ndarray, depth: int) -> int:
        n = rows.size
        pos = int(y[rows].sum())
        node = new_node(pos / n)
        if depth >= max_depth or n < 2 * min_leaf or pos in (0, n):
            return node
        candidates = rng.choice(d, size=k, replace=False)
        p = pos / n
        split = _best_split(x[rows][:, candidates], y[rows], min_leaf, 2.0 * p * (1.0 - p))
        if split is None or split[0] <= 0.0:
            return node
        decrease, col, thr = split
        feat = int(candidates[col])
        importances[feat] += (n / n_total) * decrease
        go_left = x[rows, feat] <= thr
        feature[node] = feat
        threshold[node] = thr
        left[node] = grow(rows[go_left], depth + 1)
        right[node] = grow(rows[~go_left], depth + 1)
        return node

    grow(np.arange(x.shape[0]), 0)
    return DecisionTree(
        feature=np.asarray(feature, dtype=np.int32),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int32),
        right=np.asarray(right, dtype=np.int32),
        value=np.asarray(value, dtype=np.float64),
    )


def rf_fit(
    x: np.ndarray,
    y: np.ndarray,
    seed: int,
    n_trees: int = N_TREES,
    max_depth: int = MAX_DEPTH,
    min_leaf: int = MIN_LEAF,
) -> RandomForestModel:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    _validate_training_data(x, y)
    if n_trees < 1 or max_depth < 1 or min_leaf < 1:
        raise FitError(
            f"hyperparameters must be positive: trees={n_trees} depth={max_depth} leaf={min_leaf}"
        )
    y = y.astype(np.int64)
    n, d = x.shape
    importances = np.zeros(d, dtype=np.float64)
    trees = []
    for t in range(n_trees):
        rng = rng_for(seed, f"tree/{t}")
        rows = rng.integers(0, n, size=n)
        trees.append(_grow_tree(x[rows], y[rows], rng, max_depth, min_leaf, n, importances))
    total = importances.sum()
    if total > 0:
        importances /= total
    return RandomForestModel(
        trees=tuple(trees),
        n_features=d,
        max_depth=max_depth,
        min_leaf=min_leaf,
        feature_importances=importances,
    )


def _tree_predict(tree: DecisionTree, x: np.ndarray) -> np.ndarray:
    node = np.zeros(x.shape[0], dtype=np.int32)
    active = np.flatnonzero(tree.feature[node] >= 0)
    while active.size:
        cur = node[active]
        go_left = x[active, tree.feature[cur]] <= tree.threshold[cur]
        node[active] = np.where(go_left, tree.left[cur], tree.right[cur])
        active = active[tree.feature[node[active]] >= 0]
    return tree.value[node]


def rf_predict(model: RandomForestModel, x: np.ndarray) -> np.ndarray | float:
    """Mean leaf burnt-fraction across trees; scalar in, scalar out."""
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != model.n_features:
        raise DataError(
            f"feature vector length {arr.shape[-1]} != model dimensionality {model.n_features}"
        )
    acc = np.zeros(arr.shape[0], dtype=np.float64)
    for tree in model.trees:
        acc += _tree_predict(tree, arr)
    proba = acc / len(model.trees)
    return float(proba[0]) if single else proba


def save_forest(path: str | Path, model: RandomForestModel):
    blocks: dict[str, np.ndarray] = {
        "__meta__": text_block(
            f"kind=random_forest\nn_trees={len(model.trees)}\n"
            f"n_features={model.n_features}\nmax_depth={model.max_depth}\n"
            f"min_leaf={model.min_leaf}\n"
        ),
        "importances": model.feature_importances,
    }
    for t, tree in enumerate(model.trees):
        prefix = f"tree/{t:04d}/"
        blocks[prefix + "feature"] = tree.feature
        blocks[prefix + "threshold"] = tree.threshold
        blocks[prefix + "left"] = tree.left
        blocks[prefix + "right"] = tree.right
        blocks[prefix + "value"] = tree.value
    save_blocks(path, blocks)


def load_forest(path: str | Path) -> RandomForestModel:
    blocks = load_blocks(path)
    meta = dict(
        line.split("=", 1) for line in block_text(blocks["__meta__"]).splitlines() if line
    )
    if meta.get("kind") != "random_forest":
        raise DataError(f"container holds {meta.get('kind')!r}, not a random forest")
    n_trees = int(meta["n_trees"])
    trees = tuple(
        DecisionTree(
            feature=blocks[f"tree/{t:04d}/feature"],
            threshold=blocks[f"tree/{t:04d}/threshold"],
            left=blocks[f"tree/{t:04d}/left"],
            right=blocks[f"tree/{t:04d}/right"],
            value=blocks[f"tree/{t:04d}/value"],
        )
        for t in range(n_trees)
    )
    return RandomForestModel(
        trees=trees,
        n_features=int(meta["n_features"]),
        max_depth=int(meta["max_depth"]),
        min_leaf=int(meta["min_leaf"]),
        feature_importances=blocks["importances"],
    )
