"""Least-squares gradient-boosted regression trees.

Used as the nuisance learners that predict the outcome and each
treatment dimension from the controls. Plain Friedman-style boosting:
exact greedy splits by variance reduction, leaf values are residual
means, deterministic for a fixed seed. Defaults mirror the production
configuration (1000 trees, depth 6, learning rate 0.01).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ._kernels import grow_tree_mse, tree_accumulate
from .errors import BadFoldCount, DimensionMismatch
from .seeding import child_seed, spawn_rng


@dataclass(frozen=True)
class GbtParams:
    n_trees: int = 1000
    max_depth: int = 6
    learning_rate: float = 0.01
    min_samples_leaf: int = 2
    subsample: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must be in (0, 1]")
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if not 0.0 < self.subsample <= 1.0:
            raise ValueError("subsample must be in (0, 1]")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")


@dataclass(frozen=True)
class RegressionTree:
    """Flat-array binary tree; ``feature == -1`` marks a leaf."""

    feature: np.ndarray  # int32
    threshold: np.ndarray  # float64
    left: np.ndarray  # int32
    right: np.ndarray  # int32
    value: np.ndarray  # float64, leaf prediction (0 at internal nodes)
    n_samples: np.ndarray  # int64 training rows routed through each node

    @property
    def depth(self) -> int:
        depths = np.zeros(len(self.feature), dtype=np.int64)
        for node in range(len(self.feature)):
            if self.feature[node] >= 0:
                depths[self.left[node]] = depths[node] + 1
                depths[self.right[node]] = depths[node] + 1
        return int(depths.max()) if len(depths) else 0


@dataclass(frozen=True)
class GbtModel:
    base_score: float
    trees: tuple[RegressionTree, ...]
    params: GbtParams
    n_features: int


def _validate_xy(X: np.ndarray, y: np.ndarray | None = None) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionMismatch(f"X must be 2-d, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("X contains non-finite values; impute or reject upstream")
    if y is not None:
        y = np.ascontiguousarray(y, dtype=np.float64)
        if y.ndim != 1 or len(y) != X.shape[0]:
            raise DimensionMismatch(f"y shape {y.shape} does not match X rows {X.shape[0]}")
        if not np.all(np.isfinite(y)):
            raise ValueError("y contains non-finite values")
    return X


def fit_gbt(X: np.ndarray, y: np.ndarray, params: GbtParams = GbtParams()) -> GbtModel:
    """Fit boosting rounds to squared-loss residuals.

    A constant target yields a base-score-only model. Training RSS is
    non-increasing per round when subsample == 1.
    """
    X = _validate_xy(X, y)
    y = np.ascontiguousarray(y, dtype=np.float64)
    n = X.shape[0]
    if n < 2:
        raise ValueError("need at least 2 rows to fit")
    base = float(y.mean())
    if y.min() == y.max():
        return GbtModel(base, (), params, X.shape[1])

    rng = spawn_rng(params.seed, "gbt") if params.subsample < 1.0 else None
    preds = np.full(n, base, dtype=np.float64)
    trees: list[RegressionTree] = []
    for _ in range(params.n_trees):
        residual = y - preds
        if rng is not None:
            m = max(1, int(params.subsample * n))
            rows = np.sort(rng.choice(n, size=m, replace=False))
        else:
            rows = np.arange(n)
        feature, threshold, left, right, value, n_samples = grow_tree_mse(
            X, residual, rows.astype(np.int64), params.max_depth, params.min_samples_leaf
        )
        tree = RegressionTree(feature, threshold, left, right, value, n_samples)
        trees.append(tree)
        tree_accumulate(
            tree.feature, tree.threshold, tree.left, tree.right, tree.value,
            X, params.learning_rate, preds,
        )
    return GbtModel(base, tuple(trees), params, X.shape[1])


def predict_gbt(model: GbtModel, X: np.ndarray) -> np.ndarray:
    X = _validate_xy(X)
    if X.shape[0] == 0:
        return np.zeros(0, dtype=np.float64)
    if X.shape[1] != model.n_features:
        raise DimensionMismatch(
            f"model expects {model.n_features} features, got {X.shape[1]}"
        )
    out = np.full(X.shape[0], model.base_score, dtype=np.float64)
    for tree in model.trees:
        tree_accumulate(
            tree.feature, tree.threshold, tree.left, tree.right, tree.value,
            X, model.params.learning_rate, out,
        )
    return out


# ---------------------------------------------------------------------------
# cross-validation utilities
# ---------------------------------------------------------------------------

def kfold_indices(n: int, k: int, seed: int = 0) -> list[np.ndarray]:
    """Seeded partition of range(n) into k folds with sizes differing by <= 1."""
    if k < 2:
        raise BadFoldCount(f"k={k} must be >= 2")
    if n < k:
        raise BadFoldCount(f"n={n} smaller than k={k}")
    perm = spawn_rng(seed, "kfold").permutation(n)
    return [np.sort(fold) for fold in np.array_split(perm, k)]


DEFAULT_SEARCH_SPACE: dict[str, tuple] = {
    "n_trees": (100, 300, 1000),
    "max_depth": (2, 3, 4, 6),
    "learning_rate": (0.01, 0.05, 0.1),
    "min_samples_leaf": (2, 5),
    "subsample": (0.8, 1.0),
}


def random_search(
    X: np.ndarray,
    y: np.ndarray,
    param_space: Mapping[str, Sequence] | None = None,
    n_draws: int = 20,
    k: int = 5,
    seed: int = 0,
    base_params: GbtParams = GbtParams(),
) -> GbtParams:
    """Pick the draw minimizing mean k-fold validation MSE (ties: first drawn)."""
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    space = dict(param_space if param_space is not None else DEFAULT_SEARCH_SPACE)
    X = _validate_xy(X, y)
    y = np.ascontiguousarray(y, dtype=np.float64)
    folds = kfold_indices(len(y), k, child_seed(seed, "cv-folds"))
    rng = spawn_rng(seed, "draws")
    best_params: GbtParams | None = None
    best_mse = np.inf
    for draw in range(n_draws):
        drawn = {name: values[int(rng.integers(len(values)))] for name, values in space.items()}
        candidate = replace(base_params, **drawn)
        losses = []
        for i, fold in enumerate(folds):
            train = np.setdiff1d(np.arange(len(y)), fold)
            model = fit_gbt(
                X[train], y[train], replace(candidate, seed=child_seed(seed, "fit", draw, i))
            )
            pred = predict_gbt(model, X[fold])
            losses.append(float(np.mean((y[fold] - pred) ** 2)))
        mse = float(np.mean(losses))
        if mse < best_mse:
            best_mse = mse
            best_params = candidate
    assert best_params is not None
    return best_params


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

GBT_SCHEMA = "gbt/1"


def gbt_to_json(model: GbtModel) -> dict:
    return {
        "schema_version": GBT_SCHEMA,
        "base_score": model.base_score,
        "n_features": model.n_features,
        "params": {
            "n_trees": model.params.n_trees,
            "max_depth": model.params.max_depth,
            "learning_rate": model.params.learning_rate,
            "min_samples_leaf": model.params.min_samples_leaf,
            "subsample": model.params.subsample,
            "seed": model.params.seed,
        },
        "trees": [
            {
                "feature": t.feature.tolist(),
                "threshold": t.threshold.tolist(),
                "left": t.left.tolist(),
                "right": t.right.tolist(),
                "value": t.value.tolist(),
                "n_samples": t.n_samples.tolist(),
            }
            for t in model.trees
        ],
    }


def gbt_from_json(doc: dict) -> GbtModel:
    if doc.get("schema_version") != GBT_SCHEMA:
        raise ValueError(f"unsupported model schema {doc.get('schema_version')}")
    trees = tuple(
        RegressionTree(
            feature=np.array(t["feature"], dtype=np.int32),
            threshold=np.array(t["threshold"], dtype=np.float64),
            left=np.array(t["left"], dtype=np.int32),
            right=np.array(t["right"], dtype=np.int32),
            value=np.array(t["value"], dtype=np.float64),
            n_samples=np.array(t["n_samples"], dtype=np.int64),
        )
        for t in doc["trees"]
    )
    return GbtModel(
        base_score=float(doc["base_score"]),
        trees=trees,
        params=GbtParams(**doc["params"]),
        n_features=int(doc["n_features"]),
    )


def save_gbt(model: GbtModel, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        json.dump(gbt_to_json(model), fh)


def load_gbt(path) -> GbtModel:
    with Path(path).open(encoding="utf-8") as fh:
        return gbt_from_json(json.load(fh))
