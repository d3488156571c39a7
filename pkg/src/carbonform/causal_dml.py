"""Debiased two-stage estimation of built-form effects.

Stage one predicts the outcome and every treatment dimension from the
controls with cross-fitted boosted trees and keeps the residuals. Stage
two fits an honest subsampled forest over the controls; a query's effect
vector solves the forest-kernel weighted ridge regression of outcome
residuals on treatment residuals. Controls enter the forest so that
moderating effects can be picked up.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from ._kernels import grow_tree_effect, tree_leaf_ids
from .boosted_trees import GbtParams, fit_gbt, kfold_indices, predict_gbt
from .errors import AllZeroEffects, DimensionMismatch, TooFewUnits
from .features import FEATURE_NAMES, FIVE_D_GROUPS, NeighborhoodProfile, profiles_to_arrays
from .seeding import child_seed, spawn_rng


@dataclass(frozen=True)
class ResidualizedData:
    y_res: np.ndarray  # (n,)
    t_res: np.ndarray  # (n, d)
    fold_assignment: np.ndarray  # (n,) int
    nuisance_r2_y: float
    nuisance_r2_t: float  # mean over treatment dimensions
    nuisance_r2_t_dims: tuple[float, ...]
    y_nuisance_pred: np.ndarray  # cross-fitted outcome prediction, for fit metrics


def _out_of_fold_r2(actual: np.ndarray, predicted: np.ndarray) -> float:
    denom = float(np.sum((actual - actual.mean()) ** 2))
    if denom == 0.0:
        return 0.0
    return 1.0 - float(np.sum((actual - predicted) ** 2)) / denom


def crossfit_residualize(
    X: np.ndarray,
    y: np.ndarray,
    T: np.ndarray,
    gbt_params: GbtParams = GbtParams(),
    n_folds: int = 5,
    seed: int = 0,
) -> ResidualizedData:
    """Out-of-fold nuisance predictions and residuals for y and each T column."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    T = np.ascontiguousarray(T, dtype=np.float64)
    if T.ndim == 1:
        T = T[:, None]
    n = len(y)
    if X.shape[0] != n or T.shape[0] != n:
        raise DimensionMismatch("X, y, T row counts differ")
    if n < n_folds * max(2, gbt_params.min_samples_leaf):
        raise TooFewUnits(
            f"{n} units cannot support {n_folds}-fold cross-fitting"
        )

    folds = kfold_indices(n, n_folds, child_seed(seed, "crossfit-folds"))
    fold_assignment = np.empty(n, dtype=np.int64)
    for f, idx in enumerate(folds):
        fold_assignment[idx] = f

    y_hat = np.empty(n, dtype=np.float64)
    t_hat = np.empty_like(T)
    all_rows = np.arange(n)
    for f, idx in enumerate(folds):
        train = np.setdiff1d(all_rows, idx)
        y_model = fit_gbt(
            X[train], y[train], replace(gbt_params, seed=child_seed(seed, "nuis-y", f))
        )
        y_hat[idx] = predict_gbt(y_model, X[idx])
        for j in range(T.shape[1]):
            t_model = fit_gbt(
                X[train], T[train, j], replace(gbt_params, seed=child_seed(seed, "nuis-t", f, j))
            )
            t_hat[idx, j] = predict_gbt(t_model, X[idx])

    r2_dims = tuple(_out_of_fold_r2(T[:, j], t_hat[:, j]) for j in range(T.shape[1]))
    return ResidualizedData(
        y_res=y - y_hat,
        t_res=T - t_hat,
        fold_assignment=fold_assignment,
        nuisance_r2_y=_out_of_fold_r2(y, y_hat),
        nuisance_r2_t=float(np.mean(r2_dims)),
        nuisance_r2_t_dims=r2_dims,
        y_nuisance_pred=y_hat,
    )


def residualize_profiles(
    profiles: Sequence[NeighborhoodProfile],
    gbt_params: GbtParams = GbtParams(),
    n_folds: int = 5,
    seed: int = 0,
) -> ResidualizedData:
    X, y, T = profiles_to_arrays(profiles)
    return crossfit_residualize(X, y, T, gbt_params, n_folds, seed)


# ---------------------------------------------------------------------------
# honest effect forest
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CausalForestParams:
    n_trees: int = 100
    subsample_fraction: float = 0.5
    honest_split: float = 0.5
    min_leaf: int = 5
    ridge_lambda: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if not 0.0 < self.subsample_fraction < 1.0:
            raise ValueError("subsample_fraction must be in (0, 1)")
        if not 0.0 < self.honest_split < 1.0:
            raise ValueError("honest_split must be in (0, 1)")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")
        if self.ridge_lambda <= 0.0:
            raise ValueError("ridge_lambda must be > 0")


@dataclass(frozen=True)
class EffectTree:
    """One honest tree: splits from the split half, leaves hold estimation units."""

    feature: np.ndarray  # int32, -1 for leaves
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    est_count: np.ndarray  # int64 estimation units per node
    leaf_est_start: np.ndarray  # int64 CSR offsets into est_index (leaves only; -1 internal)
    est_index: np.ndarray  # int64, estimation-unit training indices grouped by leaf
    leaf_theta: np.ndarray  # (n_nodes, d) per-leaf ridge coefficient (0 rows internal)
    split_index: np.ndarray  # int64 training indices of the split half (for honesty audits)


@dataclass(frozen=True)
class CausalForestModel:
    trees: tuple[EffectTree, ...]
    t_res: np.ndarray
    y_res: np.ndarray
    params: CausalForestParams
    n_features: int

    @property
    def n_units(self) -> int:
        return len(self.y_res)

    @property
    def n_treatments(self) -> int:
        return self.t_res.shape[1]


def fit_causal_forest(
    X: np.ndarray, residuals: ResidualizedData, params: CausalForestParams = CausalForestParams()
) -> CausalForestModel:
    """Grow the honest effect forest on residualized data.

    Each tree draws a subsample without replacement, splits it into
    disjoint split/estimation halves, grows heterogeneity-seeking splits
    on the first and populates leaves from the second.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y_res = np.ascontiguousarray(residuals.y_res, dtype=np.float64)
    t_res = np.ascontiguousarray(residuals.t_res, dtype=np.float64)
    if t_res.ndim == 1:
        t_res = t_res[:, None]
    n, d = t_res.shape
    if X.shape[0] != n or len(y_res) != n:
        raise DimensionMismatch("residualized data inconsistent with X rows")
    if n < 2 * params.min_leaf:
        raise TooFewUnits(f"{n} units cannot populate honest leaves of {params.min_leaf}")

    trees = []
    for b in range(params.n_trees):
        rng = spawn_rng(params.seed, "tree", b)
        m = max(2, int(round(params.subsample_fraction * n)))
        m = min(m, n)
        subsample = rng.choice(n, size=m, replace=False)
        n_split = max(1, int(round(params.honest_split * m)))
        n_split = min(n_split, m - 1)
        split_rows = np.sort(subsample[:n_split]).astype(np.int64)
        est_rows = np.sort(subsample[n_split:]).astype(np.int64)
        feature, threshold, left, right, est_count, leaf_est_start, est_index, leaf_theta = (
            grow_tree_effect(X, t_res, y_res, split_rows, est_rows, params.min_leaf, params.ridge_lambda)
        )
        trees.append(
            EffectTree(
                feature=feature,
                threshold=threshold,
                left=left,
                right=right,
                est_count=est_count,
                leaf_est_start=leaf_est_start,
                est_index=est_index,
                leaf_theta=leaf_theta,
                split_index=split_rows,
            )
        )
    return CausalForestModel(tuple(trees), t_res, y_res, params, X.shape[1])


def forest_weights(model: CausalForestModel, X_query: np.ndarray) -> np.ndarray:
    """Kernel weights (n_queries x n_train); every row sums to 1."""
    X_query = np.ascontiguousarray(X_query, dtype=np.float64)
    if X_query.ndim == 1:
        X_query = X_query[None, :]
    if X_query.shape[1] != model.n_features:
        raise DimensionMismatch(
            f"query has {X_query.shape[1]} features, model expects {model.n_features}"
        )
    n_q = X_query.shape[0]
    weights = np.zeros((n_q, model.n_units), dtype=np.float64)
    leaf_of = np.empty(n_q, dtype=np.int64)
    scale = 1.0 / len(model.trees)
    for tree in model.trees:
        tree_leaf_ids(tree.feature, tree.threshold, tree.left, tree.right, X_query, leaf_of)
        for leaf in np.unique(leaf_of):
            count = tree.est_count[leaf]
            if count == 0:
                continue
            start = tree.leaf_est_start[leaf]
            members = tree.est_index[start : start + count]
            rows = np.flatnonzero(leaf_of == leaf)
            weights[np.ix_(rows, members)] += scale / count
    return weights


def predict_theta(model: CausalForestModel, x: np.ndarray) -> np.ndarray:
    """Effect vector at confounder row(s) x via kernel-weighted ridge."""
    single = np.asarray(x).ndim == 1
    W = forest_weights(model, x)
    T, y = model.t_res, model.y_res
    d = model.n_treatments
    lam = model.params.ridge_lambda
    A = np.einsum("qi,ij,ik->qjk", W, T, T, optimize=True) + lam * np.eye(d)[None, :, :]
    b = W @ (T * y[:, None])
    thetas = np.linalg.solve(A, b[:, :, None])[:, :, 0]
    return thetas[0] if single else thetas


def predict_theta_surrogate(model: CausalForestModel, x: np.ndarray) -> np.ndarray:
    """Mean of per-leaf coefficients across trees (the surface SHAP explains)."""
    X_query = np.ascontiguousarray(x, dtype=np.float64)
    single = X_query.ndim == 1
    if single:
        X_query = X_query[None, :]
    out = np.zeros((X_query.shape[0], model.n_treatments), dtype=np.float64)
    leaf_of = np.empty(X_query.shape[0], dtype=np.int64)
    for tree in model.trees:
        tree_leaf_ids(tree.feature, tree.threshold, tree.left, tree.right, X_query, leaf_of)
        out += tree.leaf_theta[leaf_of]
    out /= len(model.trees)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# effects, decomposition, metrics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EffectEstimate:
    neighborhood_id: str
    theta: tuple[float, ...]  # kg CO2e per household-day per 1 sd of aligned feature
    total_effect: float  # theta . treatment
    relative_effect: float  # total / city mean outcome


def estimate_effects(
    model: CausalForestModel, profiles: Sequence[NeighborhoodProfile]
) -> list[EffectEstimate]:
    X, y, T = profiles_to_arrays(profiles)
    y_bar = float(y.mean())
    thetas = predict_theta(model, X)
    estimates = []
    for p, theta, t in zip(profiles, thetas, T):
        total = float(np.dot(theta, t))
        estimates.append(
            EffectEstimate(
                neighborhood_id=p.neighborhood_id,
                theta=tuple(float(v) for v in theta),
                total_effect=total,
                relative_effect=total / y_bar,
            )
        )
    return estimates


def decompose_effect(
    thetas: np.ndarray, feature_names: Sequence[str] = FEATURE_NAMES
) -> dict:
    """Mean-absolute-effect shares per feature and per 5D dimension (percent)."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
    # summing per column in sorted order makes the shares exactly
    # invariant to the ordering of the input rows
    mean_abs = np.sort(np.abs(thetas), axis=0).mean(axis=0)
    total = float(mean_abs.sum())
    if total == 0.0:
        raise AllZeroEffects("all effect components are exactly zero")
    feature_shares = {
        name: float(100.0 * mean_abs[j] / total) for j, name in enumerate(feature_names)
    }
    group_shares = {
        group: float(sum(feature_shares[f] for f in members))
        for group, members in FIVE_D_GROUPS.items()
    }
    return {
        "per_feature_percent": feature_shares,
        "per_dimension_percent": group_shares,
    }


def decompose_estimates(estimates: Sequence[EffectEstimate]) -> dict:
    if not estimates:
        raise AllZeroEffects("no effect estimates to decompose")
    return decompose_effect(np.array([e.theta for e in estimates]))


def fit_metrics(
    y: np.ndarray,
    y_nuisance_pred: np.ndarray,
    total_effects: np.ndarray,
    residuals: ResidualizedData,
) -> dict:
    """Combined fit quality and the share of outcome variance the effects carry.

    ``r2_combined`` scores ``g_hat(x) + theta(x) . t`` against the observed
    outcome, with ``g_hat`` the cross-fitted outcome nuisance;
    ``attribution_share`` is Var(total effect) / Var(outcome), one of
    several possible readings of explained-difference shares (flagged in
    the output metadata).
    """
    y = np.asarray(y, dtype=np.float64)
    combined = np.asarray(y_nuisance_pred, dtype=np.float64) + np.asarray(
        total_effects, dtype=np.float64
    )
    denom = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum((y - combined) ** 2)) / denom if denom > 0 else 0.0
    var_y = float(np.var(y))
    attribution = float(np.var(total_effects)) / var_y if var_y > 0 else 0.0
    return {
        "r2_combined": r2,
        "nuisance_r2_y": residuals.nuisance_r2_y,
        "nuisance_r2_t": residuals.nuisance_r2_t,
        "nuisance_r2_t_dims": list(residuals.nuisance_r2_t_dims),
        "attribution_share": attribution,
        "attribution_definition": "var(total_effect)/var(outcome)",
    }


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

FOREST_SCHEMA = "effect-forest/1"


def forest_to_json(model: CausalForestModel) -> dict:
    return {
        "schema_version": FOREST_SCHEMA,
        "params": {
            "n_trees": model.params.n_trees,
            "subsample_fraction": model.params.subsample_fraction,
            "honest_split": model.params.honest_split,
            "min_leaf": model.params.min_leaf,
            "ridge_lambda": model.params.ridge_lambda,
            "seed": model.params.seed,
        },
        "n_features": model.n_features,
        "t_res": model.t_res.tolist(),
        "y_res": model.y_res.tolist(),
        "trees": [
            {
                "feature": t.feature.tolist(),
                "threshold": t.threshold.tolist(),
                "left": t.left.tolist(),
                "right": t.right.tolist(),
                "est_count": t.est_count.tolist(),
                "leaf_est_start": t.leaf_est_start.tolist(),
                "est_index": t.est_index.tolist(),
                "leaf_theta": t.leaf_theta.tolist(),
                "split_index": t.split_index.tolist(),
            }
            for t in model.trees
        ],
    }


def forest_from_json(doc: dict) -> CausalForestModel:
    if doc.get("schema_version") != FOREST_SCHEMA:
        raise ValueError(f"unsupported forest schema {doc.get('schema_version')}")
    trees = tuple(
        EffectTree(
            feature=np.array(t["feature"], dtype=np.int32),
            threshold=np.array(t["threshold"], dtype=np.float64),
            left=np.array(t["left"], dtype=np.int32),
            right=np.array(t["right"], dtype=np.int32),
            est_count=np.array(t["est_count"], dtype=np.int64),
            leaf_est_start=np.array(t["leaf_est_start"], dtype=np.int64),
            est_index=np.array(t["est_index"], dtype=np.int64),
            leaf_theta=np.array(t["leaf_theta"], dtype=np.float64),
            split_index=np.array(t["split_index"], dtype=np.int64),
        )
        for t in doc["trees"]
    )
    return CausalForestModel(
        trees=trees,
        t_res=np.array(doc["t_res"], dtype=np.float64),
        y_res=np.array(doc["y_res"], dtype=np.float64),
        params=CausalForestParams(**doc["params"]),
        n_features=int(doc["n_features"]),
    )


def save_forest(model: CausalForestModel, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        json.dump(forest_to_json(model), fh)


def load_forest(path) -> CausalForestModel:
    with Path(path).open(encoding="utf-8") as fh:
        return forest_from_json(json.load(fh))
