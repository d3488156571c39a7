"""Attribution and moderation analysis over the effect surface.

The effect forest is turned into a tree-shaped surrogate (each leaf
carries its cached coefficient vector) and explained with exact
path-dependent Shapley attribution. Sign convention: a positive SHAP
value means the confounder pushes that effect component up. The
surrogate's deviation from the full kernel-weighted prediction is
reported as a diagnostic next to every export.

Moderation screening repeats the whole estimation with fresh seeds and
keeps only confounders whose SHAP column correlates with the confounder
value consistently (same sign, |rho| above threshold) in every run.
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from ._kernels import tree_shap
from .boosted_trees import GbtParams
from .causal_dml import (
    CausalForestModel,
    CausalForestParams,
    EffectTree,
    crossfit_residualize,
    fit_causal_forest,
    predict_theta,
    predict_theta_surrogate,
)
from .errors import PipelineFailure
from .features import CONFOUNDER_NAMES, FEATURE_NAMES, FIVE_D_GROUPS
from .seeding import child_seed

#: Minimum per-run |Spearman rho| for a confounder to qualify as moderator.
MODERATION_MIN_ABS_RHO = 0.2

#: A confounder's mean |SHAP| must reach this share of the strongest
#: confounder's to qualify. Rank correlations are amplitude-blind, so
#: smooth but negligible attribution columns would otherwise pass the
#: rho test on sampling noise alone.
MODERATION_RELEVANCE_FLOOR = 0.1

SHAP_SIGN_CONVENTION = "positive SHAP = larger effect component (aligned-treatment units)"


@dataclass(frozen=True)
class ShapMatrix:
    """Per-instance, per-confounder attributions for one effect read-out."""

    values: np.ndarray  # (n, p)
    base_value: float
    readout: str = ""


def _tree_depth(left: np.ndarray, right: np.ndarray) -> int:
    depth = np.zeros(len(left), dtype=np.int64)
    out = 0
    for node in range(len(left)):
        if left[node] >= 0:
            depth[left[node]] = depth[node] + 1
            depth[right[node]] = depth[node] + 1
        out = max(out, int(depth[node]))
    return out


def _tree_readout_values(tree: EffectTree, readout: np.ndarray) -> np.ndarray:
    return tree.leaf_theta @ readout


def _tree_base(tree: EffectTree, values: np.ndarray) -> float:
    leaf = tree.leaf_est_start >= 0
    total = float(tree.est_count[0])
    return float(np.dot(tree.est_count[leaf], values[leaf]) / total)


def shap_matrix(model: CausalForestModel, X: np.ndarray, readout: np.ndarray, name: str = "") -> ShapMatrix:
    """Exact attribution of the surrogate effect surface ``readout . theta(x)``.

    Local accuracy holds against the surrogate (per-leaf coefficients
    averaged over trees): row sum + base equals that prediction.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    readout = np.asarray(readout, dtype=np.float64)
    n, p = X.shape
    phi = np.zeros((n, p), dtype=np.float64)
    base = 0.0
    for tree in model.trees:
        values = _tree_readout_values(tree, readout)
        base += _tree_base(tree, values)
        depth = _tree_depth(tree.left, tree.right)
        size = (depth + 2) * (depth + 3) // 2
        buf_feat = np.empty(size, dtype=np.int64)
        buf_zero = np.empty(size, dtype=np.float64)
        buf_one = np.empty(size, dtype=np.float64)
        buf_w = np.empty(size, dtype=np.float64)
        weights = tree.est_count.astype(np.float64)
        for i in range(n):
            tree_shap(
                tree.left, tree.right, tree.feature, tree.threshold, values, weights,
                X[i], phi[i], buf_feat, buf_zero, buf_one, buf_w,
            )
    phi /= len(model.trees)
    base /= len(model.trees)
    return ShapMatrix(values=phi, base_value=base, readout=name)


def shap_by_dimension(model: CausalForestModel, X: np.ndarray) -> dict[str, ShapMatrix]:
    """One ShapMatrix per treatment dimension (read-out = unit vector)."""
    d = model.n_treatments
    names = FEATURE_NAMES if d == len(FEATURE_NAMES) else tuple(f"dim_{j}" for j in range(d))
    out = {}
    for j, name in enumerate(names):
        readout = np.zeros(d)
        readout[j] = 1.0
        out[name] = shap_matrix(model, X, readout, name=name)
    return out


def default_scopes(d: int) -> dict[str, np.ndarray]:
    """Combined read-out plus one per compact-development dimension (8-dim case)."""
    scopes = {"combined": np.ones(d)}
    if d == len(FEATURE_NAMES):
        for group, members in FIVE_D_GROUPS.items():
            readout = np.zeros(d)
            for m in members:
                readout[FEATURE_NAMES.index(m)] = 1.0
            scopes[group] = readout
    return scopes


def surrogate_deviation(model: CausalForestModel, X: np.ndarray) -> float:
    """Max absolute gap between surrogate and kernel-weighted predictions."""
    kernel = predict_theta(model, X)
    surrogate = predict_theta_surrogate(model, X)
    return float(np.max(np.abs(kernel - surrogate)))


# ---------------------------------------------------------------------------
# brute-force oracle (exponential; used by tests as the independent check)
# ---------------------------------------------------------------------------

def path_expectation(
    feature: np.ndarray, threshold: np.ndarray, left: np.ndarray, right: np.ndarray,
    values: np.ndarray, node_weight: np.ndarray, x: np.ndarray, coalition: frozenset,
) -> float:
    """Tree prediction with out-of-coalition splits averaged by training flow."""

    def rec(node: int) -> float:
        if left[node] < 0:
            return float(values[node])
        f = int(feature[node])
        if f in coalition:
            child = left[node] if x[f] < threshold[node] else right[node]
            return rec(int(child))
        wl = float(node_weight[left[node]])
        wr = float(node_weight[right[node]])
        return (wl * rec(int(left[node])) + wr * rec(int(right[node]))) / (wl + wr)

    return rec(0)


def brute_force_shap(
    feature: np.ndarray, threshold: np.ndarray, left: np.ndarray, right: np.ndarray,
    values: np.ndarray, node_weight: np.ndarray, x: np.ndarray,
) -> tuple[np.ndarray, float]:
    """Exhaustive Shapley attribution over all feature subsets."""
    p = len(x)
    phi = np.zeros(p)
    others: dict[int, list] = {}
    for j in range(p):
        rest = [k for k in range(p) if k != j]
        others[j] = [
            frozenset(c) for size in range(p) for c in itertools.combinations(rest, size)
        ]
    for j in range(p):
        for coalition in others[j]:
            s = len(coalition)
            weight = math.factorial(s) * math.factorial(p - s - 1) / math.factorial(p)
            gain = path_expectation(
                feature, threshold, left, right, values, node_weight, x, coalition | {j}
            ) - path_expectation(feature, threshold, left, right, values, node_weight, x, coalition)
            phi[j] += weight * gain
    base = path_expectation(feature, threshold, left, right, values, node_weight, x, frozenset())
    return phi, base


# ---------------------------------------------------------------------------
# moderation screening
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModerationEntry:
    confounder: str
    scope: str
    qualifies: bool
    sign: str  # "+", "-" when consistent across runs, "mixed" otherwise
    spearman_rho: tuple[float, ...]
    mean_abs_shap: float  # averaged over runs and instances


@dataclass(frozen=True)
class ModerationReport:
    entries: tuple[ModerationEntry, ...]
    n_runs: int
    min_abs_rho: float
    relevance_floor: float
    sign_convention: str
    surrogate_max_deviation: float

    def qualified(self) -> list[ModerationEntry]:
        return [e for e in self.entries if e.qualifies]


def _spearman(a: np.ndarray, b: np.ndarray) -> float:
    if np.all(a == a[0]) or np.all(b == b[0]):
        return 0.0
    rho = stats.spearmanr(a, b).statistic
    return float(rho) if np.isfinite(rho) else 0.0


def moderation_analysis(
    X: np.ndarray,
    y: np.ndarray,
    T: np.ndarray,
    confounder_names: Sequence[str] | None = None,
    gbt_params: GbtParams = GbtParams(),
    forest_params: CausalForestParams = CausalForestParams(),
    n_folds: int = 5,
    n_runs: int = 10,
    master_seed: int = 0,
    scopes: Mapping[str, np.ndarray] | None = None,
    min_abs_rho: float = MODERATION_MIN_ABS_RHO,
    relevance_floor: float = MODERATION_RELEVANCE_FLOOR,
) -> ModerationReport:
    """Repeat estimation ``n_runs`` times and keep consistent moderators.

    A confounder qualifies for a scope when its Spearman correlation with
    its own SHAP column has the same strict sign in every run, every
    |rho| reaches ``min_abs_rho``, and its attribution amplitude is at
    least ``relevance_floor`` times the scope's strongest confounder.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    T = np.ascontiguousarray(T, dtype=np.float64)
    if T.ndim == 1:
        T = T[:, None]
    d = T.shape[1]
    p = X.shape[1]
    if confounder_names is None:
        confounder_names = (
            CONFOUNDER_NAMES if p == len(CONFOUNDER_NAMES) else tuple(f"x_{j}" for j in range(p))
        )
    scope_map = dict(scopes) if scopes is not None else default_scopes(d)

    rhos: dict[tuple[str, str], list[float]] = {
        (name, scope): [] for name in confounder_names for scope in scope_map
    }
    amplitude: dict[tuple[str, str], list[float]] = {key: [] for key in rhos}
    last_model: CausalForestModel | None = None
    for r in range(n_runs):
        try:
            run_seed = child_seed(master_seed, "moderation-run", r)
            residuals = crossfit_residualize(X, y, T, gbt_params, n_folds, seed=run_seed)
            model = fit_causal_forest(
                X, residuals, replace(forest_params, seed=child_seed(run_seed, "forest"))
            )
            for scope, readout in scope_map.items():
                matrix = shap_matrix(model, X, np.asarray(readout, dtype=np.float64), name=scope)
                for j, name in enumerate(confounder_names):
                    rhos[(name, scope)].append(_spearman(X[:, j], matrix.values[:, j]))
                    amplitude[(name, scope)].append(float(np.mean(np.abs(matrix.values[:, j]))))
            last_model = model
        except Exception as exc:  # noqa: BLE001 - report which run died
            raise PipelineFailure(r, exc) from exc

    mean_amp = {key: float(np.mean(vals)) for key, vals in amplitude.items()}
    scope_max = {
        scope: max((mean_amp[(name, scope)] for name in confounder_names), default=0.0)
        for scope in scope_map
    }
    entries = []
    for (name, scope), values in rhos.items():
        arr = np.array(values)
        if np.all(arr > 0):
            sign = "+"
        elif np.all(arr < 0):
            sign = "-"
        else:
            sign = "mixed"
        relevant = mean_amp[(name, scope)] >= relevance_floor * scope_max[scope]
        qualifies = (
            sign in ("+", "-")
            and bool(np.min(np.abs(arr)) >= min_abs_rho)
            and relevant
            and scope_max[scope] > 0.0
        )
        entries.append(
            ModerationEntry(
                confounder=name,
                scope=scope,
                qualifies=qualifies,
                sign=sign,
                spearman_rho=tuple(float(v) for v in arr),
                mean_abs_shap=mean_amp[(name, scope)],
            )
        )
    assert last_model is not None
    return ModerationReport(
        entries=tuple(entries),
        n_runs=n_runs,
        min_abs_rho=min_abs_rho,
        relevance_floor=relevance_floor,
        sign_convention=SHAP_SIGN_CONVENTION,
        surrogate_max_deviation=surrogate_deviation(last_model, X),
    )


def moderation_report_to_json(report: ModerationReport) -> dict:
    return {
        "schema_version": "moderation/1",
        "n_runs": report.n_runs,
        "min_abs_rho": report.min_abs_rho,
        "relevance_floor": report.relevance_floor,
        "sign_convention": report.sign_convention,
        "surrogate_max_deviation": report.surrogate_max_deviation,
        "entries": [
            {
                "confounder": e.confounder,
                "scope": e.scope,
                "qualifies": e.qualifies,
                "sign": e.sign,
                "spearman_rho": list(e.spearman_rho),
                "mean_abs_shap": e.mean_abs_shap,
            }
            for e in report.entries
        ],
    }


def write_shap_csv(
    matrix: ShapMatrix, X: np.ndarray, confounder_names: Sequence[str],
    ids: Sequence[str], path,
) -> None:
    """Dependence-plot-ready CSV: confounder values next to attributions."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["neighborhood_id"]
            + [f"value_{n}" for n in confounder_names]
            + [f"shap_{n}" for n in confounder_names]
            + ["base_value"]
        )
        for i, nb in enumerate(ids):
            writer.writerow(
                [nb]
                + [repr(float(v)) for v in X[i]]
                + [repr(float(v)) for v in matrix.values[i]]
                + [repr(float(matrix.base_value))]
            )
