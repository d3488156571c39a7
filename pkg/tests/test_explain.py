import numpy as np
import pytest

from carbonform._kernels import grow_tree_mse, tree_shap
from carbonform.causal_dml import CausalForestParams, crossfit_residualize, fit_causal_forest
from carbonform.explain import (
    ModerationReport,
    brute_force_shap,
    default_scopes,
    moderation_analysis,
    moderation_report_to_json,
    shap_by_dimension,
    shap_matrix,
    surrogate_deviation,
    write_shap_csv,
    _tree_depth,
)
from carbonform.synth import SyntheticSpec, generate
from conftest import LIGHT_FOREST, LIGHT_GBT


def run_kernel(tree_arrays, x):
    feat, thr, left, right, value, nsamp = tree_arrays
    p = len(x)
    phi = np.zeros(p)
    depth = _tree_depth(left, right)
    size = (depth + 2) * (depth + 3) // 2
    tree_shap(left, right, feat, thr, value, nsamp.astype(np.float64), x, phi,
              np.empty(size, np.int64), np.empty(size), np.empty(size), np.empty(size))
    return phi


def random_tree(rng, n=40, p=4, depth=3):
    X = rng.uniform(size=(n, p))
    y = rng.normal(size=n)
    return X, grow_tree_mse(X, y, np.arange(n, dtype=np.int64), depth, 2)


class TestTreeShapKernel:
    def test_depth_zero(self, rng):
        X, arrays = random_tree(rng, depth=0)
        phi = run_kernel(arrays, X[0])
        assert np.all(phi == 0.0)

    def test_matches_brute_force(self, rng):
        worst = 0.0
        for _ in range(40):
            p = int(rng.integers(2, 6))
            X, arrays = random_tree(rng, n=int(rng.integers(20, 60)), p=p,
                                    depth=int(rng.integers(1, 4)))
            feat, thr, left, right, value, nsamp = arrays
            x = rng.uniform(size=p)
            phi = run_kernel(arrays, x)
            phi_bf, _ = brute_force_shap(feat, thr, left, right, value,
                                         nsamp.astype(float), x)
            worst = max(worst, float(np.max(np.abs(phi - phi_bf))))
        assert worst < 1e-9

    def test_repeated_feature_splits(self, rng):
        # few features force repeated splits along paths (unwind logic)
        for _ in range(10):
            X, arrays = random_tree(rng, n=150, p=2, depth=3)
            feat, thr, left, right, value, nsamp = arrays
            x = rng.uniform(size=2)
            phi = run_kernel(arrays, x)
            phi_bf, _ = brute_force_shap(feat, thr, left, right, value, nsamp.astype(float), x)
            assert np.max(np.abs(phi - phi_bf)) < 1e-9

    def test_never_split_feature_exactly_zero(self, rng):
        n = 60
        X = rng.uniform(size=(n, 4))
        X[:, 3] = 0.5  # constant: cannot be split on
        y = rng.normal(size=n)
        arrays = grow_tree_mse(X, y, np.arange(n, dtype=np.int64), 3, 2)
        phi = run_kernel(arrays, rng.uniform(size=4))
        assert phi[3] == 0.0


@pytest.fixture(scope="module")
def small_forest():
    data = generate(SyntheticSpec(n=300, n_confounders=4, n_treatments=2,
                                  theta_base=1.0, theta_slope=1.5, seed=3))
    rd = crossfit_residualize(data["X"], data["Y"], data["T"], LIGHT_GBT, 5, seed=3)
    model = fit_causal_forest(data["X"], rd, CausalForestParams(n_trees=40, seed=3))
    return data, model


class TestShapMatrix:
    def test_local_accuracy_against_surrogate(self, small_forest):
        from carbonform.causal_dml import predict_theta_surrogate

        data, model = small_forest
        X = data["X"]
        readout = np.array([1.0, 1.0])
        matrix = shap_matrix(model, X, readout)
        surrogate = predict_theta_surrogate(model, X) @ readout
        recon = matrix.values.sum(axis=1) + matrix.base_value
        assert np.max(np.abs(recon - surrogate)) < 1e-6

    def test_per_dimension_readouts(self, small_forest):
        data, model = small_forest
        mats = shap_by_dimension(model, data["X"][:20])
        assert set(mats) == {"dim_0", "dim_1"}
        assert mats["dim_0"].values.shape == (20, 4)

    def test_default_scopes(self):
        assert set(default_scopes(2)) == {"combined"}
        scopes8 = default_scopes(8)
        assert set(scopes8) == {"combined", "destination_accessibility", "density",
                                "diversity", "design", "distance_to_transit"}
        assert scopes8["combined"].sum() == 8

    def test_surrogate_deviation_reported(self, small_forest):
        data, model = small_forest
        dev = surrogate_deviation(model, data["X"][:50])
        assert np.isfinite(dev) and dev >= 0.0

    def test_csv_export(self, small_forest, tmp_path):
        data, model = small_forest
        matrix = shap_matrix(model, data["X"][:5], np.ones(2))
        path = tmp_path / "shap.csv"
        write_shap_csv(matrix, data["X"][:5], [f"x_{j}" for j in range(4)],
                       [f"z{i}" for i in range(5)], path)
        import csv

        rows = list(csv.DictReader(path.open()))
        assert len(rows) == 5
        assert float(rows[0]["shap_x_0"]) == pytest.approx(matrix.values[0, 0])


class TestModeration:
    def test_planted_moderator_smoke(self):
        data = generate(SyntheticSpec(n=500, n_confounders=4, theta_base=1.0,
                                      theta_slope=3.0, noise_t=0.7, noise_y=0.4, seed=21))
        report = moderation_analysis(
            data["X"], data["Y"], data["T"], ["income", "b", "c", "d"],
            gbt_params=LIGHT_GBT, forest_params=CausalForestParams(n_trees=60),
            n_runs=3, master_seed=1,
        )
        entry = next(e for e in report.entries if e.confounder == "income" and e.scope == "combined")
        assert entry.qualifies and entry.sign == "+"
        assert len(entry.spearman_rho) == 3
        assert isinstance(report, ModerationReport)

    def test_qualification_invariant(self):
        data = generate(SyntheticSpec(n=300, n_confounders=3, theta_base=1.0,
                                      theta_slope=2.0, seed=5))
        report = moderation_analysis(
            data["X"], data["Y"], data["T"],
            gbt_params=LIGHT_GBT, forest_params=CausalForestParams(n_trees=40),
            n_runs=3, master_seed=2,
        )
        for e in report.entries:
            if e.qualifies:
                rhos = np.array(e.spearman_rho)
                assert np.all(rhos > 0) or np.all(rhos < 0)
                assert np.min(np.abs(rhos)) >= report.min_abs_rho

    def test_report_json_schema(self):
        data = generate(SyntheticSpec(n=260, n_confounders=3, theta_base=1.0, seed=6))
        report = moderation_analysis(
            data["X"], data["Y"], data["T"], gbt_params=LIGHT_GBT,
            forest_params=CausalForestParams(n_trees=20), n_runs=2, master_seed=0,
        )
        doc = moderation_report_to_json(report)
        assert doc["schema_version"] == "moderation/1"
        assert doc["sign_convention"]
        assert {"confounder", "scope", "qualifies", "sign", "spearman_rho", "mean_abs_shap"} <= set(doc["entries"][0])
