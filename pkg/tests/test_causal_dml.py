from dataclasses import replace

import numpy as np
import pytest

from carbonform.boosted_trees import GbtParams
from carbonform.causal_dml import (
    CausalForestParams,
    EffectEstimate,
    crossfit_residualize,
    decompose_effect,
    decompose_estimates,
    estimate_effects,
    fit_causal_forest,
    fit_metrics,
    forest_from_json,
    forest_to_json,
    forest_weights,
    predict_theta,
    predict_theta_surrogate,
)
from carbonform.errors import AllZeroEffects, TooFewUnits
from conftest import LIGHT_FOREST, LIGHT_GBT


def confounded_data(seed, n=400, noise_t=0.6, noise_y=0.5):
    r = np.random.default_rng(seed)
    X = r.uniform(size=(n, 4))
    T = (2 * X[:, 0] - 1 + noise_t * r.standard_normal(n))[:, None]
    Y = 5 * X[:, 0] + 1.5 * T[:, 0] + noise_y * r.standard_normal(n)
    return X, T, Y


class TestResidualize:
    def test_pure_noise_outcome(self):
        r2s, corrs = [], []
        for seed in range(20):
            r = np.random.default_rng(seed)
            X = r.uniform(size=(300, 4))
            Y = r.standard_normal(300)
            rd = crossfit_residualize(X, Y, np.zeros((300, 1)), LIGHT_GBT, 5, seed=seed)
            r2s.append(rd.nuisance_r2_y)
            corrs.append(np.corrcoef(rd.y_res, Y - Y.mean())[0, 1])
        assert max(r2s) <= 0.1
        assert min(corrs) > 0.8  # residuals track the centered outcome

    def test_tree_representable_treatment(self):
        for seed in range(3):
            r = np.random.default_rng(seed)
            X = r.uniform(size=(500, 4))
            T = (1.0 * (X[:, 0] > 0.5) + 2.0 * (X[:, 1] > 0.3))[:, None]
            Y = r.standard_normal(500)
            rd = crossfit_residualize(
                X, Y, T, GbtParams(n_trees=300, max_depth=3, learning_rate=0.1), 5, seed=seed
            )
            assert np.mean(np.abs(rd.t_res)) < 0.05

    def test_deterministic(self):
        X, T, Y = confounded_data(3)
        a = crossfit_residualize(X, Y, T, LIGHT_GBT, 5, seed=42)
        b = crossfit_residualize(X, Y, T, LIGHT_GBT, 5, seed=42)
        assert np.array_equal(a.y_res, b.y_res)
        assert np.array_equal(a.t_res, b.t_res)
        assert np.array_equal(a.fold_assignment, b.fold_assignment)

    def test_fold_assignment_partition(self):
        X, T, Y = confounded_data(4, n=103)
        rd = crossfit_residualize(X, Y, T, LIGHT_GBT, 5, seed=0)
        counts = np.bincount(rd.fold_assignment)
        assert counts.sum() == 103
        assert counts.max() - counts.min() <= 1

    def test_near_zero_fold_means(self):
        # With informative controls, per-fold residual means stay small
        X, T, Y = confounded_data(5, n=600)
        rd = crossfit_residualize(X, Y, T, LIGHT_GBT, 5, seed=1)
        sd = rd.y_res.std()
        for f in range(5):
            assert abs(rd.y_res[rd.fold_assignment == f].mean()) < 0.2 * sd

    def test_too_few_units(self):
        X, T, Y = confounded_data(6, n=8)
        with pytest.raises(TooFewUnits):
            crossfit_residualize(X, Y, T, LIGHT_GBT, 5, seed=0)

    def test_r2_reported_out_of_fold(self):
        X, T, Y = confounded_data(7, n=800)
        rd = crossfit_residualize(X, Y, T, LIGHT_GBT, 5, seed=0)
        assert 0.5 < rd.nuisance_r2_y < 1.0
        assert 0.2 < rd.nuisance_r2_t < 1.0
        assert len(rd.nuisance_r2_t_dims) == 1


class TestForest:
    def fit(self, seed=0, n=400, params=LIGHT_FOREST):
        X, T, Y = confounded_data(seed, n=n)
        rd = crossfit_residualize(X, Y, T, LIGHT_GBT, 5, seed=seed)
        return X, rd, fit_causal_forest(X, rd, replace(params, seed=seed))

    def test_weights_sum_to_one(self, rng):
        X, _, model = self.fit()
        queries = rng.uniform(size=(25, 4))
        W = forest_weights(model, queries)
        assert np.allclose(W.sum(axis=1), 1.0, atol=1e-9)

    def test_honesty_disjoint_halves(self):
        _, _, model = self.fit(seed=1)
        for tree in model.trees:
            split = set(tree.split_index.tolist())
            est = set(tree.est_index.tolist())
            assert not (split & est)

    def test_single_tree_equals_leaf_solution(self):
        X, rd, _ = self.fit(seed=2)
        model = fit_causal_forest(X, rd, CausalForestParams(n_trees=1, seed=5))
        x = X[7]
        assert np.allclose(predict_theta(model, x), predict_theta_surrogate(model, x), atol=1e-12)

    def test_point_mass_recovers_constant(self):
        # constant X -> single leaf; unit treatment residuals with outcome c
        n, c = 40, 2.5
        X = np.zeros((n, 3))
        rng = np.random.default_rng(0)
        from carbonform.causal_dml import ResidualizedData

        t_res = np.zeros((n, 2))
        t_res[:, 0] = 1.0
        rd = ResidualizedData(
            y_res=np.full(n, c), t_res=t_res, fold_assignment=np.zeros(n, dtype=np.int64),
            nuisance_r2_y=0.0, nuisance_r2_t=0.0, nuisance_r2_t_dims=(0.0, 0.0),
            y_nuisance_pred=np.zeros(n),
        )
        model = fit_causal_forest(X, rd, CausalForestParams(n_trees=10, ridge_lambda=1e-10, seed=0))
        theta = predict_theta(model, np.zeros(3))
        assert theta[0] == pytest.approx(c, abs=1e-6)
        assert abs(theta[1]) < 1e-8

    def test_huge_ridge_shrinks_to_zero(self):
        X, rd, _ = self.fit(seed=3)
        model = fit_causal_forest(X, rd, CausalForestParams(ridge_lambda=1e9, seed=0))
        assert np.max(np.abs(predict_theta(model, X[:10]))) < 1e-6

    def test_dense_solver_oracle(self):
        rng = np.random.default_rng(9)
        n, d = 20, 3
        X = rng.uniform(size=(n, 2))
        from carbonform.causal_dml import ResidualizedData

        rd = ResidualizedData(
            y_res=rng.standard_normal(n), t_res=rng.standard_normal((n, d)),
            fold_assignment=np.zeros(n, dtype=np.int64), nuisance_r2_y=0.0,
            nuisance_r2_t=0.0, nuisance_r2_t_dims=(0.0,) * d, y_nuisance_pred=np.zeros(n),
        )
        params = CausalForestParams(n_trees=7, min_leaf=2, seed=4)
        model = fit_causal_forest(X, rd, params)
        for x in (X[0], X[11], rng.uniform(size=2)):
            w = forest_weights(model, x[None, :])[0]
            A = rd.t_res.T @ np.diag(w) @ rd.t_res + params.ridge_lambda * np.eye(d)
            b = rd.t_res.T @ np.diag(w) @ rd.y_res
            oracle = np.linalg.solve(A, b)
            assert np.allclose(predict_theta(model, x), oracle, atol=1e-8)

    def test_deterministic(self):
        X, rd, _ = self.fit(seed=6)
        m1 = fit_causal_forest(X, rd, replace(LIGHT_FOREST, seed=3))
        m2 = fit_causal_forest(X, rd, replace(LIGHT_FOREST, seed=3))
        assert np.array_equal(predict_theta(m1, X[:20]), predict_theta(m2, X[:20]))

    def test_serialization_round_trip(self):
        X, _, model = self.fit(seed=8, n=120)
        doc = forest_to_json(model)
        loaded = forest_from_json(doc)
        assert np.array_equal(predict_theta(loaded, X[:15]), predict_theta(model, X[:15]))
        assert forest_to_json(loaded) == doc


class TestEffects:
    def make_profiles(self, thetas_treatments):
        from carbonform.features import BuiltEnvVector, ConfounderVector, NeighborhoodProfile

        conf = ConfounderVector(3000, 2.0, 45, 0.3, 1.0, 0.5, 0.7, 0.3, 0.2)
        env = BuiltEnvVector(5, 3, 10, 4000, 0.4, 0.2, 150, 5)
        return [
            NeighborhoodProfile(f"z{i}", 2.0, 20, conf, env, treatment=tuple(t))
            for i, t in enumerate(thetas_treatments)
        ]

    def test_zero_treatment_zero_total(self, fixture_city_model):
        model, profiles = fixture_city_model
        zeroed = [replace(profiles[0], treatment=(0.0,) * 8)]
        estimate = estimate_effects(model, zeroed + profiles[1:])[0]
        assert estimate.total_effect == 0.0

    def test_doubling_treatment_doubles_total(self, fixture_city_model):
        model, profiles = fixture_city_model
        p = profiles[3]
        doubled = replace(p, treatment=tuple(2 * v for v in p.treatment))
        single = estimate_effects(model, [p] + profiles[:2])[0]
        double = estimate_effects(model, [doubled] + profiles[:2])[0]
        assert double.total_effect == pytest.approx(2 * single.total_effect, rel=1e-9)

    def test_total_is_exact_dot(self, fixture_city_model):
        model, profiles = fixture_city_model
        for e, p in zip(estimate_effects(model, profiles), profiles):
            assert e.total_effect == pytest.approx(
                float(np.dot(e.theta, p.treatment)), abs=0
            )


@pytest.fixture(scope="module")
def fixture_city_model(fixture_city):
    from carbonform import features as feats
    from carbonform import gtfs as gtfs_mod
    from carbonform import ingest
    from carbonform.emissions import EmissionFactorTable

    path, _, _ = fixture_city
    shares, _ = ingest.parse_elections(path / "elections.csv")
    nbs = ingest.parse_neighborhoods(path / "neighborhoods.geojson", shares).raise_on_issues()
    hhs = ingest.parse_households(path / "households.csv").raise_on_issues()
    trips = ingest.parse_trips(path / "trips.csv").raise_on_issues()
    pois = ingest.parse_pois(path / "pois.csv").raise_on_issues()
    bundle = gtfs_mod.parse_gtfs(path / "gtfs")
    profiles, _ = feats.build_profiles(nbs, hhs, trips, pois, bundle, EmissionFactorTable())
    X, y, T = feats.profiles_to_arrays(profiles)
    rd = crossfit_residualize(X, y, T, LIGHT_GBT, 5, seed=0)
    model = fit_causal_forest(X, rd, replace(LIGHT_FOREST, seed=0))
    return model, profiles


class TestDecomposition:
    def test_normalization(self):
        thetas = np.zeros((4, 8))
        thetas[:, 0] = 3.0
        thetas[:, 1] = [-1, -1, 1, 1]
        doc = decompose_effect(thetas)
        shares = doc["per_feature_percent"]
        assert shares["dist_center"] == pytest.approx(75.0)
        assert shares["dist_subcenter"] == pytest.approx(25.0)
        assert shares["transit_access"] == 0.0

    def test_sums_to_hundred(self, rng):
        thetas = rng.standard_normal((50, 8))
        doc = decompose_effect(thetas)
        assert sum(doc["per_feature_percent"].values()) == pytest.approx(100.0, abs=1e-9)
        assert sum(doc["per_dimension_percent"].values()) == pytest.approx(100.0, abs=1e-9)

    def test_permutation_invariant(self, rng):
        thetas = rng.standard_normal((30, 8))
        a = decompose_effect(thetas)
        b = decompose_effect(thetas[rng.permutation(30)])
        assert a == b

    def test_group_structure(self, rng):
        doc = decompose_effect(rng.standard_normal((10, 8)))
        f, g = doc["per_feature_percent"], doc["per_dimension_percent"]
        assert g["destination_accessibility"] == pytest.approx(
            f["dist_center"] + f["dist_subcenter"] + f["poi_density"], abs=1e-12
        )
        assert g["density"] == f["pop_density"]

    def test_all_zero(self):
        with pytest.raises(AllZeroEffects):
            decompose_effect(np.zeros((5, 8)))
        with pytest.raises(AllZeroEffects):
            decompose_estimates([])


class TestMetrics:
    def _rd(self, n):
        from carbonform.causal_dml import ResidualizedData

        return ResidualizedData(
            y_res=np.zeros(n), t_res=np.zeros((n, 1)), fold_assignment=np.zeros(n, dtype=np.int64),
            nuisance_r2_y=0.9, nuisance_r2_t=0.8, nuisance_r2_t_dims=(0.8,),
            y_nuisance_pred=np.zeros(n),
        )

    def test_perfect_fit_r2_one(self, rng):
        n = 60
        g = rng.standard_normal(n)
        totals = rng.standard_normal(n)
        y = g + totals
        rd = self._rd(n)
        metrics = fit_metrics(y, g, totals, rd)
        assert metrics["r2_combined"] == pytest.approx(1.0, abs=1e-12)
        assert metrics["nuisance_r2_y"] == 0.9

    def test_attribution_share_definition(self, rng):
        n = 500
        totals = rng.standard_normal(n)
        y = totals + rng.standard_normal(n)
        metrics = fit_metrics(y, np.zeros(n), totals, self._rd(n))
        assert metrics["attribution_share"] == pytest.approx(np.var(totals) / np.var(y))
        assert metrics["attribution_definition"] == "var(total_effect)/var(outcome)"
