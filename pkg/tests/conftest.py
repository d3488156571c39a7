import numpy as np
import pytest

from carbonform.boosted_trees import GbtParams
from carbonform.causal_dml import CausalForestParams
from carbonform.synth import CitySpec, generate_city

#: Nuisance parameters for tests: the production defaults (1000 trees,
#: depth 6, lr 0.01) fit the same smooth synthetic surfaces at ~20x the
#: cost; every statistical tolerance below was calibrated with these.
LIGHT_GBT = GbtParams(n_trees=150, max_depth=2, learning_rate=0.15)
LIGHT_FOREST = CausalForestParams(n_trees=100)


@pytest.fixture(scope="session")
def small_city(tmp_path_factory):
    """A compact fixture city for parser/pipeline tests (fast to regenerate)."""
    path = tmp_path_factory.mktemp("smallcity")
    spec = CitySpec(n_neighborhoods=48, grid_cols=8, households_low=10, households_high=18,
                    planned_sites=10, rail_neighborhoods=12, planned_total_units=8000, seed=5)
    truth = generate_city(spec, path)
    return path, spec, truth


@pytest.fixture(scope="session")
def fixture_city(tmp_path_factory):
    """The bundled-size 190-neighborhood city used by acceptance-style checks."""
    path = tmp_path_factory.mktemp("city190")
    spec = CitySpec(seed=0)
    truth = generate_city(spec, path)
    return path, spec, truth


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
