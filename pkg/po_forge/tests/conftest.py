import pytest
import numpy as np

from po_forge.model import preset_models
from po_forge.estimate import EstimatorSettings
from po_forge.simulate import late3_dgp


@pytest.fixture
def late_model():
    return preset_models()['late3']


@pytest.fixture
def mto_model():
    return preset_models()['mto7']


@pytest.fixture
def fast_settings():
    # fixed penalty and no bootstrap keeps the estimators quick
    return EstimatorSettings(folds=2, penalty=0.01, bootstrap=0, seed=3)


@pytest.fixture
def late_data():
    data, truth = late3_dgp().generate(4000, seed=11)
    return data


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
