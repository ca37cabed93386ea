import numpy as np
import pytest

from fairprune.dataset import perturb_sensitive, synth_biased
from fairprune.ensemble import build_profile, train_bagging


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def biased():
    return synth_biased(300, 0.6, 4, seed=7)


@pytest.fixture(scope="session")
def bagged(biased):
    e = train_bagging(biased, m=7, max_depth=3, seed=11)
    prof = build_profile(e, biased, perturb_sensitive(biased, 5))
    return e, prof
