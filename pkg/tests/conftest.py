import os

import numpy as np
import pytest

from bitsnn.training.data import load_dataset, make_digits


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def digits_paths(tmp_path_factory):
    out = tmp_path_factory.mktemp("digits")
    return make_digits(os.fspath(out), seed=0)


@pytest.fixture(scope="session")
def digits(digits_paths):
    train_p, test_p = digits_paths
    return load_dataset(train_p), load_dataset(test_p)
