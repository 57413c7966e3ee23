import os
import sys

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

from weakkws.corpus import make_micro_corpus  # noqa: E402
from weakkws.smoke import write_noise_dir  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def micro_corpus(tmp_path_factory):
    return make_micro_corpus(tmp_path_factory.mktemp("kw"), n_train=4, n_val=1, n_test=1, seed=11)


@pytest.fixture(scope="session")
def noise_dir(tmp_path_factory):
    return write_noise_dir(tmp_path_factory.mktemp("noise"), seed=5, count=4, seconds=4.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
