import numpy as np
import pytest

from deltascan.suite import random_instance


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def instance(rng):
    def make(L, d_k=4, d_v=3, dtype=np.float64):
        batch, S0 = random_instance(rng, L, d_k, d_v)
        return batch.astype(dtype), S0.astype(dtype)

    return make


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
