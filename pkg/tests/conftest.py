import numpy as np
import pytest

from truncated_etd.mdp import random_mdp, random_policy


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_instance(rng):
    mdp = random_mdp(4, 2, rng, discount=0.9)
    return mdp, random_policy(4, 2, rng, floor=0.2), random_policy(4, 2, rng, floor=0.2)


_ACCEPTANCE = []


@pytest.fixture
def acceptance():
    """``record(k, passed, detail)``: prints and collects one criterion line."""

    def record(k, passed, detail):
        line = f"ACCEPTANCE {k}: {'PASS' if passed else 'FAIL'} {detail}"
        print(line)
        _ACCEPTANCE.append((k, line))
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)
