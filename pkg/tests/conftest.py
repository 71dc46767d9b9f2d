import numpy as np
import pytest

from fecnn import codec, nn
from fecnn.scheme import PlanEvaluator


@pytest.fixture(scope="session")
def ref_model():
    return nn.load_model()


@pytest.fixture(scope="session")
def test_set():
    return nn.load_dataset()


@pytest.fixture(scope="session")
def plan_evaluator(ref_model, test_set):
    return PlanEvaluator(ref_model, test_set, codec.Representation())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
