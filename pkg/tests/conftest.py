import sys
from pathlib import Path

import numpy as np
import pytest

TESTS = Path(__file__).parent
sys.path.insert(0, str(TESTS))

STUB = TESTS / "stubs" / "stub_evaluator.py"

PARENT_1 = "40-30-61-31-00-60-42-13"
PARENT_2 = "40-30-21-61-22-72-53-11"
WORKED_CHILD = "40-30-61-61-02-72-52-13"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def stub_command():
    def make(*args):
        return [sys.executable, str(STUB), *args]

    return make


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
