import numpy as np
import pytest

from gpner import config
from gpner.data import synth_corpus


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def small_cfg(**over):
    base = {"encoder.v": 8, "head.d": 4, "seed": 3}
    base.update(over)
    return config.resolve(overrides=base)


@pytest.fixture
def toy_corpus():
    return synth_corpus(5, 12, 2, nested=True)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
