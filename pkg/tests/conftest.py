import sys

import numpy as np
import pytest

from rofsim.link import build_testbed_scenario
from rofsim.modem import ModemConfig
from rofsim.signals import RngHandle


@pytest.fixture
def rng():
    return RngHandle(seed=12345, stream_id=7)


@pytest.fixture
def cfg():
    return ModemConfig()


@pytest.fixture
def scenario():
    return build_testbed_scenario()


def random_bits(n, seed=0):
    return np.random.default_rng(seed).integers(0, 2, n, dtype=np.uint8)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
