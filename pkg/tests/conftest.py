import numpy as np
import pytest

from homoscale import synthesis


def random_h(rng, pert=64.0, width=320, height=480):
    """Corner-perturbation homography, the same prior the generator uses."""
    off = rng.uniform(-pert, pert, size=(4, 2))
    return synthesis.homography_from_offsets(off, width, height)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_verdicts = []


def verdict(name, ok, detail=""):
    """Record and print one acceptance line."""
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    _verdicts.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _verdicts:
        terminalreporter.section("acceptance")
        for line in _verdicts:
            terminalreporter.write_line(line)
