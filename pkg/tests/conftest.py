import os
import sys

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

# PNPH_SEED only feeds randomized tests; solver code never reads it.
_SEED = os.environ.get("PNPH_SEED")

settings.register_profile("default", derandomize=_SEED is None, deadline=None,
                          max_examples=40)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(int(_SEED) if _SEED is not None else 20240611)


_ACCEPTANCE = []


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion."""

    def record(number, title, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number:>2} {title}: {detail}"
        _ACCEPTANCE.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_ACCEPTANCE):
        terminalreporter.write_line(line)
