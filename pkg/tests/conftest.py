import itertools

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def brute_sym_distance(x, y):
    """min over all permutations of the sup-distance, no sorting shortcut."""
    return min(max(abs(a - b) for a, b in zip(x, p)) for p in itertools.permutations(y))


def brute_cube(center, L, window):
    """Every configuration in a product window within d_S <= floor(L)."""
    n = len(center)
    r = int(np.floor(L))
    return {y for y in itertools.product(window, repeat=n) if brute_sym_distance(y, center) <= r}


@pytest.fixture
def rs():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int(k.rstrip("ab")), k)):
        terminalreporter.write_line(ACCEPTANCE[key])
