import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from rallyqoc.hamiltonians import build_ising, random_ising


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def ising2():
    """Small deterministic two-spin chain with a continuous [-1, 1] domain."""
    return build_ising(2, [0.8, 0.7], [0.6, 0.5])


@pytest.fixture
def ising3():
    rng = np.random.default_rng(7)
    return random_ising(3, rng)
