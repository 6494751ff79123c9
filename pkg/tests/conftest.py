import numpy as np
import pytest

from cda_forge.chain import AbsorbingChain


def worked_chain():
    # states 1 = Failure, 2 = Success (absorbing); 3 starts
    P = [[1, 0, 0, 0],
         [0, 1, 0, 0],
         [0, 0.8, 0, 0.2],
         [0.4, 0.1, 0, 0.5]]
    return AbsorbingChain((1, 2, 3, 4), (1, 2), np.array(P), start=2, success=2, failure=1)


@pytest.fixture
def worked():
    return worked_chain()


def random_chain(rng, n_trans=None, n_abs=None, density=0.6):
    """Random valid absorbing chain; every transient row leaks to an absorbing state."""
    n_trans = n_trans or int(rng.integers(1, 8))
    n_abs = n_abs or int(rng.integers(1, 3))
    n = n_trans + n_abs
    P = np.zeros((n, n))
    for i in range(n_abs):
        P[i, i] = 1.0
    for i in range(n_abs, n):
        w = rng.random(n) * (rng.random(n) < density)
        w[int(rng.integers(0, n_abs))] += 0.05 + rng.random()
        P[i] = w / w.sum()
    states = tuple(f"x{i}" for i in range(n))
    start = int(rng.integers(n_abs, n))
    succ = states[0]
    fail = states[1] if n_abs > 1 else None
    return AbsorbingChain(states, states[:n_abs], P, start=start, success=succ, failure=fail)
