import itertools

import numpy as np
import pytest

from qsdlab.chain import AbsorbedKernel, StateSpace


def random_kernel(rng, n, density=0.6, absorb_scale=0.4, space=None):
    """Random substochastic kernel on n states with every row alive."""
    space = space or StateSpace.integers(n)
    Q = rng.random((n, n)) * (rng.random((n, n)) < density)
    for i in range(n):
        if Q[i].sum() == 0:
            Q[i, rng.integers(n)] = 1.0
    a = rng.random(n) * absorb_scale
    Q = Q / Q.sum(axis=1, keepdims=True) * (1 - a)[:, None]
    return AbsorbedKernel(space, Q, a)


def brute_upper_sets(space):
    """Every up-closed subset, by filtering all 2^n subsets."""
    n = len(space)
    leq = space.leq
    out = []
    for bits in itertools.product([False, True], repeat=n):
        m = np.array(bits)
        if all(m[j] for i in range(n) if m[i] for j in range(n) if leq[i, j]):
            out.append(m)
    return out


def random_poset(rng, n, p=0.3):
    """Random partial order on 1..n with 1 as minimum (edges only go up in index)."""
    pairs = [(1, j) for j in range(2, n + 1)]
    for i in range(2, n + 1):
        for j in range(i + 1, n + 1):
            if rng.random() < p:
                pairs.append((i, j))
    return StateSpace.from_pairs(range(1, n + 1), pairs, minimal=1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
