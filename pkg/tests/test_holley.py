import itertools

import numpy as np
import pytest

from qsdlab.birth_death import build_bd_kernel, delayed_walk
from qsdlab.chain import AbsorbedKernel, Distribution, StateSpace
from qsdlab.errors import InstanceTooLarge
from qsdlab.holley import (
    check_condition_a,
    check_condition_b,
    check_condition_b_nonhomogeneous,
    check_condition_c,
    check_trajectory_irreducibility,
    trajectory_components,
)
from qsdlab.periodic import pq_walk_kernel
from qsdlab.trajectory import TrajectoryMeasure

from conftest import brute_upper_sets, random_kernel, random_poset

TOL = 1e-12


# ---- oracles written straight from the definitions, one quadruple at a time


def oracle_b(Q, Qp, space, classes=None):
    A, B = Q.dense, Qp.dense
    leq = space.leq
    n = len(space)
    A2, B2 = A @ A, B @ B
    for U in brute_upper_sets(space):
        for x, xp, z, zp in itertools.product(range(n), repeat=4):
            if not (leq[x, xp] and leq[z, zp]) or A2[x, z] <= 0 or B2[xp, zp] <= 0:
                continue
            if classes is not None and classes[x] != classes[xp]:
                continue
            lhs = sum(A[x, y] * A[y, z] for y in range(n) if U[y]) / A2[x, z]
            rhs = sum(B[xp, y] * B[y, zp] for y in range(n) if U[y]) / B2[xp, zp]
            if lhs > rhs + TOL:
                return False
    return True


def oracle_c(Q, Qp, space):
    A, B = Q.dense, Qp.dense
    n = len(space)
    for U in brute_upper_sets(space):
        for x, xp in itertools.product(range(n), repeat=2):
            if not space.leq[x, xp]:
                continue
            if A[x, U].sum() / (1 - Q.absorption[x]) > B[xp, U].sum() / (1 - Qp.absorption[xp]) + TOL:
                return False
    return True


def oracle_a(nu, nup, Q, Qp, space):
    A, B = Q.dense, Qp.dense
    n = len(space)
    dl, dr = nu.weights @ A, nup.weights @ B
    for U in brute_upper_sets(space):
        for z, zp in itertools.product(range(n), repeat=2):
            if not space.leq[z, zp] or dl[z] <= 0 or dr[zp] <= 0:
                continue
            if (nu.weights[U] * A[U, z]).sum() / dl[z] > (nup.weights[U] * B[U, zp]).sum() / dr[zp] + TOL:
                return False
    return True


def _monotone_kernel(rng, space, bias):
    """Kernels skewed towards upward moves so that both outcomes occur."""
    n = len(space)
    Q = rng.random((n, n)) ** bias * (rng.random((n, n)) < 0.7)
    Q = Q + np.eye(n) * 0.5
    a = rng.random(n) * 0.3
    Q = Q / Q.sum(axis=1, keepdims=True) * (1 - a)[:, None]
    return AbsorbedKernel(space, Q, a)


@pytest.mark.parametrize("total", [True, False])
def test_conditions_b_c_match_oracle(rng, total):
    outcomes = {"b": set(), "c": set()}
    for _ in range(60):
        n = int(rng.integers(2, 6))
        space = StateSpace.integers(n) if total else random_poset(rng, n)
        if rng.random() < 0.5:
            Q = Qp = _monotone_kernel(rng, space, 3)
        else:
            Q, Qp = _monotone_kernel(rng, space, 1), _monotone_kernel(rng, space, 1)
        b, c = check_condition_b(Q, Qp), check_condition_c(Q, Qp)
        assert bool(b) == oracle_b(Q, Qp, space)
        assert bool(c) == oracle_c(Q, Qp, space)
        outcomes["b"].add(bool(b))
        outcomes["c"].add(bool(c))
    assert outcomes["b"] == {True, False} and outcomes["c"] == {True, False}


def test_condition_b_bd_up_to_eight_states(rng):
    for _ in range(20):
        n = int(rng.integers(2, 9))
        P = rng.dirichlet([1, 3, 1], size=n)
        from qsdlab.birth_death import BirthDeathSpec

        k = build_bd_kernel(BirthDeathSpec(P[:, 0], P[:, 1], P[:, 2]))
        assert bool(check_condition_b(k)) == oracle_b(k, k, k.space)
        assert bool(check_condition_c(k)) == oracle_c(k, k, k.space)


def test_condition_b_counterexample_is_genuine(rng):
    for _ in range(40):
        k = _monotone_kernel(rng, StateSpace.integers(5), 1)
        rep = check_condition_b(k)
        if rep:
            continue
        ce = rep.counterexample
        A = k.dense
        x, xp, z, zp, y = (ce[key] - 1 for key in ("x", "x_prime", "z", "z_prime", "threshold"))
        A2 = A @ A
        lhs = (A[x, y:] * A[y:, z]).sum() / A2[x, z]
        rhs = (A[xp, y:] * A[y:, zp]).sum() / A2[xp, zp]
        assert x <= xp and z <= zp and lhs > rhs
        assert lhs == pytest.approx(ce["lhs"]) and rhs == pytest.approx(ce["rhs"])


def test_condition_a_examples_and_oracle(rng):
    k = build_bd_kernel(delayed_walk(0.15, 0.55, 0.30, 12))
    S = k.space
    d1 = Distribution.delta(S)
    for _ in range(10):
        assert check_condition_a(d1, Distribution(S, rng.dirichlet(np.ones(12))), k)
    nu = Distribution(S, rng.dirichlet(np.ones(12)))
    assert check_condition_a(nu, nu, k)
    # geometric vs shifted geometric on the delayed walk
    g = 0.5 ** np.arange(12)
    geo = Distribution(S, g, normalize=True)
    shifted = Distribution(S, np.concatenate([[0.0], g[:-1]]), normalize=True)
    for a, b in [(geo, shifted), (shifted, geo)]:
        assert bool(check_condition_a(a, b, k)) == oracle_a(a, b, k, k, S)
    assert not check_condition_a(shifted, geo, k)
    for _ in range(30):
        space = StateSpace.integers(4) if rng.random() < 0.5 else random_poset(rng, 4)
        Q = random_kernel(rng, 4, space=space)
        a, b = (Distribution(space, rng.dirichlet(np.ones(4))) for _ in range(2))
        assert bool(check_condition_a(a, b, Q)) == oracle_a(a, b, Q, Q, space)


def test_condition_c_excludes_nothing_when_rows_alive():
    k = build_bd_kernel(delayed_walk(0.15, 0.55, 0.30, 30))
    assert check_condition_c(k)


def test_condition_b_vacuous():
    S = StateSpace.integers(3)
    # every path is absorbed after one step: Q^2 = 0
    k = AbsorbedKernel(S, np.array([[0, 0.5, 0], [0, 0, 0], [0, 0, 0]]), [0.5, 0.99, 0.99])
    assert check_condition_b(k)


def test_class_restriction():
    k = pq_walk_kernel(0.25, 0.75, 12)
    cls = np.arange(12) % 2
    assert not check_condition_b(k) and not check_condition_c(k)
    assert check_condition_b(k, classes=cls) and check_condition_c(k, classes=cls)
    assert oracle_b(k, k, k.space, classes=cls)


def test_nonhomogeneous():
    k = build_bd_kernel(delayed_walk(0.15, 0.55, 0.30, 8))
    assert bool(check_condition_b_nonhomogeneous([k] * 4, [k] * 4)) == bool(check_condition_b(k))
    bad = build_bd_kernel(delayed_walk(0.3, 0.3, 0.4, 8))
    rep = check_condition_b_nonhomogeneous([k, k, k, bad], [k, k, k, bad], start=0)
    assert not rep and rep.counterexample["k"] == 3
    rep = check_condition_b_nonhomogeneous([k, k, k, bad], [k, k, k, bad], start=10)
    assert rep.counterexample["k"] == 13
    # forced first jump to 1, then Q, against all-Q
    S = k.space
    forced = AbsorbedKernel.from_rows(S, {x: {1: 1.0} for x in S.states})
    assert check_condition_b_nonhomogeneous([forced, k, k], [k, k, k])


def test_irreducibility():
    k = build_bd_kernel(delayed_walk(0.15, 0.55, 0.30, 300))
    tm = TrajectoryMeasure.homogeneous(Distribution.delta(k.space), k, 0, 50)
    assert check_trajectory_irreducibility(tm)  # shortcut, far too many paths to enumerate
    small = build_bd_kernel(delayed_walk(0.15, 0.55, 0.30, 5))
    tms = TrajectoryMeasure.homogeneous(Distribution.delta(small.space), small, 0, 3)
    assert check_trajectory_irreducibility(tms, shortcut=False)
    pq = pq_walk_kernel(0.25, 0.75, 5)
    tmp = TrajectoryMeasure.homogeneous(Distribution.delta(pq.space), pq, 0, 2)
    assert set(tmp.table()) == {(1, 2, 1), (1, 2, 3)}
    assert check_trajectory_irreducibility(tmp)
    # two separate cycles: 1->2->1 and 3->4->3, started on both
    S = StateSpace.integers(4)
    two = AbsorbedKernel.from_rows(S, {1: {2: 0.9, 0: 0.1}, 2: {1: 1.0}, 3: {4: 1.0}, 4: {3: 1.0}})
    tm2 = TrajectoryMeasure.homogeneous(Distribution(S, [0.5, 0, 0.5, 0]), two, 0, 2)
    assert trajectory_components(tm2) == 2 and not check_trajectory_irreducibility(tm2)
    # interval support is needed for the shortcut
    tm3 = TrajectoryMeasure.homogeneous(Distribution(small.space, [0.5, 0, 0.5, 0, 0]), small, 0, 2)
    assert check_trajectory_irreducibility(tm3)
    big = pq_walk_kernel(0.5, 0.5, 60)
    with pytest.raises(InstanceTooLarge):
        check_trajectory_irreducibility(TrajectoryMeasure.homogeneous(Distribution.delta(big.space, 30), big, 0, 40))
