import numpy as np
import pytest

from qsdlab.birth_death import ABSORB, HOLD, build_bd_kernel, delayed_walk
from qsdlab.chain import AbsorbedKernel, Distribution, StateSpace
from qsdlab.errors import HypothesisFailed, NotDominated, OrderViolation
from qsdlab.gibbs import gibbs_coupled_run
from qsdlab.order import dominates
from qsdlab.trajectory import TrajectoryMeasure


def _pair(p, r, q, N, m, x0=1, x0p=3, mode=ABSORB):
    k = build_bd_kernel(delayed_walk(p, r, q, N, mode))
    S = k.space
    return (TrajectoryMeasure.homogeneous(Distribution.delta(S, x0), k, 0, m),
            TrajectoryMeasure.homogeneous(Distribution.delta(S, x0p), k, 0, m))


def test_identical_measures_coincide():
    tm, _ = _pair(0.15, 0.55, 0.30, 6, 4)
    rep = gibbs_coupled_run(tm, tm, 5000, seed=3)
    assert rep.state.eta == rep.state.eta_prime
    assert (rep.histogram == rep.histogram_prime).all()


def test_last_marginal_close_to_conditioned_law():
    tm, tmp = _pair(0.15, 0.55, 0.30, 6, 4)
    rep = gibbs_coupled_run(tm, tmp, 100_000, seed=1)
    assert rep.violations == 0
    emp = rep.empirical_marginal(tm.length - 1)
    assert 0.5 * np.abs(emp - tm.last_marginal().weights).sum() < 0.02


def test_empirical_domination_of_final_site():
    tm, tmp = _pair(0.15, 0.55, 0.30, 6, 4)
    rep = gibbs_coupled_run(tm, tmp, 50_000, seed=7)
    S = tm.space
    lo = Distribution(S, rep.empirical_marginal(4))
    hi = Distribution(S, rep.empirical_marginal(4, prime=True))
    assert dominates(lo, hi)
    # the exact laws are ordered with a margin well beyond sampling noise
    gap = np.cumsum(tm.last_marginal().weights) - np.cumsum(tmp.last_marginal().weights)
    sigma = np.sqrt(0.25 / 50_000)
    assert gap[:-1].max() > 3 * sigma


def test_tv_decreases_with_sweeps():
    tm, tmp = _pair(0.15, 0.55, 0.30, 6, 4)
    rep = gibbs_coupled_run(tm, tmp, 100_000, seed=11, checkpoint_every=1000)
    tvs = [c.tv for c in rep.checkpoints]
    assert tvs[-1] < tvs[0] / 3
    assert rep.tv_trajectory < 0.03


@pytest.mark.parametrize("mode", [ABSORB, HOLD])
def test_order_invariant_fuzz(mode):
    tm, tmp = _pair(0.2, 0.5, 0.3, 7, 5, x0=2, x0p=5, mode=mode)
    for seed in range(20):
        rep = gibbs_coupled_run(tm, tmp, 2000, seed=seed)
        assert rep.violations == 0
        assert all(a <= b for a, b in zip(rep.state.eta, rep.state.eta_prime))


def test_engines_agree():
    tm, tmp = _pair(0.15, 0.55, 0.30, 6, 4)
    a = gibbs_coupled_run(tm, tmp, 500, seed=21, engine="python")
    b = gibbs_coupled_run(tm, tmp, 500, seed=21, engine="compiled")
    assert a.state == b.state
    assert (a.histogram == b.histogram).all() and (a.site_counts == b.site_counts).all()


def test_failing_conditions_are_refused_or_caught():
    tm, tmp = _pair(0.3, 0.3, 0.4, 6, 4)
    with pytest.raises(HypothesisFailed):
        gibbs_coupled_run(tm, tmp, 10, seed=0)
    caught = 0
    for seed in range(20):
        try:
            gibbs_coupled_run(tm, tmp, 20_000, seed=seed, check_conditions=False)
        except (NotDominated, OrderViolation):
            caught += 1
    assert caught > 0


def test_general_poset_engine():
    # diamond 1 < 2, 3 < 4 with identical rows: all local conditions hold
    S = StateSpace.from_pairs([1, 2, 3, 4], [(1, 2), (1, 3), (2, 4), (3, 4)])
    pi = np.array([0.3, 0.2, 0.25, 0.15])
    k = AbsorbedKernel(S, np.tile(pi, (4, 1)), np.full(4, 0.1))
    tm = TrajectoryMeasure.homogeneous(Distribution.delta(S), k, 0, 2)
    tmp = TrajectoryMeasure.homogeneous(Distribution(S, [0.1, 0.3, 0.3, 0.3]), k, 0, 2)
    rep = gibbs_coupled_run(tm, tmp, 3000, seed=5)
    assert rep.violations == 0
    leq = S.leq
    assert all(leq[S.index(a), S.index(b)] for a, b in zip(rep.state.eta, rep.state.eta_prime))
    assert rep.tv_trajectory < 0.1
