"""Acceptance criteria.  Each test prints one ``PASS``/``FAIL`` line to the terminal.

Run alone with ``pytest tests/test_acceptance.py -v``.
"""
import json
import math
import time

import numpy as np
import pytest

from qsdlab.birth_death import (
    ABSORB,
    HOLD,
    BirthDeathSpec,
    bd_condition_bb2,
    bd_condition_bb3,
    build_bd_kernel,
    cavender_family,
    delayed_walk,
    family_raw_weights,
    gamma_of,
    likelihood_ratio_increasing,
    minimal_qsd_closed_form,
    qsd_recursion_solve,
)
from qsdlab.chain import (
    Distribution,
    StateSpace,
    conditioned_orbit,
    evolve_conditioned,
    qsd_residual,
)
from qsdlab.cli import main
from qsdlab.ctrw import CtrwSpec, ct_conditioned, discrete_to_continuous_limit_check
from qsdlab.errors import NegativeWeight
from qsdlab.gibbs import gibbs_coupled_run
from qsdlab.holley import check_condition_b, check_condition_c
from qsdlab.order import dominates
from qsdlab.periodic import assemble_nu_star, cyclic_classes, lemma_p31_check, periodic_yaglom, pq_walk_kernel
from qsdlab.trajectory import TrajectoryMeasure

from conftest import random_kernel


@pytest.fixture
def report(capsys):
    """Print a verdict line outside pytest's capture, then assert it."""

    def _report(label, ok, detail=""):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {label}: {detail}")
        assert ok, f"criterion {label}: {detail}"

    return _report


def _orbit(nu, k, n):
    out = [nu]
    orbit = conditioned_orbit(nu, k)
    for _ in range(n):
        out.append(Distribution(k.space, next(orbit)[0], normalize=True))
    return out


# --------------------------------------------------------------- 1-3: delayed walk


def test_criterion_1_yaglom_limit_of_delayed_walk(report):
    t0 = time.perf_counter()
    k = build_bd_kernel(delayed_walk(0.15, 0.55, 0.30, 400))
    lim = evolve_conditioned(Distribution.delta(k.space), k, 5000)
    closed = minimal_qsd_closed_form(0.5, 400)
    tv = lim.tv(closed)
    k2 = build_bd_kernel(delayed_walk(0.15, 0.55, 0.30, 800))
    lim2 = evolve_conditioned(Distribution.delta(k2.space), k2, 5000)
    tv_n = 0.5 * (np.abs(lim2.weights[:400] - lim.weights).sum() + lim2.weights[400:].sum())
    dt = time.perf_counter() - t0
    report("1", tv < 1e-6 and tv_n < 1e-9 and dt < 10,
           f"TV to closed form after 5000 iterations {tv:.3e} (need < 1e-6); "
           f"N=400 vs N=800 TV {tv_n:.3e} (need < 1e-9); {dt:.1f} s (need < 10 s)")


def test_criterion_2_monotone_sequence(report):
    k = build_bd_kernel(delayed_walk(0.15, 0.55, 0.30, 400))
    its = _orbit(Distribution.delta(k.space), k, 501)
    bad = [n for n in range(501) if not dominates(its[n], its[n + 1], tol=1e-12)]
    report("2", not bad, f"delta_1 T_n below delta_1 T_(n+1) for n = 0..500; failures {bad[:5]}")


def test_criterion_3_domination_of_arbitrary_starts(report):
    rng = np.random.default_rng(2024)
    k = build_bd_kernel(delayed_walk(0.15, 0.55, 0.30, 400))
    base = _orbit(Distribution.delta(k.space), k, 200)
    bad = []
    for i in range(20):
        # mix of full-support and sparse starts
        if i % 2:
            w = rng.dirichlet(np.ones(400))
        else:
            w = np.zeros(400)
            w[rng.choice(400, 5, replace=False)] = rng.dirichlet(np.ones(5))
        other = _orbit(Distribution(k.space, w), k, 200)
        bad += [(i, n) for n in range(201) if not dominates(base[n], other[n])]
    report("3", not bad, f"20 random starts, n = 0..200; failures {bad[:5]}")


# --------------------------------------------------------------- 4-5: birth-death


def test_criterion_4_reduced_conditions_agree_with_generic(report):
    rng = np.random.default_rng(4)
    t0 = time.perf_counter()
    mismatches, held = [], 0
    for i in range(500):
        N = int(rng.integers(1, 13))
        if i % 3 == 0:
            p, r, q = rng.dirichlet([1, 1, 1])
            spec = BirthDeathSpec.constant(p, r, q, N, HOLD if i % 2 else ABSORB)
        else:
            w = rng.dirichlet([1, 1, 1], size=N)
            spec = BirthDeathSpec(w[:, 0], w[:, 1], w[:, 2], HOLD if i % 2 else ABSORB)
        reduced = bool(bd_condition_bb2(spec)) and bool(bd_condition_bb3(spec))
        k = build_bd_kernel(spec)
        generic = bool(check_condition_b(k)) and bool(check_condition_c(k))
        held += reduced
        if reduced != generic:
            mismatches.append(i)
    dt = time.perf_counter() - t0
    report("4", not mismatches and dt < 60,
           f"500 specs ({held} satisfy the conditions), mismatches {mismatches[:5]}, {dt:.1f} s (need < 60 s)")


def test_criterion_5_cavender_family(report):
    lam = 1 / 3
    g = gamma_of(lam)
    nu1s = [0.02, 0.05, 0.1, 0.15, g]
    worst_term, worst_res, pts = 0.0, 0.0, []
    for v in nu1s:
        pt = cavender_family(lam, v)
        pts.append(pt)
        N = len(pt.weights.space)
        rec = qsd_recursion_solve(lam, v, N)
        ref = family_raw_weights(lam, v, N)
        # stability horizon: the recursion amplifies rounding by about lam^(-x/2)
        horizon = ref > 1e-13
        worst_term = max(worst_term, float(np.abs(rec - ref)[horizon].max()))
        k = build_bd_kernel(delayed_walk(0.25 * 0.5, 0.5, 0.75 * 0.5, N))
        worst_res = max(worst_res, qsd_residual(pt.weights, k))
    try:
        qsd_recursion_solve(lam, g + 0.01, 2000)
        negative = False
    except NegativeWeight:
        negative = True
    N = 400
    fam = [cavender_family(lam, v, N).weights for v in nu1s]
    ordered = all(likelihood_ratio_increasing(fam[i], fam[i + 1]) and dominates(fam[i + 1], fam[i])
                  for i in range(len(fam) - 1))
    report("5", worst_term < 1e-10 and worst_res < 1e-8 and negative and ordered,
           f"max termwise gap {worst_term:.2e} (need < 1e-10), max residual {worst_res:.2e} (need < 1e-8), "
           f"negative weight past gamma {negative}, likelihood-ratio ordering {ordered}")


# --------------------------------------------------------------- 6-7: trajectories


def test_criterion_6_gibbs_coupling(report):
    k = build_bd_kernel(delayed_walk(0.15, 0.55, 0.30, 6))
    S = k.space
    tm = TrajectoryMeasure.homogeneous(Distribution.delta(S, 1), k, 0, 4)
    tmp = TrajectoryMeasure.homogeneous(Distribution.delta(S, 3), k, 0, 4)
    t0 = time.perf_counter()
    viol, tvs = 0, []
    for seed in range(20):
        rep = gibbs_coupled_run(tm, tmp, 100_000, seed=seed)
        viol += rep.violations
        tvs.append(max(rep.tv_trajectory, rep.tv_trajectory_prime))
    dt = time.perf_counter() - t0
    report("6", viol == 0 and max(tvs) < 0.03 and dt < 30,
           f"|S|=6, 5 sites, 20 seeds x 1e5 sweeps: {viol} order violations, max TV {max(tvs):.4f} "
           f"(need < 0.03), {dt:.1f} s (need < 30 s)")


def test_criterion_7_last_marginal_identity(report):
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        n_states = int(rng.integers(1, 6))
        k = random_kernel(rng, n_states)
        nu = Distribution(k.space, rng.dirichlet(np.ones(n_states)))
        m = int(rng.integers(1, 5))
        tm = TrajectoryMeasure.homogeneous(nu, k, 0, m)
        worst = max(worst, float(np.abs(tm.last_marginal().weights - evolve_conditioned(nu, k, m).weights).max()))
    report("7", worst < 1e-12, f"100 instances, max deviation {worst:.2e} (need < 1e-12)")


# --------------------------------------------------------------- 8: periodic walk


@pytest.fixture(scope="module")
def periodic_run():
    N = 401
    k = pq_walk_kernel(0.25, 0.75, N)
    dec = cyclic_classes(k)
    res = periodic_yaglom(k, dec, max_k=500_000, tol=1e-13)
    asm = assemble_nu_star(res.limits, k, dec)
    closed = minimal_qsd_closed_form(1 / 3, N)
    return k, dec, res, asm, closed


def test_criterion_8a_class_limits(report, periodic_run):
    k, dec, res, asm, closed = periodic_run
    tvs = []
    for j, nb in enumerate(res.limits, start=1):
        mask = dec.mask(j, k.space)
        w = np.where(mask, closed.weights, 0.0)
        tvs.append(nb.tv(Distribution(k.space, w / w.sum())))
    report("8a", max(tvs) < 1e-4,
           f"odd/even class limits vs conditioned minimal QSD: TV {tvs[0]:.3e}, {tvs[1]:.3e} (need < 1e-4)")


def test_criterion_8b_assembled_qsd(report, periodic_run):
    k, dec, res, asm, closed = periodic_run
    tv = asm.nu_star.tv(closed)
    report("8b", tv < 1e-6, f"assembled QSD vs closed form: TV {tv:.3e} (need < 1e-6)")


def test_criterion_8c_survival_mass(report, periodic_run):
    k, dec, res, asm, closed = periodic_run
    gap = abs(asm.alpha - 2 * math.sqrt(0.25 * 0.75))
    report("8c", gap < 1e-8, f"a(nu_star) = {asm.alpha:.10f}, gap to 2 sqrt(pq) {gap:.3e} (need < 1e-8)")


def test_criterion_8d_class_identities(report, periodic_run):
    k, dec, res, asm, closed = periodic_run
    rep = lemma_p31_check(asm.nu_star, k, dec, tol=1e-9)
    err = max(rep.mass_balance_error, rep.shift_error, rep.product_error)
    report("8d", rep.holds, f"per-class identities on the assembled QSD: max error {err:.2e} (need < 1e-9)")


# --------------------------------------------------------------- 9: continuous time


def test_criterion_9_continuous_time_limit(report):
    N = 200
    S = StateSpace.integers(N)
    d1 = Distribution.delta(S)
    rep = discrete_to_continuous_limit_check(d1, 0.25, 0.75, 2.0, [0.5, 0.9, 0.99, 0.999])
    nm = minimal_qsd_closed_form(1 / 3, N)
    inv = max(ct_conditioned(nm, CtrwSpec(0.25, 0.75, t, N)).tv(nm) for t in (0.1, 1.0, 10.0))
    grid = [0.5, 1.0, 2.0, 5.0, 10.0]
    laws = [ct_conditioned(d1, CtrwSpec(0.25, 0.75, t, N)) for t in grid]
    mono = all(dominates(laws[i], laws[j]) for i in range(5) for j in range(i + 1, 5))
    tvs = ", ".join(f"{row.tv:.2e}" for row in rep.rows)
    report("9", rep.passed and inv < 1e-8 and mono,
           f"TV by r: {tvs} (decreasing {rep.decreasing}, final < 1e-3 required); "
           f"invariance error {inv:.1e} (need < 1e-8); monotone over t grid {mono}")


# --------------------------------------------------------------- 10: negative control


def test_criterion_10_negative_control(report, capsys):
    code = main(["holley-check", "--preset", "delayed-walk", "--p", "0.3", "--r", "0.3", "--q", "0.4"])
    doc = json.loads(capsys.readouterr().out)
    ys = [c["threshold"] for c in doc["counterexamples"] if c["condition"] == "b"]
    ok = (code == 2 and doc["bb2"]["first_failing_y"] == 2 and 2 in ys and not doc["trajectory_domination"])
    report("10", ok, f"exit {code} (need 2), bb2 first failing y {doc['bb2']['first_failing_y']}, "
                     f"counterexample y {ys}, trajectory domination claimed {doc['trajectory_domination']}")
