"""Coupled heat-bath (Gibbs) sampler on trajectory space.

Two trajectory measures ``mu`` and ``mu'`` over the same window are sampled
jointly.  Each step picks a site uniformly at random and redraws it in both
chains from the single-site conditionals, using one shared uniform: the first
site from ``nu(w) Q_0(w, x_1)``, an interior site k from
``Q_{k-1}(x_{k-1}, w) Q_k(w, x_{k+1})``, the last site from
``Q(x_{m-1}, w)`` restricted to S.  When the local domination conditions hold
and the pair starts ordered, it stays ordered.  A sweep is ``length`` such
steps.

The total-order engine runs in a compiled loop over precomputed conditional
CDF tables.  The reference engine works on any poset (monotone coupling per
update) and replays the same random stream, so both engines can be compared
step by step on total orders.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np

from .chain import Distribution
from .errors import HypothesisFailed, InstanceTooLarge, NotDominated, OrderViolation
from .holley import holley_conditions
from .order import DOM_TOL, build_monotone_coupling
from .trajectory import MAX_PATHS, TrajectoryMeasure, encode_paths

log = logging.getLogger(__name__)

MAX_TABLE = 20_000_000  # entries of the (length, N, N, N) CDF table
MAX_HISTOGRAM = 5_000_000  # N**length cells for the trajectory histogram
CHUNK = 20_000  # sweeps per compiled call

_OK, _NOT_DOMINATED, _ORDER_VIOLATION, _UNDEFINED = 0, 1, 2, 3


@dataclass
class CouplingState:
    eta: tuple
    eta_prime: tuple
    rng_state: dict
    step: int


@dataclass
class Checkpoint:
    sweep: int
    tv: float  # empirical trajectory law of eta vs the exact mu (nan if not enumerated)
    tv_prime: float
    violations: int


@dataclass
class GibbsReport:
    state: CouplingState
    sweeps: int
    violations: int
    checkpoints: list
    conditions: dict
    site_counts: np.ndarray  # (length, N) visit counts of eta, one sample per sweep
    site_counts_prime: np.ndarray
    histogram: Optional[np.ndarray] = field(default=None, repr=False)
    histogram_prime: Optional[np.ndarray] = field(default=None, repr=False)
    tv_trajectory: float = float("nan")
    tv_trajectory_prime: float = float("nan")

    def empirical_marginal(self, site: int, prime: bool = False) -> np.ndarray:
        c = (self.site_counts_prime if prime else self.site_counts)[site]
        return c / c.sum()


# ---------------------------------------------------------------- tables


def _conditional_tables(tm: TrajectoryMeasure) -> np.ndarray:
    """``T[k, a, b, :]``: CDF of site k given left neighbour a and right neighbour b.

    Undefined conditionals (zero normalizer) are filled with -1.
    """
    n = len(tm.space)
    L = tm.length
    if L * n**3 > MAX_TABLE:
        raise InstanceTooLarge("conditional table too large for the compiled engine")
    K = [k.dense for k in tm.kernels]
    nu = tm.initial.weights
    W = np.zeros((L, n, n, n))
    # site 0: nu(w) K0(w, b), no left neighbour
    W[0] = (nu[:, None] * K[0]).T[None, :, :]
    for k in range(1, L - 1):
        W[k] = K[k - 1][:, None, :] * K[k].T[None, :, :]
    # last site: K(a, w), no right neighbour
    W[L - 1] = K[L - 2][:, None, :]
    tot = W.sum(axis=3, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        C = np.cumsum(W, axis=3) / tot
    C = np.where(tot > 0, C, -1.0)
    C[..., -1] = np.where(tot[..., 0] > 0, 1.0, -1.0)
    return np.ascontiguousarray(C)


def _conditional_weights(tm: TrajectoryMeasure, path: np.ndarray, k: int) -> np.ndarray:
    L = tm.length
    if k == 0:
        w = tm.initial.weights * tm.kernels[0].dense[:, path[1]]
    elif k == L - 1:
        w = tm.kernels[L - 2].dense[path[L - 2]].copy()
    else:
        w = tm.kernels[k - 1].dense[path[k - 1]] * tm.kernels[k].dense[:, path[k + 1]]
    return w


# ---------------------------------------------------------------- compiled loop


@numba.njit(cache=True)
def _quantile_cdf(cdf, u):
    n = cdf.shape[0]
    for i in range(n):
        if cdf[i] > u:
            return i
    # u above a rounded-down total: last index with positive mass
    for i in range(n - 1, -1, -1):
        prev = cdf[i - 1] if i > 0 else 0.0
        if cdf[i] > prev:
            return i
    return n - 1


@numba.njit(cache=True)
def _run_chunk(T, Tp, eta, etap, sites, us, base, hist, histp, counts, countsp, tol):
    n_sweeps, L = sites.shape
    n = T.shape[1]
    for s in range(n_sweeps):
        for j in range(L):
            k = sites[s, j]
            u = us[s, j]
            a = eta[k - 1] if k > 0 else 0
            b = eta[k + 1] if k < L - 1 else 0
            ap = etap[k - 1] if k > 0 else 0
            bp = etap[k + 1] if k < L - 1 else 0
            c = T[k, a, b]
            cp = Tp[k, ap, bp]
            if c[n - 1] < 0.0 or cp[n - 1] < 0.0:
                return _UNDEFINED, s, k
            # domination of the two conditionals: F(w) >= F'(w) everywhere
            for w in range(n):
                if c[w] < cp[w] - tol:
                    return _NOT_DOMINATED, s, k
            x = _quantile_cdf(c, u)
            xp = _quantile_cdf(cp, u)
            if x > xp:
                return _ORDER_VIOLATION, s, k
            eta[k] = x
            etap[k] = xp
        code = 0
        codep = 0
        for i in range(L):
            counts[i, eta[i]] += 1
            countsp[i, etap[i]] += 1
            code += eta[i] * base[i]
            codep += etap[i] * base[i]
        if hist.shape[0] > 0:
            hist[code] += 1
            histp[codep] += 1
    return _OK, n_sweeps, -1


# ---------------------------------------------------------------- driver


def _initial_pair(tm: TrajectoryMeasure, tm_p: TrajectoryMeasure, rng: np.random.Generator):
    """Sample ``eta'`` from ``mu'`` and build ``eta <= eta'`` with positive ``mu``-probability.

    Each coordinate takes the largest state below the matching coordinate of
    ``eta'`` that keeps the path alive, backtracking if a choice dead-ends.
    """
    zp = tm_p.sample(rng, 1)[0]
    space = tm.space
    leq = space.leq
    L = tm.length
    K = [k.dense for k in tm.kernels]
    nu = tm.initial.weights
    # prefer larger states: sort candidates by number of states below them
    rank = leq.sum(axis=0)

    def extend(path):
        k = len(path)
        if k == L:
            return path
        if k == 0:
            ok = (nu > 0) & leq[:, zp[0]]
        else:
            ok = (K[k - 1][path[-1]] > 0) & leq[:, zp[k]]
        for w in sorted(np.flatnonzero(ok), key=lambda i: -rank[i]):
            got = extend(path + [int(w)])
            if got is not None:
                return got
        return None

    eta = extend([])
    if eta is None:
        raise HypothesisFailed("no trajectory of mu lies below the sampled trajectory of mu'")
    return np.array(eta, dtype=np.int64), np.array(zp, dtype=np.int64)


def _exact_law(tm: TrajectoryMeasure) -> Optional[np.ndarray]:
    n, L = len(tm.space), tm.length
    if n**L > MAX_HISTOGRAM or tm.count_paths() > MAX_PATHS:
        return None
    out = np.zeros(n**L)
    np.add.at(out, encode_paths(tm.paths, n), tm.probs)
    return out


def _tv_hist(hist: np.ndarray, exact: Optional[np.ndarray]) -> float:
    if exact is None or hist.size == 0 or hist.sum() == 0:
        return float("nan")
    return 0.5 * float(np.abs(hist / hist.sum() - exact).sum())


def _validate_pair(tm: TrajectoryMeasure, tm_p: TrajectoryMeasure, check_conditions: bool) -> dict:
    if tm.space != tm_p.space:
        raise ValueError("trajectory measures live on different spaces")
    if tm.length != tm_p.length:
        raise ValueError("trajectory windows have different lengths")
    if tm.length < 2:
        raise ValueError("need at least two sites")
    if not check_conditions:
        return {}
    conds = holley_conditions(tm.initial, tm_p.initial, tm.kernels, tm_p.kernels)
    failed = [name for name, rep in conds.items() if not rep]
    if failed:
        ce = {name: conds[name].counterexample for name in failed}
        raise HypothesisFailed(f"local domination conditions fail: {', '.join(failed)}; {ce}")
    return conds


def gibbs_coupled_run(
    tm: TrajectoryMeasure,
    tm_p: TrajectoryMeasure,
    sweeps: int,
    seed: Optional[int] = None,
    *,
    engine: str = "auto",
    checkpoint_every: Optional[int] = None,
    check_conditions: bool = True,
    tol: float = DOM_TOL,
) -> GibbsReport:
    """Run the coupled sampler for ``sweeps`` sweeps.

    ``engine`` is ``"compiled"`` (total orders only), ``"python"`` (any poset,
    slow) or ``"auto"``.  With ``check_conditions`` the local domination
    conditions are verified first and :class:`HypothesisFailed` is raised if
    any fails.  A lost ordering raises :class:`OrderViolation`; conditionals
    that fail to dominate raise :class:`NotDominated`.
    """
    if sweeps < 0:
        raise ValueError("sweeps must be nonnegative")
    conds = _validate_pair(tm, tm_p, check_conditions)
    space = tm.space
    if engine == "auto":
        engine = "compiled" if space.is_total and tm.length * len(space) ** 3 <= MAX_TABLE else "python"
    if engine == "compiled" and not space.is_total:
        raise ValueError("the compiled engine needs a total order")
    rng = np.random.default_rng(seed)
    eta, etap = _initial_pair(tm, tm_p, rng)
    if not space.leq[eta, etap].all():
        raise OrderViolation("initial pair is not ordered")
    n, L = len(space), tm.length
    exact, exact_p = _exact_law(tm), _exact_law(tm_p)
    hsize = n**L if n**L <= MAX_HISTOGRAM else 0
    hist = np.zeros(hsize, dtype=np.int64)
    histp = np.zeros(hsize, dtype=np.int64)
    counts = np.zeros((L, n), dtype=np.int64)
    countsp = np.zeros((L, n), dtype=np.int64)
    base = n ** np.arange(L, dtype=np.int64)
    every = checkpoint_every or max(1, sweeps // 10)
    checkpoints = []
    if engine == "compiled":
        T, Tp = _conditional_tables(tm), _conditional_tables(tm_p)
    cache: dict = {}
    done = 0
    while done < sweeps:
        m = min(CHUNK, every - done % every, sweeps - done)
        sites = rng.integers(0, L, size=(m, L))
        us = rng.random((m, L))
        if engine == "compiled":
            status, s, k = _run_chunk(T, Tp, eta, etap, sites, us, base, hist, histp, counts, countsp, tol)
            if status != _OK:
                _raise_status(status, done + s, k, eta, etap, space)
        else:
            _python_chunk(tm, tm_p, eta, etap, sites, us, base, hist, histp, counts, countsp, tol, done, cache)
        done += m
        if done % every == 0 or done == sweeps:
            checkpoints.append(Checkpoint(done, _tv_hist(hist, exact), _tv_hist(histp, exact_p), 0))
    lab = space.states
    state = CouplingState(tuple(lab[i] for i in eta), tuple(lab[i] for i in etap),
                          rng.bit_generator.state, done * L)
    return GibbsReport(
        state=state,
        sweeps=done,
        violations=0,
        checkpoints=checkpoints,
        conditions={k: bool(v) for k, v in conds.items()},
        site_counts=counts,
        site_counts_prime=countsp,
        histogram=hist if hsize else None,
        histogram_prime=histp if hsize else None,
        tv_trajectory=_tv_hist(hist, exact),
        tv_trajectory_prime=_tv_hist(histp, exact_p),
    )


def _raise_status(status, sweep, site, eta, etap, space):
    where = f"sweep {sweep}, site {site}"
    if status == _ORDER_VIOLATION:
        raise OrderViolation(f"coupled chains lost their order at {where}")
    if status == _NOT_DOMINATED:
        raise NotDominated(f"single-site conditionals are not ordered at {where}", site)
    raise OrderViolation(f"undefined conditional at {where}: the chain left the support")


def _python_chunk(tm, tm_p, eta, etap, sites, us, base, hist, histp, counts, countsp, tol, offset, cache):
    space = tm.space
    leq = space.leq
    L = tm.length
    for s in range(sites.shape[0]):
        for k, u in zip(sites[s], us[s]):
            k = int(k)
            # the conditionals depend on the neighbours only
            key = (k, eta[k - 1] if k else -1, eta[k + 1] if k < L - 1 else -1,
                   etap[k - 1] if k else -1, etap[k + 1] if k < L - 1 else -1)
            pair = cache.get(key)
            if pair is None:
                w = _conditional_weights(tm, eta, k)
                wp = _conditional_weights(tm_p, etap, k)
                if w.sum() <= 0 or wp.sum() <= 0:
                    _raise_status(_UNDEFINED, offset + s, k, eta, etap, space)
                pair = cache[key] = (Distribution(space, w, normalize=True), Distribution(space, wp, normalize=True))
            x, xp = coupled_draw(pair[0], pair[1], float(u), tol, cache)
            if not leq[x, xp]:
                raise OrderViolation(f"coupled chains lost their order at sweep {offset + s}, site {k}")
            eta[k], etap[k] = x, xp
        counts[np.arange(len(eta)), eta] += 1
        countsp[np.arange(len(etap)), etap] += 1
        if hist.size:
            hist[int(eta @ base)] += 1
            histp[int(etap @ base)] += 1


def coupled_draw(nu: Distribution, nu_p: Distribution, u: float, tol: float = DOM_TOL,
                 cache: Optional[dict] = None) -> tuple[int, int]:
    """Draw an ordered index pair from a monotone coupling of ``nu`` and ``nu_p`` with one uniform.

    Total orders use the quantile coupling, so the result matches the compiled
    engine; other posets invert the CDF of the LP coupling's joint table.
    """
    space = nu.space
    if space.is_total:
        F, Fp = np.cumsum(nu.weights), np.cumsum(nu_p.weights)
        F[-1] = Fp[-1] = 1.0
        if (F < Fp - tol).any():
            raise NotDominated("single-site conditionals are not ordered")
        return int(_quantile_cdf(F, u)), int(_quantile_cdf(Fp, u))
    key = (id(nu), id(nu_p))
    if cache is not None and key in cache:
        items, cdf = cache[key]
    else:
        coupling = build_monotone_coupling(nu, nu_p)
        items = sorted(coupling.joint.items(), key=lambda kv: (space.index(kv[0][0]), space.index(kv[0][1])))
        cdf = np.cumsum([w for _, w in items])
        if cache is not None:
            cache[key] = (items, cdf)
    i = min(int(np.searchsorted(cdf, u * cdf[-1], side="right")), len(items) - 1)
    (x, xp), _ = items[i]
    return space.index(x), space.index(xp)
