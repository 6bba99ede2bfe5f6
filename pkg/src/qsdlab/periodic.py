"""Periodic absorbed chains: cyclic subclasses, the per-class QSD identities and
the assembly of a QSD from per-class Yaglom limits.

For a chain of period d the state space splits into classes ``S_1, ..., S_d``
(``1 ∈ S_1``) with one step mapping ``S_j`` into ``S_{j+1} ∪ {0}``.  The plain
conditioned iterates oscillate, but the subsequences along residues mod d
converge, and the limits ``nubar_j`` glue back into a QSD
``nu* = sum_j m_j nubar_j``.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from functools import reduce
from typing import Optional, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

from .birth_death import monotone_absorption
from .chain import (
    ABSORB,
    HOLD,
    TRUNCATION_MODES,
    AbsorbedKernel,
    Distribution,
    StateSpace,
    conditioned_orbit,
    qsd_residual,
    survival_mass,
    tv_distance,
)
from .errors import (
    HypothesisFailed,
    InconsistentInputs,
    InvalidRates,
    NotAQsd,
    NotConverged,
    NotIrreducible,
)
from .holley import check_condition_b, check_condition_c
from .order import dominates

ASSEMBLY_TOL = 1e-10
QSD_TOL = 1e-8


def pq_walk_kernel(p: float, q: float, N: int, truncation: str = ABSORB) -> AbsorbedKernel:
    """Nearest-neighbour walk without holding on ``{1..N}``, ``Q(1, 0) = q``.

    With the default truncation the up-move from N is absorbed, which keeps
    the graph bipartite.  Holding at N breaks the period.
    """
    if not (p > 0 and q > 0 and abs(p + q - 1.0) <= 1e-12):
        raise InvalidRates("the p-q walk needs p, q > 0 with p + q = 1")
    if truncation not in TRUNCATION_MODES:
        raise InvalidRates(f"unknown truncation mode {truncation!r}")
    space = StateSpace.integers(N)
    rows = {}
    for x in range(1, N + 1):
        row = {x - 1: q}  # x - 1 == 0 is absorption
        if x < N:
            row[x + 1] = p
        elif truncation == ABSORB:
            row[0] = row.get(0, 0.0) + p
        else:
            row[x] = p
        rows[x] = row
    return AbsorbedKernel.from_rows(space, rows, truncation_mode=truncation, overflow_states=(N,))


@dataclass(frozen=True)
class CyclicDecomposition:
    d: int
    classes: tuple  # classes[j] = labels of S_{j+1}
    class_index: np.ndarray  # 0-based class of each state index

    def class_of(self, x) -> int:
        """1-based class of the state labelled ``x``."""
        for j, c in enumerate(self.classes):
            if x in c:
                return j + 1
        raise KeyError(x)

    def mask(self, j: int, space: StateSpace) -> np.ndarray:
        """Boolean mask of ``S_j`` (1-based) over state indices."""
        del space
        return self.class_index == (j - 1) % self.d


def cyclic_classes(k: AbsorbedKernel) -> CyclicDecomposition:
    """Period and cyclic classes of an irreducible kernel restricted to S.

    The period is the gcd of ``level(u) + 1 - level(v)`` over all edges, with
    BFS levels from the minimal state; classes are levels mod d.
    """
    space = k.space
    n = len(space)
    adj = k.Q.copy()
    adj.data = (adj.data > 0).astype(float)
    adj.eliminate_zeros()
    ncomp, _ = connected_components(adj, directed=True, connection="strong")
    if ncomp != 1:
        raise NotIrreducible(f"the kernel restricted to S has {ncomp} communicating classes")
    root = space.minimal_index
    level = np.full(n, -1, dtype=np.int64)
    level[root] = 0
    dq = deque([root])
    indptr, indices = adj.indptr, adj.indices
    while dq:
        u = dq.popleft()
        for v in indices[indptr[u] : indptr[u + 1]]:
            if level[v] < 0:
                level[v] = level[u] + 1
                dq.append(v)
    coo = adj.tocoo()
    d = reduce(math.gcd, (int(abs(level[u] + 1 - level[v])) for u, v in zip(coo.row, coo.col)), 0)
    if d == 0:  # only possible for n == 1 without a self-loop, excluded by irreducibility
        raise NotIrreducible("no cycle through the minimal state")
    cls = level % d
    bad = (cls[coo.col] - cls[coo.row] - 1) % d != 0
    if bad.any():
        u, v = coo.row[bad][0], coo.col[bad][0]
        raise AssertionError(f"class invariant fails on edge {space.label(u)}->{space.label(v)}")
    classes = tuple(tuple(space.label(int(i)) for i in np.flatnonzero(cls == j)) for j in range(d))
    cls.setflags(write=False)
    return CyclicDecomposition(d, classes, cls)


def _project(nu: Distribution, mask: np.ndarray) -> tuple[float, Optional[Distribution]]:
    w = np.where(mask, nu.weights, 0.0)
    m = float(w.sum())
    if m <= 0:
        return 0.0, None
    return m, Distribution(nu.space, w, normalize=True)


@dataclass
class P31Report:
    a: float
    m: list
    a_classes: list
    mass_balance_error: float  # max_j |m_j a(nu_j) - a(nu) m_{j+1}|
    shift_error: float  # max_j TV(nu_j T_1, nu_{j+1})
    product_error: float  # |a(nu)^d - prod_j a(nu_j)|
    tol: float

    @property
    def holds(self) -> bool:
        return max(self.mass_balance_error, self.shift_error, self.product_error) <= self.tol


def lemma_p31_check(nu: Distribution, k: AbsorbedKernel, dec: CyclicDecomposition,
                    tol: float = 1e-9, qsd_tol: float = QSD_TOL) -> P31Report:
    """Check the per-class identities satisfied by a QSD of a period-d chain.

    With ``nu = sum_j m_j nu_j`` and ``nu_j = nu(.|S_j)``:
    ``m_j a(nu_j) = a(nu) m_{j+1}``, ``nu_j T_1 = nu_{j+1}`` and
    ``a(nu)^d = prod_j a(nu_j)``.
    """
    res = qsd_residual(nu, k)
    if res > qsd_tol:
        raise NotAQsd(f"qsd residual {res:.3e} exceeds {qsd_tol:.1e}")
    d = dec.d
    a = survival_mass(nu, k)
    parts = [_project(nu, dec.mask(j, k.space)) for j in range(1, d + 1)]
    m = [p[0] for p in parts]
    if any(p[1] is None for p in parts):
        raise NotAQsd("a QSD of an irreducible chain charges every class")
    aj = [survival_mass(p[1], k) for p in parts]
    mb = max(abs(m[j] * aj[j] - a * m[(j + 1) % d]) for j in range(d))
    shift = 0.0
    for j in range(d):
        w = k.push(parts[j][1].weights)
        shifted = w / w.sum()
        shift = max(shift, tv_distance(shifted, parts[(j + 1) % d][1].weights))
    prod = abs(a**d - float(np.prod(aj)))
    return P31Report(a, m, aj, mb, shift, prod, tol)


@dataclass
class PeriodicYaglomResult:
    limits: list  # nubar_1..nubar_d
    steps: int
    final_tv: list  # per residue, TV between the last two samples


def periodic_yaglom(k: AbsorbedKernel, dec: Optional[CyclicDecomposition] = None, max_k: int = 100_000,
                    tol: float = 1e-12, *, start: Optional[Distribution] = None,
                    check_conditions: bool = True) -> PeriodicYaglomResult:
    """Limits of ``delta_1 T_{dk + j - 1}`` as k grows, for j = 1..d.

    Iteration stops once, for every residue, two consecutive samples are
    within ``tol`` in TV; :class:`NotConverged` is raised after ``max_k``
    periods.  With ``check_conditions`` the local domination conditions (b)
    and (c) are verified for same-class pairs first.
    """
    dec = dec or cyclic_classes(k)
    d = dec.d
    if check_conditions:
        cls = dec.class_index
        for rep in (check_condition_b(k, classes=cls), check_condition_c(k, classes=cls)):
            if not rep:
                raise HypothesisFailed(f"condition ({rep.condition}) fails for same-class pairs: {rep.counterexample}")
    nu = start or Distribution.delta(k.space)
    if not dec.mask(1, k.space)[nu.weights > 0].all():
        raise ValueError("the starting distribution must live on the first class")
    last = [nu.weights.copy()] + [None] * (d - 1)
    tvs = [np.inf] * d
    orbit = conditioned_orbit(nu, k)
    n = 0
    for kk in range(max_k):
        for j in range(d):
            if kk == 0 and j == 0:
                continue  # sample at time 0 is the start itself
            w, _ = next(orbit)
            n += 1
            if last[j] is not None:
                tvs[j] = 0.5 * float(np.abs(w - last[j]).sum())
            last[j] = w.copy()
        if kk > 0 and max(tvs) < tol:
            limits = [Distribution(k.space, w, normalize=True) for w in last]
            return PeriodicYaglomResult(limits, n, list(tvs))
    raise NotConverged(f"per-class iterates not within {tol:.1e} after {max_k} periods (last TVs {tvs})")


@dataclass
class PeriodicQsdAssembly:
    nu_bars: list
    a_bars: list
    m: np.ndarray
    alpha: float
    nu_star: Distribution
    closure_error: float
    residual: float

    @property
    def verified(self) -> bool:
        return self.residual <= QSD_TOL


def assemble_nu_star(nu_bars: Sequence[Distribution], k: AbsorbedKernel,
                     dec: Optional[CyclicDecomposition] = None, consistency_tol: float = 1e-6) -> PeriodicQsdAssembly:
    """Glue per-class limits into a QSD.

    ``alpha`` is the positive d-th root of ``prod_j a(nubar_j)`` and the class
    weights follow ``m_{j+1} = m_j a(nubar_j)/alpha`` around the cycle, then
    are normalized.  Inputs must satisfy ``nubar_j T_1 = nubar_{j+1}`` within
    ``consistency_tol``.
    """
    d = len(nu_bars)
    if d < 1:
        raise InconsistentInputs("need at least one class limit")
    if dec is not None:
        if dec.d != d:
            raise InconsistentInputs(f"{d} limits for a chain of period {dec.d}")
        for j, nb in enumerate(nu_bars, start=1):
            if not dec.mask(j, k.space)[nb.weights > 0].all():
                raise InconsistentInputs(f"limit {j} is not supported on class {j}")
    for j in range(d):
        w = k.push(nu_bars[j].weights)
        gap = tv_distance(w / w.sum(), nu_bars[(j + 1) % d].weights)
        if gap > consistency_tol:
            raise InconsistentInputs(f"limit {j + 1} pushed one step is {gap:.3e} away from limit {(j + 1) % d + 1}")
    a = [survival_mass(nb, k) for nb in nu_bars]
    if min(a) <= 0:
        raise InconsistentInputs("a class limit has zero survival mass")
    alpha = float(np.exp(np.mean(np.log(a))))
    m = np.empty(d + 1)
    m[0] = 1.0
    for j in range(d):
        m[j + 1] = m[j] * a[j] / alpha
    closure = abs(m[d] - m[0])
    if closure > ASSEMBLY_TOL:
        raise InconsistentInputs(f"cyclic system does not close: mismatch {closure:.3e}")
    m = m[:d] / m[:d].sum()
    w = sum(mj * nb.weights for mj, nb in zip(m, nu_bars))
    nu_star = Distribution(k.space, w, normalize=True)
    return PeriodicQsdAssembly(list(nu_bars), a, m, alpha, nu_star, closure, qsd_residual(nu_star, k))


@dataclass
class T7Report:
    a_star: float
    candidate_a: list
    absorption_minimal: bool
    classwise_dominated: bool
    failures: list

    @property
    def holds(self) -> bool:
        return self.absorption_minimal and self.classwise_dominated


def theorem_t7_v_check(k: AbsorbedKernel, assembly: PeriodicQsdAssembly, candidates: Sequence[Distribution],
                       dec: Optional[CyclicDecomposition] = None, tol: float = 1e-10) -> T7Report:
    """Check that ``nu*`` has the smallest survival mass among the candidates and
    is below each of them class by class.

    Requires ``Q(x, 0)`` nonincreasing along the order (truncation rows
    exempt), which makes domination imply smaller survival mass.
    """
    bad = monotone_absorption(k)
    if bad is not None:
        raise HypothesisFailed(f"Q(x,0) increases from x={bad[0]} to x'={bad[1]}")
    dec = dec or cyclic_classes(k)
    star = assembly.nu_star
    a_star = survival_mass(star, k)
    cand_a, failures = [], []
    abs_ok = dom_ok = True
    for i, c in enumerate(candidates):
        ac = survival_mass(c, k)
        cand_a.append(ac)
        if a_star > ac + tol:
            abs_ok = False
            failures.append(f"candidate {i}: a(nu*)={a_star:.12g} > {ac:.12g}")
        for j in range(1, dec.d + 1):
            mask = dec.mask(j, k.space)
            _, ps = _project(star, mask)
            _, pc = _project(c, mask)
            if ps is None or pc is None:
                continue
            r = dominates(ps, pc)
            if not r:
                dom_ok = False
                failures.append(f"candidate {i}, class {j}: not dominated at {r.witness!r}")
    return T7Report(a_star, cand_a, abs_ok, dom_ok, failures)

