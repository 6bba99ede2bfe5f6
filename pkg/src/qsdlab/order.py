"""Stochastic domination and monotone couplings.

``nu ≺ nu'`` iff ``nu(U) <= nu'(U)`` for every upper set ``U``.  On a total
order the upper sets are the tails ``{y >= x}`` and everything reduces to
comparing cumulative sums.  General posets go through explicit upper-set
enumeration, capped at ``MAX_ENUMERATION`` states; that path is meant as an
oracle, not a hot path.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np
from scipy.optimize import linprog

from .chain import Distribution, StateSpace
from .errors import NotDominated, PosetTooLarge

DOM_TOL = 1e-12
MAX_ENUMERATION = 20


class PosetView:
    """Order-theoretic view of a state space."""

    def __init__(self, space: StateSpace):
        self.space = space

    @property
    def total_order(self) -> bool:
        return self.space.is_total

    @property
    def leq(self) -> np.ndarray:
        return self.space.leq

    @cached_property
    def upper_sets(self) -> np.ndarray:
        """All upper sets as rows of a boolean matrix (general posets only).

        Elements are visited so that every strict successor of ``x`` is decided
        before ``x``; ``x`` may join the set only if all its successors did.
        """
        n = len(self.space)
        if n > MAX_ENUMERATION:
            raise PosetTooLarge(f"upper-set enumeration capped at {MAX_ENUMERATION} states, got {n}")
        leq = self.leq
        # number of successors decreases along a linear extension
        order = sorted(range(n), key=lambda i: int(leq[i].sum()))
        succ = [np.flatnonzero(leq[i] & (np.arange(n) != i)) for i in range(n)]
        out = []
        current = np.zeros(n, dtype=bool)

        def rec(pos):
            if pos == n:
                out.append(current.copy())
                return
            i = order[pos]
            current[i] = False
            rec(pos + 1)
            if current[succ[i]].all():
                current[i] = True
                rec(pos + 1)
                current[i] = False

        rec(0)
        return np.array(out, dtype=bool)


@dataclass(frozen=True)
class DominanceResult:
    dominates: bool
    witness: object = None  # threshold label (total order) or frozenset upper set
    excess: float = 0.0

    def __bool__(self) -> bool:
        return self.dominates


def tail_sums(weights: np.ndarray) -> np.ndarray:
    """``t[i] = sum_{j >= i} w[j]`` (index order)."""
    return np.cumsum(weights[::-1])[::-1]


def dominates(nu: Distribution, nu_p: Distribution, poset: Optional[PosetView] = None,
              tol: float = DOM_TOL) -> DominanceResult:
    """Is ``nu ≺ nu_p``?  On failure the witness is a violating upper set."""
    space = nu.space
    if nu_p.space != space:
        raise ValueError("distributions live on different spaces")
    poset = poset or space.poset
    if poset.total_order:
        gap = tail_sums(nu.weights) - tail_sums(nu_p.weights)
        i = int(np.argmax(gap))
        if gap[i] > tol:
            return DominanceResult(False, space.label(i), float(gap[i]))
        return DominanceResult(True)
    U = poset.upper_sets
    gap = U @ nu.weights - U @ nu_p.weights
    i = int(np.argmax(gap))
    if gap[i] > tol:
        witness = frozenset(space.label(int(j)) for j in np.flatnonzero(U[i]))
        return DominanceResult(False, witness, float(gap[i]))
    return DominanceResult(True)


@dataclass
class MonotoneCoupling:
    space: StateSpace
    joint: dict  # (x, x') -> weight, labels

    def marginals(self) -> tuple[np.ndarray, np.ndarray]:
        n = len(self.space)
        a, b = np.zeros(n), np.zeros(n)
        for (x, xp), w in self.joint.items():
            a[self.space.index(x)] += w
            b[self.space.index(xp)] += w
        return a, b

    def violations(self, nu: Distribution, nu_p: Distribution, tol: float = 1e-12) -> list[str]:
        out = []
        a, b = self.marginals()
        if np.abs(a - nu.weights).max() > tol:
            out.append("first marginal does not reproduce nu")
        if np.abs(b - nu_p.weights).max() > tol:
            out.append("second marginal does not reproduce nu'")
        leq = self.space.leq
        for (x, xp), w in self.joint.items():
            if w < 0:
                out.append(f"negative weight at ({x},{xp})")
            if not leq[self.space.index(x), self.space.index(xp)]:
                out.append(f"unordered support pair ({x},{xp})")
        return out


def build_monotone_coupling(nu: Distribution, nu_p: Distribution,
                            poset: Optional[PosetView] = None) -> MonotoneCoupling:
    """A coupling of ``nu`` and ``nu_p`` supported on ``{x <= x'}``.

    Total orders use the quantile (north-west corner) coupling.  General
    posets solve the transport feasibility problem as an LP, then polish the
    marginals by alternating scaling on the LP's support.
    """
    space = nu.space
    poset = poset or space.poset
    res = dominates(nu, nu_p, poset)
    if not res:
        raise NotDominated(f"nu is not dominated by nu' (witness {res.witness!r})", res.witness)
    if poset.total_order:
        return _quantile_coupling(nu, nu_p)
    return _lp_coupling(nu, nu_p, poset)


def _quantile_coupling(nu, nu_p) -> MonotoneCoupling:
    space = nu.space
    a = nu.weights.copy()
    b = nu_p.weights.copy()
    joint = {}
    i = j = 0
    n = len(a)
    dropped = 0.0
    while i < n and j < n:
        if a[i] <= 0:
            i += 1
            continue
        if b[j] <= 0:
            j += 1
            continue
        m = min(a[i], b[j])
        if i <= j:
            key = (space.label(i), space.label(j))
            joint[key] = joint.get(key, 0.0) + m
        else:
            # only rounding-level mass can land here once domination holds
            dropped += m
        a[i] -= m
        b[j] -= m
        if a[i] <= 1e-300:
            i += 1
        if b[j] <= 1e-300:
            j += 1
    if dropped > DOM_TOL:
        raise NotDominated(f"quantile coupling needs {dropped:.3e} unordered mass")
    return MonotoneCoupling(space, joint)


def _lp_coupling(nu, nu_p, poset) -> MonotoneCoupling:
    space = nu.space
    src = np.flatnonzero(nu.weights)
    dst = np.flatnonzero(nu_p.weights)
    pairs = [(i, j) for i in src for j in dst if poset.leq[i, j]]
    nv = len(pairs)
    A = np.zeros((len(src) + len(dst), nv))
    ri = {i: r for r, i in enumerate(src)}
    cj = {j: len(src) + c for c, j in enumerate(dst)}
    for v, (i, j) in enumerate(pairs):
        A[ri[i], v] = 1.0
        A[cj[j], v] = 1.0
    rhs = np.concatenate([nu.weights[src], nu_p.weights[dst]])
    sol = linprog(np.zeros(nv), A_eq=A, b_eq=rhs, bounds=(0, None), method="highs")
    if sol.status != 0:
        raise NotDominated("no monotone coupling exists (transport LP infeasible)")
    x = np.clip(sol.x, 0.0, None)
    keep = x > 1e-15
    pairs = [p for p, k in zip(pairs, keep) if k]
    x = x[keep]
    rows = np.array([p[0] for p in pairs])
    cols = np.array([p[1] for p in pairs])
    for _ in range(200):
        rs = np.bincount(rows, weights=x, minlength=len(space))
        x *= nu.weights[rows] / rs[rows]
        cs = np.bincount(cols, weights=x, minlength=len(space))
        x *= nu_p.weights[cols] / cs[cols]
        rs = np.bincount(rows, weights=x, minlength=len(space))
        if np.abs(rs - nu.weights).max() < 1e-15:
            break
    joint = {(space.label(int(i)), space.label(int(j))): float(w) for (i, j), w in zip(pairs, x)}
    return MonotoneCoupling(space, joint)


def quantile(weights: np.ndarray, u: float) -> int:
    """Index of the ``u``-quantile: first i with ``F(i) > u``."""
    cdf = np.cumsum(weights)
    i = int(np.searchsorted(cdf, u, side="right"))
    if i >= len(weights):
        # cdf[-1] rounded below u
        i = int(np.flatnonzero(weights)[-1])
    return i


def quantile_couple_step(nu: Distribution, nu_p: Distribution, u: float, *, check: bool = True):
    """Sample an ordered pair from the quantile coupling using one uniform ``u``."""
    space = nu.space
    if not space.is_total:
        raise ValueError("quantile coupling requires a total order")
    if not 0.0 <= u < 1.0:
        raise ValueError("u must lie in [0, 1)")
    if check:
        res = dominates(nu, nu_p)
        if not res:
            raise NotDominated(f"nu is not dominated by nu' (threshold {res.witness!r})", res.witness)
    return space.label(quantile(nu.weights, u)), space.label(quantile(nu_p.weights, u))
