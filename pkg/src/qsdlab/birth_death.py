"""Birth-and-death chains on {1, ..., N}, their reduced domination conditions, and
the quasi-stationary distributions of the constant-rate (delayed) walk.

For the constant-rate walk with ``lam = p/q < 1`` every QSD is determined by its
mass at 1.  With ``s = sqrt(lam)`` and ``gamma = (1 - s)^2`` the admissible
values are ``nu(1) in (0, gamma]``; ``nu(1) = gamma`` gives the minimal QSD,
the negative binomial ``(1-s)^2 x s^(x-1)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .chain import ABSORB, HOLD, TRUNCATION_MODES, AbsorbedKernel, Distribution, StateSpace, survival_mass
from .errors import HypothesisFailed, InvalidRates, NegativeWeight, OutOfFamily
from .order import dominates

BD_TOL = 1e-12
TAIL_TOL = 1e-10


@dataclass(frozen=True)
class BirthDeathSpec:
    """Per-state rates ``p[x-1], r[x-1], q[x-1]`` for ``x = 1..N``."""

    p: tuple
    r: tuple
    q: tuple
    truncation: str = ABSORB

    def __post_init__(self):
        p, r, q = (np.asarray(v, dtype=float) for v in (self.p, self.r, self.q))
        if not (p.shape == r.shape == q.shape) or p.ndim != 1 or p.size < 1:
            raise InvalidRates("p, r, q must be equal-length nonempty sequences")
        if (p <= 0).any() or (r <= 0).any() or (q <= 0).any():
            raise InvalidRates("birth-death rates must be strictly positive")
        if np.abs(p + r + q - 1.0).max() > BD_TOL:
            raise InvalidRates("p_x + r_x + q_x must equal 1")
        if self.truncation not in TRUNCATION_MODES:
            raise InvalidRates(f"unknown truncation mode {self.truncation!r}")
        for name, v in (("p", p), ("r", r), ("q", q)):
            object.__setattr__(self, name, tuple(float(t) for t in v))

    @classmethod
    def constant(cls, p: float, r: float, q: float, N: int, truncation: str = ABSORB) -> "BirthDeathSpec":
        return cls((p,) * N, (r,) * N, (q,) * N, truncation)

    @property
    def N(self) -> int:
        return len(self.p)

    @property
    def constant_rates(self) -> Optional[tuple]:
        if len(set(self.p)) == len(set(self.r)) == len(set(self.q)) == 1:
            return self.p[0], self.r[0], self.q[0]
        return None

    def effective_rates(self):
        """Arrays ``(p, r, q, a)`` of the truncated kernel on S, 1-based with padding.

        Index 0 and index N+1 are padding (``p_0 = 0``); ``a[x] = Q(x, 0)``.
        At ``x = N`` the upward move is removed: it is redirected to ``0``
        (absorption mode) or added to the holding probability (hold mode).
        """
        N = self.N
        p = np.zeros(N + 2)
        r = np.zeros(N + 2)
        q = np.zeros(N + 2)
        a = np.zeros(N + 2)
        p[1 : N + 1], r[1 : N + 1], q[1 : N + 1] = self.p, self.r, self.q
        a[1] = self.q[0]
        if self.truncation == ABSORB:
            a[N] += p[N]
        else:
            r[N] += p[N]
        p[N] = 0.0
        return p, r, q, a


def delayed_walk(p: float, r: float, q: float, N: int, truncation: str = ABSORB) -> BirthDeathSpec:
    """Constant-rate walk with holding; requires ``p < q`` (drift towards 0)."""
    if not p < q:
        raise InvalidRates("the delayed walk needs p < q")
    return BirthDeathSpec.constant(p, r, q, N, truncation)


def build_bd_kernel(spec: BirthDeathSpec) -> AbsorbedKernel:
    """Tridiagonal kernel on ``{1..N} ∪ {0}`` with ``Q(1, 0) = q_1``."""
    p, r, q, a = spec.effective_rates()
    N = spec.N
    space = StateSpace.integers(N)
    rows = {}
    for x in range(1, N + 1):
        row = {x: r[x]}
        if x > 1:
            row[x - 1] = q[x]
        if x < N:
            row[x + 1] = p[x]
        if a[x] > 0:
            row[0] = a[x]
        rows[x] = row
    return AbsorbedKernel.from_rows(space, rows, truncation_mode=spec.truncation, overflow_states=(N,))


@dataclass(frozen=True)
class BdConditionReport:
    condition: str
    holds: bool
    first_failing_y: Optional[int] = None
    detail: Optional[dict] = None

    def __bool__(self) -> bool:
        return self.holds


def _le(a: float, b: float) -> bool:
    return a <= b + BD_TOL


def bd_condition_bb2(spec: BirthDeathSpec) -> BdConditionReport:
    """The two chains of inequalities equivalent to condition (b), for 2 <= y <= N.

    With ``p_0 = 0``, for each y:

        b1 <= b2 <= b4  and  b1 <= b3 <= b4, where
        b1 = p_{y-1} q_y / (r_{y-1}^2 + p_{y-1} q_y + q_{y-1} p_{y-2})
        b2 = r_y q_y / (q_y r_{y-1} + r_y q_y)
        b3 = p_{y-1} r_y / (p_{y-1} r_y + r_{y-1} p_{y-1})
        b4 = (r_y^2 + p_y q_{y+1}) / (r_y^2 + p_y q_{y+1} + q_y p_{y-1})
    """
    p, r, q, _a = spec.effective_rates()
    for y in range(2, spec.N + 1):
        b1 = p[y - 1] * q[y] / (r[y - 1] ** 2 + p[y - 1] * q[y] + q[y - 1] * p[y - 2])
        b2 = r[y] * q[y] / (q[y] * r[y - 1] + r[y] * q[y])
        b3 = p[y - 1] * r[y] / (p[y - 1] * r[y] + r[y - 1] * p[y - 1])
        top = r[y] ** 2 + p[y] * q[y + 1]
        b4 = top / (top + q[y] * p[y - 1])
        if not (_le(b1, b2) and _le(b2, b4) and _le(b1, b3) and _le(b3, b4)):
            return BdConditionReport("bb2", False, y, {"b1": float(b1), "b2": float(b2), "b3": float(b3), "b4": float(b4)})
    return BdConditionReport("bb2", True)


def bd_condition_bb3(spec: BirthDeathSpec) -> BdConditionReport:
    """``c(y-1, y) <= c(y, y)`` for 2 <= y <= N.

    Inside the chain this is ``p_1/(p_1 + r_1) <= r_2 + p_2`` at y = 2 and
    ``p_{y-1} <= p_y + r_y`` beyond.  Each side is divided by its survival
    probability ``1 - Q(x, 0)``, which only differs from 1 at x = 1 and at a
    boundary state that absorbs the overflow.
    """
    p, r, _q, a = spec.effective_rates()
    for y in range(2, spec.N + 1):
        lhs = p[y - 1] / (1.0 - a[y - 1])
        rhs = (r[y] + p[y]) / (1.0 - a[y])
        if not _le(lhs, rhs):
            return BdConditionReport("bb3", False, y, {"lhs": float(lhs), "rhs": float(rhs)})
    return BdConditionReport("bb3", True)


# ---------------------------------------------------------------- QSD family


def _check_lambda(lam: float) -> None:
    if not 0.0 < lam < 1.0:
        raise ValueError("lambda must lie in (0, 1)")


def gamma_of(lam: float) -> float:
    """Largest admissible mass at 1, ``(1 - sqrt(lam))^2``."""
    return (1.0 - math.sqrt(lam)) ** 2


def negative_binomial_tail(lam: float, N: int) -> float:
    """Mass of the minimal QSD beyond N: ``(N+1) s^N - N s^(N+1)``."""
    s = math.sqrt(lam)
    return (N + 1) * s**N - N * s ** (N + 1)


def minimal_qsd_closed_form(lam: float, N: int, return_deficit: bool = False):
    """``(1 - s)^2 x s^(x-1)`` on ``{1..N}``, renormalized; ``s = sqrt(lam)``."""
    _check_lambda(lam)
    s = math.sqrt(lam)
    x = np.arange(1, N + 1, dtype=float)
    w = (1.0 - s) ** 2 * x * s ** (x - 1)
    dist = Distribution(StateSpace.integers(N), w, normalize=True)
    if return_deficit:
        return dist, float(1.0 - w.sum())
    return dist


@dataclass(frozen=True)
class QsdFamilyPoint:
    nu1: float
    lam: float
    c: float
    gamma: float
    weights: Distribution
    tail_mass: float


def _family_roots(lam: float, nu1: float) -> tuple[float, float, float]:
    disc = (nu1 - lam - 1.0) ** 2 - 4.0 * lam
    c = math.sqrt(max(disc, 0.0))
    return c, (lam + 1.0 - nu1 + c) / 2.0, (lam + 1.0 - nu1 - c) / 2.0


def family_raw_weights(lam: float, nu1: float, N: int) -> np.ndarray:
    """Unnormalized family weights ``nu(1..N)``.

    ``nu(x) = nu1/c [A^x - B^x]`` with ``A, B = (lam + 1 - nu1 ± c)/2``.  When c
    is small the difference quotient is evaluated as the positive sum
    ``nu1 * sum_k A^k B^(x-1-k)``, whose c = 0 value is the negative binomial.
    """
    c, A, B = _family_roots(lam, nu1)
    x = np.arange(1, N + 1)
    if c > 1e-3:
        return nu1 / c * (A ** x - B ** x)
    out = np.empty(N)
    acc = 0.0  # sum_{k<x} A^k B^(x-1-k)
    for i in range(N):
        acc = B * acc + A**i
        out[i] = nu1 * acc
    return out


def family_tail_mass(lam: float, nu1: float, N: int) -> float:
    """``sum_{x > N} nu(x)`` of the family point with mass ``nu1`` at 1."""
    c, A, B = _family_roots(lam, nu1)
    if c <= 1e-3:
        if abs(nu1 - gamma_of(lam)) < 1e-14:
            return negative_binomial_tail(lam, N)
        # total mass is 1; subtract the (stable) partial sum
        return max(1.0 - float(family_raw_weights(lam, nu1, N).sum()), 0.0)
    return nu1 / c * (A ** (N + 1) / (1 - A) - B ** (N + 1) / (1 - B))


def adaptive_truncation(lam: float, nu1: float, tol: float = TAIL_TOL, N_max: int = 1_000_000) -> int:
    """Smallest N whose family tail mass is below ``tol``."""
    lo, hi = 1, 2
    while family_tail_mass(lam, nu1, hi) >= tol:
        lo, hi = hi, hi * 2
        if hi > N_max:
            raise ValueError("tail decays too slowly for the requested tolerance")
    while lo < hi:
        mid = (lo + hi) // 2
        if family_tail_mass(lam, nu1, mid) < tol:
            hi = mid
        else:
            lo = mid + 1
    return lo


def cavender_family(lam: float, nu1: float, N: Optional[int] = None) -> QsdFamilyPoint:
    """QSD of the constant-rate walk with mass ``nu1`` at 1, truncated to {1..N}.

    ``N=None`` picks the smallest truncation with tail mass below 1e-10.
    ``nu1`` equal to ``gamma`` (within 1e-14) returns the negative binomial.
    """
    _check_lambda(lam)
    gamma = gamma_of(lam)
    if nu1 <= 0:
        raise ValueError("nu1 must be positive")
    if nu1 > gamma + 1e-14:
        try:
            qsd_recursion_solve(lam, nu1, 1_000_000)
        except NegativeWeight as e:
            raise OutOfFamily(f"nu1={nu1} exceeds gamma={gamma:.10g}; negative weight at x={e.x}", e.x) from e
        raise OutOfFamily(f"nu1={nu1} exceeds gamma={gamma:.10g}")
    at_gamma = abs(nu1 - gamma) <= 1e-14
    if N is None:
        N = adaptive_truncation(lam, gamma if at_gamma else nu1)
    if at_gamma:
        dist = minimal_qsd_closed_form(lam, N)
        return QsdFamilyPoint(gamma, lam, 0.0, gamma, dist, negative_binomial_tail(lam, N))
    c, _A, _B = _family_roots(lam, nu1)
    raw = family_raw_weights(lam, nu1, N)
    if (raw < 0).any():
        raise OutOfFamily("family weights went negative", int(np.flatnonzero(raw < 0)[0]) + 1)
    dist = Distribution(StateSpace.integers(N), raw, normalize=True)
    return QsdFamilyPoint(nu1, lam, c, gamma, dist, family_tail_mass(lam, nu1, N))


def qsd_recursion_solve(lam: float, nu1: float, N: int) -> np.ndarray:
    """Forward three-term recursion for a QSD of the constant-rate walk.

    Dividing the balance equations by q gives, with ``nu(0) = 0``,

        nu(x+1) = (lam + 1 - nu1) nu(x) - lam nu(x-1).

    Returns the raw (unnormalized) ``nu(1..N)``; raises :class:`NegativeWeight`
    as soon as a weight drops below zero.  Rounding errors grow along the
    recessive solution, so values below ~1e-13 carry no relative accuracy.
    """
    if nu1 <= 0:
        raise ValueError("nu1 must be positive")
    out = np.empty(N)
    prev, cur = 0.0, nu1
    coef = lam + 1.0 - nu1
    for i in range(N):
        if cur < 0:
            raise NegativeWeight(i + 1, cur)
        out[i] = cur
        prev, cur = cur, coef * cur - lam * prev
    return out


@dataclass
class MinimalityReport:
    survival: float
    candidate_survivals: list
    absorption_minimal: bool
    stochastically_minimal: bool
    failures: list

    @property
    def holds(self) -> bool:
        return self.absorption_minimal and self.stochastically_minimal


def monotone_absorption(k: AbsorbedKernel, tol: float = BD_TOL) -> Optional[tuple]:
    """First pair ``x <= x'`` with ``Q(x,0) < Q(x',0)``, ignoring truncation rows; else None."""
    space = k.space
    keep = np.array([s not in k.overflow_states for s in space.states])
    a = k.absorption
    bad = space.leq & (a[:, None] < a[None, :] - tol) & keep[:, None] & keep[None, :]
    if bad.any():
        i, j = np.argwhere(bad)[0]
        return space.label(int(i)), space.label(int(j))
    return None


def minimal_qsd_check(nu: Distribution, k: AbsorbedKernel, candidates: Sequence[Distribution],
                      tol: float = 1e-10) -> MinimalityReport:
    """Check that ``nu`` is below every candidate QSD in both senses.

    Requires ``Q(x, 0)`` nonincreasing along the order (rows rewritten by
    truncation are exempt); under that hypothesis stochastic minimality
    implies minimal absorption.
    """
    bad = monotone_absorption(k)
    if bad is not None:
        raise HypothesisFailed(f"Q(x,0) increases from x={bad[0]} to x'={bad[1]}")
    a0 = survival_mass(nu, k)
    sv, failures = [], []
    abs_ok = dom_ok = True
    for i, cand in enumerate(candidates):
        ac = survival_mass(cand, k)
        sv.append(ac)
        if a0 > ac + tol:
            abs_ok = False
            failures.append(f"candidate {i}: a(nu)={a0:.12g} > a(candidate)={ac:.12g}")
        res = dominates(nu, cand)
        if not res:
            dom_ok = False
            failures.append(f"candidate {i}: not dominated at {res.witness!r}")
    return MinimalityReport(a0, sv, abs_ok, dom_ok, failures)


def likelihood_ratio_increasing(nu: Distribution, nu_p: Distribution, upto: Optional[int] = None,
                                floor: float = 1e-13) -> bool:
    """Are the ratios ``nu(x)/nu'(x)`` nondecreasing in x (where both exceed ``floor``)?"""
    a, b = nu.weights, nu_p.weights
    n = len(a) if upto is None else upto
    keep = (a[:n] > floor) & (b[:n] > floor)
    ratio = a[:n][keep] / b[:n][keep]
    return bool((np.diff(ratio) >= -1e-9 * ratio[1:]).all())
