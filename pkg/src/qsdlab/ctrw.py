"""Continuous-time nearest-neighbour walk absorbed at 0, and its approximation by
lazy discrete walks.

The walk jumps up at rate p and down at rate q (from 1 down means absorption).
Its transition semigroup is computed by uniformization: with ``Lam >= p + q``
and ``P = I + G/Lam``,

    U_t = sum_j Poisson(Lam t; j) P^j,

which is itself a lazy discrete walk with holding ``1 - (p+q)/Lam``.  The
discrete family with holding r, run for ``floor(t/(1-r))`` steps, tends to the
continuous walk at time t as r -> 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.stats import poisson

from .chain import (
    ABSORB,
    TRUNCATION_MODES,
    UNDERFLOW_FLOOR,
    AbsorbedKernel,
    Distribution,
    StateSpace,
    evolve_conditioned,
    tv_distance,
)
from .errors import InvalidRates, SeriesNotConverged, SurvivalUnderflow

DEFAULT_SERIES_TOL = 1e-15
MAX_TERMS = 1_000_000
FLOOR_EPS = 1e-9  # guards floor(t/(1-r)) against 1-r rounding (r=0.999, t=2 -> 2000)


@dataclass(frozen=True)
class CtrwSpec:
    p: float
    q: float
    t: float
    N: int = 200
    uniformization_rate: Optional[float] = None  # defaults to p + q
    series_tol: float = DEFAULT_SERIES_TOL
    truncation: str = ABSORB

    def __post_init__(self):
        if not (self.p > 0 and self.q > 0):
            raise InvalidRates("jump rates must be positive")
        if not self.p < self.q:
            raise InvalidRates("need p < q")
        if self.t < 0:
            raise ValueError("t must be nonnegative")
        if self.series_tol <= 0:
            raise ValueError("series_tol must be positive")
        if self.uniformization_rate is not None and self.uniformization_rate < self.p + self.q - 1e-15:
            raise ValueError("uniformization rate must be at least p + q")
        if self.truncation not in TRUNCATION_MODES:
            raise InvalidRates(f"unknown truncation mode {self.truncation!r}")

    @property
    def rate(self) -> float:
        return self.p + self.q if self.uniformization_rate is None else float(self.uniformization_rate)

    @property
    def lam(self) -> float:
        return self.p / self.q

    def at(self, t: float) -> "CtrwSpec":
        return CtrwSpec(self.p, self.q, t, self.N, self.uniformization_rate, self.series_tol, self.truncation)


def discrete_family_kernel(p: float, q: float, r: float, N: int, truncation: str = ABSORB) -> AbsorbedKernel:
    """Lazy walk ``Q_r``: down ``q(1-r)``, stay ``r``, up ``p(1-r)``, with ``p + q`` normalized to 1.

    ``r = 0`` is the p-q walk.
    """
    if not (p > 0 and q > 0):
        raise InvalidRates("p and q must be positive")
    if not 0.0 <= r < 1.0:
        raise InvalidRates("r must lie in [0, 1)")
    if truncation not in TRUNCATION_MODES:
        raise InvalidRates(f"unknown truncation mode {truncation!r}")
    s = p + q
    up, down = p / s * (1.0 - r), q / s * (1.0 - r)
    space = StateSpace.integers(N)
    rows = {}
    for x in range(1, N + 1):
        row = {x - 1: down}
        stay = r
        if x < N:
            row[x + 1] = up
        elif truncation == ABSORB:
            row[0] = row.get(0, 0.0) + up
        else:
            stay += up
        if stay > 0:
            row[x] = row.get(x, 0.0) + stay
        rows[x] = row
    return AbsorbedKernel.from_rows(space, rows, truncation_mode=truncation, overflow_states=(N,))


@dataclass(frozen=True)
class TransientLaw:
    """Unconditioned law at time t: weights on S plus the mass absorbed at 0."""

    space: StateSpace
    weights: np.ndarray
    absorbed: float

    @property
    def survival(self) -> float:
        return float(self.weights.sum())

    def conditioned(self) -> Distribution:
        s = self.survival
        if not s > UNDERFLOW_FLOOR:
            raise SurvivalUnderflow(f"survival mass {s:.3e} below floor")
        return Distribution(self.space, self.weights / s, normalize=True)


def _uniformized_kernel(spec: CtrwSpec) -> AbsorbedKernel:
    lam_u = spec.rate
    hold = 1.0 - (spec.p + spec.q) / lam_u
    # the uniformized chain is the lazy walk with rates normalized by p + q
    return discrete_family_kernel(spec.p, spec.q, max(hold, 0.0), spec.N, spec.truncation)


def ct_semigroup_apply(nu, spec: CtrwSpec, max_terms: int = MAX_TERMS) -> TransientLaw:
    """``nu U_t`` by uniformization, keeping the absorbed mass.

    ``nu`` is a :class:`Distribution` or a :class:`TransientLaw` (whose
    absorbed mass is carried along).  The Poisson series stops once the
    remaining Poisson mass drops below ``spec.series_tol``.
    """
    space = StateSpace.integers(spec.N)
    if isinstance(nu, TransientLaw):
        v, absorbed0 = np.array(nu.weights, dtype=float), nu.absorbed
    else:
        v, absorbed0 = np.array(nu.weights, dtype=float), 0.0
    if v.shape != (spec.N,):
        raise ValueError("initial law does not match the truncation")
    if spec.t == 0:
        return TransientLaw(space, v, absorbed0)
    K = _uniformized_kernel(spec)
    mu = spec.rate * spec.t
    start_mass = float(v.sum())
    acc = np.zeros_like(v)
    j = 0
    while True:
        acc += poisson.pmf(j, mu) * v
        if poisson.sf(j, mu) < spec.series_tol:
            break
        j += 1
        if j > max_terms:
            raise SeriesNotConverged(f"Poisson series needs more than {max_terms} terms (Lam t = {mu:g})")
        v = K.push(v)
    # mass not on S: absorbed along the way, plus the (below tolerance) neglected tail
    absorbed = absorbed0 + start_mass - float(acc.sum())
    return TransientLaw(space, acc, absorbed)


def ct_conditioned(nu: Distribution, spec: CtrwSpec) -> Distribution:
    """``nu U_t(.)/(1 - nu U_t(0))``."""
    if spec.t == 0:
        return nu
    return ct_semigroup_apply(nu, spec).conditioned()


def steps_for(t: float, r: float) -> int:
    """``floor(t/(1-r))`` with a small guard against rounding of ``1 - r``."""
    return int(math.floor(t / (1.0 - r) + FLOOR_EPS))


@dataclass
class LimitRow:
    r: float
    steps: int
    tv: float


@dataclass
class LimitReport:
    rows: list
    decreasing: bool
    final_tv: float
    threshold: float

    @property
    def passed(self) -> bool:
        return self.decreasing and self.final_tv < self.threshold


def discrete_to_continuous_limit_check(nu: Distribution, p: float, q: float, t: float, r_sequence: Sequence[float],
                                       N: Optional[int] = None, truncation: str = ABSORB,
                                       threshold: float = 1e-3, map_fn=map) -> LimitReport:
    """TV distance between ``nu T^r_t`` (lazy walk, ``floor(t/(1-r))`` steps) and
    the conditioned continuous walk at time t, for each r.

    Rates are normalized to ``p + q = 1`` on both sides.  ``map_fn`` lets the
    caller fan the per-r computations out (results keep the input order).
    """
    rs = list(r_sequence)
    if any(b <= a for a, b in zip(rs, rs[1:])):
        raise ValueError("r_sequence must be increasing")
    N = N or len(nu.space)
    s = p + q
    ref = ct_conditioned(nu, CtrwSpec(p / s, q / s, t, N, truncation=truncation))
    rows = list(map_fn(_limit_row, [(nu, p, q, t, r, N, truncation, ref) for r in rs]))
    tvs = [row.tv for row in rows]
    decreasing = all(b < a or (a == 0.0 and b == 0.0) for a, b in zip(tvs, tvs[1:]))
    return LimitReport(rows, decreasing, tvs[-1] if tvs else 0.0, threshold)


def _limit_row(args) -> LimitRow:
    nu, p, q, t, r, N, truncation, ref = args
    n = steps_for(t, r)
    k = discrete_family_kernel(p, q, r, N, truncation)
    return LimitRow(r, n, tv_distance(evolve_conditioned(nu, k, n), ref))
