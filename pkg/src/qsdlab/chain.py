"""State spaces, absorbed kernels, distributions and the conditioned semigroup.

A chain lives on ``S ∪ {0}`` where ``0`` is absorbing.  Only the transient
part is stored: ``kernel.Q`` is the (sparse) restriction of the transition
matrix to ``S`` and ``kernel.absorption[i]`` is the probability of jumping
from the i-th state straight to ``0``.

Distributions are dense vectors over the indices of a :class:`StateSpace`.
The conditioned evolution renormalizes after every step, so arbitrarily long
runs never underflow; the per-step survival masses are recorded instead.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Hashable, Iterator, Mapping, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import InvalidOrder, SurvivalUnderflow

log = logging.getLogger(__name__)

ABSORB = "overflow-to-absorption"
HOLD = "overflow-to-hold"
TRUNCATION_MODES = (ABSORB, HOLD)

ROW_TOL = 1e-12
MASS_TOL = 1e-12
PRUNE_BELOW = 1e-16  # opt-in; see conditioned_orbit
UNDERFLOW_FLOOR = 1e-300


class StateSpace:
    """Finite set of labelled states with a partial order and a minimal state.

    ``leq=None`` means the total order given by the listing order of
    ``states``.  Otherwise ``leq[i, j]`` is True iff ``states[i] <= states[j]``.
    The absorbing label ``0`` is reserved and may not appear in ``states``.
    """

    def __init__(self, states: Sequence[Hashable], leq=None, minimal=None):
        states = tuple(states)
        if not states:
            raise ValueError("empty state space")
        if 0 in states:
            raise ValueError("label 0 is reserved for the absorbing state")
        if len(set(states)) != len(states):
            raise ValueError("duplicate state labels")
        self.states = states
        self._index = {s: i for i, s in enumerate(states)}
        if leq is None:
            self._leq = None
        else:
            leq = np.array(leq, dtype=bool)
            n = len(states)
            if leq.shape != (n, n):
                raise InvalidOrder(f"order matrix has shape {leq.shape}, expected {(n, n)}")
            _check_partial_order(leq)
            leq.setflags(write=False)
            self._leq = leq
        self.minimal = states[0] if minimal is None else minimal
        if self.minimal not in self._index:
            raise InvalidOrder(f"minimal state {self.minimal!r} is not a state")
        m = self._index[self.minimal]
        if not self.leq[m].all():
            bad = self.states[int(np.flatnonzero(~self.leq[m])[0])]
            raise InvalidOrder(f"declared minimal {self.minimal!r} is not <= {bad!r}")

    @classmethod
    def integers(cls, N: int) -> "StateSpace":
        """The truncation ``{1, ..., N}`` of the naturals with the usual order."""
        if N < 1:
            raise ValueError("N must be >= 1")
        return cls(range(1, N + 1))

    @classmethod
    def from_pairs(cls, states, pairs, minimal=None) -> "StateSpace":
        """Build a poset from generating pairs ``(x, y)`` meaning ``x <= y``.

        The reflexive-transitive closure is taken; antisymmetry is checked.
        """
        states = tuple(states)
        idx = {s: i for i, s in enumerate(states)}
        n = len(states)
        leq = np.eye(n, dtype=bool)
        for x, y in pairs:
            if x not in idx or y not in idx:
                raise InvalidOrder(f"order pair ({x!r}, {y!r}) mentions an unknown state")
            leq[idx[x], idx[y]] = True
        # Warshall closure
        for k in range(n):
            leq |= leq[:, k : k + 1] & leq[k : k + 1, :]
        return cls(states, leq=leq, minimal=minimal)

    @property
    def is_total(self) -> bool:
        """True when the order is the listing order (fast path)."""
        return self._leq is None

    @cached_property
    def leq(self) -> np.ndarray:
        if self._leq is not None:
            return self._leq
        m = np.triu(np.ones((len(self), len(self)), dtype=bool))
        m.setflags(write=False)
        return m

    @property
    def minimal_index(self) -> int:
        return self._index[self.minimal]

    def index(self, label) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise KeyError(f"{label!r} is not a state of this space") from None

    def label(self, i: int):
        return self.states[i]

    def __len__(self) -> int:
        return len(self.states)

    def __contains__(self, label) -> bool:
        return label in self._index

    def __eq__(self, other) -> bool:
        if not isinstance(other, StateSpace):
            return NotImplemented
        if self.states != other.states or self.minimal != other.minimal:
            return False
        if self.is_total and other.is_total:
            return True
        return bool(np.array_equal(self.leq, other.leq))

    def __hash__(self) -> int:
        return hash((self.states, self.minimal, self.is_total))

    def __repr__(self) -> str:
        kind = "total" if self.is_total else "partial"
        return f"StateSpace(n={len(self)}, order={kind}, minimal={self.minimal!r})"

    @cached_property
    def poset(self):
        from .order import PosetView

        return PosetView(self)


def _check_partial_order(leq: np.ndarray) -> None:
    n = leq.shape[0]
    if not leq.diagonal().all():
        raise InvalidOrder("order relation is not reflexive")
    sym = leq & leq.T
    np.fill_diagonal(sym, False)
    if sym.any():
        i, j = np.argwhere(sym)[0]
        raise InvalidOrder(f"order relation is not antisymmetric at indices ({i}, {j})")
    li = leq.astype(np.int64)
    if ((li @ li > 0) & ~leq).any():
        raise InvalidOrder("order relation is not transitive")
    del n


class AbsorbedKernel:
    """Transition matrix of a chain on ``S ∪ {0}`` absorbed at ``0``.

    Construction does not validate; use :func:`validate_kernel`, which reports
    violations as data.
    """

    def __init__(
        self,
        space: StateSpace,
        Q,
        absorption,
        truncation_mode: Optional[str] = None,
        overflow_states: Sequence = (),
    ):
        n = len(space)
        Q = sp.csr_matrix(Q, dtype=float)
        if Q.shape != (n, n):
            raise ValueError(f"Q has shape {Q.shape}, expected {(n, n)}")
        Q.eliminate_zeros()
        absorption = np.array(absorption, dtype=float).reshape(-1)
        if absorption.shape != (n,):
            raise ValueError("absorption vector has the wrong length")
        if truncation_mode is not None and truncation_mode not in TRUNCATION_MODES:
            raise ValueError(f"unknown truncation mode {truncation_mode!r}")
        absorption.setflags(write=False)
        self.space = space
        self.Q = Q
        self.absorption = absorption
        self.truncation_mode = truncation_mode
        # states whose row was altered by truncating a larger chain
        self.overflow_states = tuple(overflow_states)
        self._QT = Q.T.tocsr()

    @classmethod
    def from_rows(cls, space: StateSpace, rows: Mapping, **kw) -> "AbsorbedKernel":
        """``rows[x]`` maps target labels (``0`` = absorption) to probabilities."""
        n = len(space)
        data, ri, ci = [], [], []
        absorption = np.zeros(n)
        for x, row in rows.items():
            i = space.index(x)
            for y, pr in row.items():
                if y == 0:
                    absorption[i] += pr
                else:
                    ri.append(i)
                    ci.append(space.index(y))
                    data.append(float(pr))
        Q = sp.coo_matrix((data, (ri, ci)), shape=(n, n)).tocsr()
        return cls(space, Q, absorption, **kw)

    @cached_property
    def dense(self) -> np.ndarray:
        d = self.Q.toarray()
        d.setflags(write=False)
        return d

    def row(self, x) -> dict:
        """Row of ``x`` as a sparse map over ``S ∪ {0}``."""
        i = self.space.index(x)
        out = {}
        if self.absorption[i] != 0:
            out[0] = float(self.absorption[i])
        start, stop = self.Q.indptr[i], self.Q.indptr[i + 1]
        for j, v in zip(self.Q.indices[start:stop], self.Q.data[start:stop]):
            out[self.space.label(int(j))] = float(v)
        return out

    def push(self, weights: np.ndarray) -> np.ndarray:
        """``weights @ Q`` restricted to S (no conditioning)."""
        return self._QT @ weights

    def __len__(self) -> int:
        return len(self.space)

    def __repr__(self) -> str:
        return f"AbsorbedKernel(n={len(self)}, nnz={self.Q.nnz}, truncation={self.truncation_mode})"


class Distribution:
    """Probability vector on a :class:`StateSpace`.

    Weights are nonnegative and sum to 1 within ``MASS_TOL``.  Pass
    ``normalize=True`` to divide by the total first.
    """

    __slots__ = ("space", "weights")

    def __init__(self, space: StateSpace, weights, *, normalize: bool = False):
        w = np.array(weights, dtype=float).reshape(-1)
        if w.shape != (len(space),):
            raise ValueError(f"weights have length {w.size}, expected {len(space)}")
        if not np.isfinite(w).all():
            raise ValueError("weights must be finite")
        if (w < 0).any():
            raise ValueError(f"negative weight {w.min():.3e}")
        total = w.sum()
        if normalize:
            if total <= 0:
                raise ValueError("cannot normalize a zero measure")
            w = w / total
        elif abs(total - 1.0) > MASS_TOL:
            raise ValueError(f"total mass {total!r} differs from 1")
        w.setflags(write=False)
        self.space = space
        self.weights = w

    @classmethod
    def delta(cls, space: StateSpace, x=None) -> "Distribution":
        w = np.zeros(len(space))
        w[space.minimal_index if x is None else space.index(x)] = 1.0
        return cls(space, w)

    @classmethod
    def from_dict(cls, space: StateSpace, mapping: Mapping, *, normalize=False) -> "Distribution":
        w = np.zeros(len(space))
        for x, v in mapping.items():
            w[space.index(x)] += v
        return cls(space, w, normalize=normalize)

    def as_dict(self) -> dict:
        return {self.space.label(int(i)): float(self.weights[i]) for i in np.flatnonzero(self.weights)}

    def support(self) -> list:
        return [self.space.label(int(i)) for i in np.flatnonzero(self.weights)]

    def __getitem__(self, x) -> float:
        return float(self.weights[self.space.index(x)])

    def mass(self, labels) -> float:
        return float(sum(self.weights[self.space.index(x)] for x in labels))

    def tv(self, other: "Distribution") -> float:
        return tv_distance(self, other)

    def __repr__(self) -> str:
        sup = np.flatnonzero(self.weights)
        return f"Distribution(n={len(self.space)}, support_size={sup.size})"


def tv_distance(a, b) -> float:
    """Total variation distance, half the l1 distance."""
    wa = a.weights if isinstance(a, Distribution) else np.asarray(a)
    wb = b.weights if isinstance(b, Distribution) else np.asarray(b)
    return 0.5 * float(np.abs(wa - wb).sum())


def validate_kernel(k: AbsorbedKernel) -> list[str]:
    """Return the list of violated kernel invariants (empty if valid)."""
    out = []
    labels = k.space.states
    Q = k.Q.tocoo()
    for i, j, v in zip(Q.row, Q.col, Q.data):
        if v < 0:
            out.append(f"negative entry Q({labels[i]},{labels[j]})={v:g}")
    for i in np.flatnonzero(k.absorption < 0):
        out.append(f"negative entry Q({labels[i]},0)={k.absorption[i]:g}")
    sums = np.asarray(k.Q.sum(axis=1)).reshape(-1) + k.absorption
    for i in np.flatnonzero(np.abs(sums - 1.0) > ROW_TOL):
        out.append(f"row sum {sums[i]:.15g} != 1 at x={labels[i]}")
    for i in np.flatnonzero(k.absorption >= 1.0):
        out.append(f"Q(x,0)<1 fails at x={labels[i]}")
    return out


def _conditioned_step(w: np.ndarray, k: AbsorbedKernel, prune: float = 0.0) -> tuple[np.ndarray, float]:
    nxt = k.push(w)
    s = float(nxt.sum())
    if not s > UNDERFLOW_FLOOR:
        raise SurvivalUnderflow(f"survival mass {s:.3e} below floor")
    nxt /= s
    if prune > 0:
        nxt[nxt < prune] = 0.0
    return nxt, s


def conditioned_orbit(nu: Distribution, k: AbsorbedKernel, prune: float = 0.0) -> Iterator[tuple[np.ndarray, float]]:
    """Yield ``(weights of nu T_n, survival of step n)`` for n = 1, 2, ...

    The survival of step n is ``a(nu T_{n-1})``; their product is the raw
    survival probability ``1 - nu Q^n(0)``.

    ``prune > 0`` zeroes weights below it after each step (``PRUNE_BELOW`` is
    the customary value).  Off by default: on a chain started from a point
    mass the newly reached states always enter below 1e-16, so pruning
    freezes the support and acts as a hidden truncation.
    """
    _same_space(nu, k)
    w = nu.weights.copy()
    while True:
        w, s = _conditioned_step(w, k, prune)
        yield w, s


def evolve_conditioned(nu: Distribution, k: AbsorbedKernel, n: int, prune: float = 0.0) -> Distribution:
    """``nu T_n``: law at time n of the chain started from ``nu``, given survival."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    _same_space(nu, k)
    w = nu.weights.copy()
    for _ in range(n):
        w, _s = _conditioned_step(w, k, prune)
    return Distribution(k.space, w, normalize=True)


def survival_mass(nu: Distribution, k: AbsorbedKernel) -> float:
    """``a(nu) = 1 - nu Q(0)``."""
    _same_space(nu, k)
    return 1.0 - float(nu.weights @ k.absorption)


def qsd_residual(nu: Distribution, k: AbsorbedKernel) -> float:
    """l1 norm over S of ``nu(y) - sum_x nu(x) [Q(x,y) + Q(x,0) nu(y)]``."""
    _same_space(nu, k)
    w = nu.weights
    defect = w - (k.push(w) + float(w @ k.absorption) * w)
    return float(np.abs(defect).sum())


@dataclass
class YaglomReport:
    limit: Distribution
    steps: int
    converged: bool
    final_tv: float
    residual: float
    tv_history: np.ndarray
    survival_history: np.ndarray
    window_min_tv: float
    bounded_away: bool
    iterates: Optional[list] = field(default=None, repr=False)

    @property
    def log_survival(self) -> float:
        """log of the raw survival probability ``1 - nu Q^n(0)``."""
        return float(np.log(self.survival_history).sum())


def yaglom_iterate(
    nu: Distribution,
    k: AbsorbedKernel,
    max_n: int = 10_000,
    tol: float = 1e-8,
    *,
    keep_iterates: bool = False,
    window: int = 50,
    prune: float = 0.0,
) -> YaglomReport:
    """Iterate ``T_1`` from ``nu`` until consecutive iterates are within ``tol`` in TV.

    ``bounded_away`` flags runs whose consecutive TV stayed above 1e-3 over
    the last ``window`` steps (the signature of a periodic chain).  It is a
    heuristic and is only reported.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    tvs, survs = [], []
    iterates = [nu] if keep_iterates else None
    w = nu.weights
    converged = False
    steps = 0
    for steps, (nxt, s) in enumerate(conditioned_orbit(nu, k, prune), start=1):
        d = 0.5 * float(np.abs(nxt - w).sum())
        tvs.append(d)
        survs.append(s)
        w = nxt.copy()
        if keep_iterates:
            iterates.append(Distribution(k.space, w, normalize=True))
        if d < tol:
            converged = True
            break
        if steps >= max_n:
            break
    limit = Distribution(k.space, w, normalize=True)
    tvs = np.asarray(tvs)
    tail = tvs[-window:] if tvs.size else np.zeros(1)
    wmin = float(tail.min())
    report = YaglomReport(
        limit=limit,
        steps=steps,
        converged=converged,
        final_tv=float(tvs[-1]) if tvs.size else 0.0,
        residual=qsd_residual(limit, k),
        tv_history=tvs,
        survival_history=np.asarray(survs),
        window_min_tv=wmin,
        bounded_away=(not converged) and tvs.size >= window and wmin > 1e-3,
        iterates=iterates,
    )
    log.debug("yaglom: steps=%d converged=%s final_tv=%.3e", steps, converged, report.final_tv)
    return report


def _same_space(nu: Distribution, k: AbsorbedKernel) -> None:
    if nu.space is not k.space and nu.space != k.space:
        raise ValueError("distribution and kernel live on different state spaces")
