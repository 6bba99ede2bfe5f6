"""Local domination conditions for trajectory domination, and trajectory irreducibility.

All three conditions have the same shape: a family of conditional measures
indexed by one or two states must be monotone in the index.  For a fixed
upper set ``U`` we compute the array of masses ``L[x, z] = mu_{x,z}(U)`` on the
left and ``R[x', z']`` on the right; the condition asks that the maximum of
``L`` over the lower quadrant ``{x <= x', z <= z'}`` never exceeds
``R[x', z']``.  On a total order the quadrant maximum is a cumulative maximum,
so a full scan costs O(N^3) for condition (b).

Entries whose normalizing denominator vanishes are undefined (NaN) and
ignored on either side.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .chain import AbsorbedKernel, Distribution, StateSpace
from .errors import InstanceTooLarge
from .order import DOM_TOL
from .trajectory import TrajectoryMeasure

NEG = -np.inf


@dataclass(frozen=True)
class ConditionReport:
    condition: str
    holds: bool
    counterexample: Optional[dict] = None

    def __bool__(self) -> bool:
        return self.holds


def _down_max(M: np.ndarray, axis: int, space: StateSpace, classes=None) -> np.ndarray:
    """Max of ``M`` over ``{i : i <= j}`` along ``axis`` (same class only, if given)."""
    if classes is not None:
        classes = np.asarray(classes)
        out = np.full_like(M, NEG)
        for c in np.unique(classes):
            sel = classes == c
            shape = [1] * M.ndim
            shape[axis] = -1
            sel_b = sel.reshape(shape)
            part = _down_max(np.where(sel_b, M, NEG), axis, space)
            out = np.where(sel_b, part, out)
        return out
    if space.is_total:
        return np.maximum.accumulate(M, axis=axis)
    leq = space.leq
    Mm = np.moveaxis(M, axis, 0)
    out = np.empty_like(Mm)
    for j in range(Mm.shape[0]):
        out[j] = Mm[leq[:, j]].max(axis=0)
    return np.moveaxis(out, 0, axis)


def _find_violation(L, R, space, classes=None, tol=DOM_TOL, ordered_axes=None):
    """First position where the quadrant max of L exceeds R, with its lower partner.

    The first ``ordered_axes`` axes are indexed by states and ordered; any
    remaining axes are compared pointwise.
    """
    nord = L.ndim if ordered_axes is None else ordered_axes
    Lm = np.where(np.isnan(L), NEG, L)
    PM = Lm
    for ax in range(nord):
        PM = _down_max(PM, ax, space, classes if ax == 0 else None)
    with np.errstate(invalid="ignore"):
        bad = ~np.isnan(R) & (PM > R + tol)
    if not bad.any():
        return None
    hi = tuple(int(i) for i in np.argwhere(bad)[0])
    region = np.ones(L.shape, dtype=bool)
    for ax, j in enumerate(hi):
        shape = [1] * L.ndim
        shape[ax] = -1
        if ax < nord:
            mask = space.leq[:, j].copy()
            if ax == 0 and classes is not None:
                mask &= np.asarray(classes) == np.asarray(classes)[j]
        else:
            mask = np.arange(L.shape[ax]) == j
        region &= mask.reshape(shape)
    cand = np.where(region, Lm, NEG)
    lo = tuple(int(i) for i in np.unravel_index(int(np.argmax(cand)), L.shape))
    return lo, hi, float(Lm[lo]), float(R[hi])


def _upper_sets(space: StateSpace):
    """Yield ``(description, mask)`` for every upper set; tails first-to-last on total orders."""
    n = len(space)
    if space.is_total:
        for i in range(n):
            m = np.zeros(n, dtype=bool)
            m[i:] = True
            yield space.label(i), m
    else:
        for m in space.poset.upper_sets:
            yield frozenset(space.label(int(j)) for j in np.flatnonzero(m)), m


def _safe_div(num, den):
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), np.nan)


def _check_spaces(*objs):
    space = objs[0].space
    for o in objs[1:]:
        if o.space != space:
            raise ValueError("all arguments must live on the same state space")
    return space


def check_condition_a(nu: Distribution, nu_p: Distribution, Q: AbsorbedKernel,
                      Q_p: Optional[AbsorbedKernel] = None, tol: float = DOM_TOL) -> ConditionReport:
    """``nu(.)Q(.,z)/nuQ(z) ≺ nu'(.)Q'(.,z')/nu'Q'(z')`` for all ``z <= z'``."""
    Q_p = Q if Q_p is None else Q_p
    space = _check_spaces(nu, nu_p, Q, Q_p)
    WL = nu.weights[:, None] * Q.dense  # (w, z)
    WR = nu_p.weights[:, None] * Q_p.dense
    dl, dr = WL.sum(axis=0), WR.sum(axis=0)
    for desc, U in _upper_sets(space):
        L = _safe_div(WL[U].sum(axis=0), dl)
        R = _safe_div(WR[U].sum(axis=0), dr)
        v = _find_violation(L, R, space, tol=tol)
        if v is not None:
            (z,), (zp,), lhs, rhs = v
            return ConditionReport("a", False, {
                "z": space.label(z), "z_prime": space.label(zp),
                "upper_set": _desc(desc), "lhs": lhs, "rhs": rhs})
    return ConditionReport("a", True)


def check_condition_c(Q: AbsorbedKernel, Q_p: Optional[AbsorbedKernel] = None, classes=None,
                      tol: float = DOM_TOL) -> ConditionReport:
    """``Q(x,.)/(1-Q(x,0)) ≺ Q'(x',.)/(1-Q'(x',0))`` for all ``x <= x'``.

    ``classes`` (one label per state index) restricts the quantifier to pairs
    in the same class.
    """
    Q_p = Q if Q_p is None else Q_p
    space = _check_spaces(Q, Q_p)
    A, B = Q.dense, Q_p.dense
    dl, dr = 1.0 - Q.absorption, 1.0 - Q_p.absorption
    if space.is_total:
        TL = np.cumsum(A[:, ::-1], axis=1)[:, ::-1]  # TL[x, y] = Q(x, {>= y})
        TR = np.cumsum(B[:, ::-1], axis=1)[:, ::-1]
        L = _safe_div(TL, dl[:, None])
        R = _safe_div(TR, dr[:, None])
        v = _find_violation(L, R, space, classes=classes, tol=tol, ordered_axes=1)
        if v is not None:
            (x, y), (xp, _), lhs, rhs = v
            return ConditionReport("c", False, {
                "x": space.label(x), "x_prime": space.label(xp),
                "threshold": space.label(y), "lhs": lhs, "rhs": rhs})
        return ConditionReport("c", True)
    for desc, U in _upper_sets(space):
        L = _safe_div(A[:, U].sum(axis=1), dl)
        R = _safe_div(B[:, U].sum(axis=1), dr)
        v = _find_violation(L, R, space, classes=classes, tol=tol)
        if v is not None:
            (x,), (xp,), lhs, rhs = v
            return ConditionReport("c", False, {
                "x": space.label(x), "x_prime": space.label(xp),
                "upper_set": _desc(desc), "lhs": lhs, "rhs": rhs})
    return ConditionReport("c", True)


def _b_scan(A1, A2, B1, B2, space, classes, tol, k=None):
    """Scan condition (b) for two-step products ``A1 A2`` (left) and ``B1 B2`` (right)."""
    DL = A1 @ A2
    DR = B1 @ B2
    same = A1 is B1 and A2 is B2
    n = len(space)
    found = None
    if space.is_total:
        TL = np.zeros((n, n))
        TR = TL if same else np.zeros((n, n))
        # descending thresholds; the last violation found has the smallest threshold
        for y in range(n - 1, -1, -1):
            TL += np.outer(A1[:, y], A2[y, :])
            if not same:
                TR += np.outer(B1[:, y], B2[y, :])
            L = _safe_div(TL, DL)
            R = L if same else _safe_div(TR, DR)
            v = _find_violation(L, R, space, classes=classes, tol=tol)
            if v is not None:
                found = (space.label(y), v)
    else:
        for desc, U in _upper_sets(space):
            L = _safe_div(A1[:, U] @ A2[U, :], DL)
            R = _safe_div(B1[:, U] @ B2[U, :], DR)
            v = _find_violation(L, R, space, classes=classes, tol=tol)
            if v is not None:
                found = (_desc(desc), v)
                break
    if found is None:
        return None
    desc, ((x, z), (xp, zp), lhs, rhs) = found
    ce = {"x": space.label(x), "x_prime": space.label(xp), "z": space.label(z),
          "z_prime": space.label(zp), "lhs": lhs, "rhs": rhs}
    ce["threshold" if space.is_total else "upper_set"] = desc
    if k is not None:
        ce["k"] = k
    return ce


def check_condition_b(Q: AbsorbedKernel, Q_p: Optional[AbsorbedKernel] = None, classes=None,
                      tol: float = DOM_TOL) -> ConditionReport:
    """``Q(x,.)Q(.,z)/Q²(x,z) ≺ Q'(x',.)Q'(.,z')/Q'²(x',z')`` for ``x <= x'``, ``z <= z'``.

    On total orders the reported counterexample has the smallest violating
    threshold ``y`` (the upper set ``{>= y}``).
    """
    Q_p = Q if Q_p is None else Q_p
    space = _check_spaces(Q, Q_p)
    A = Q.dense
    B = A if Q_p is Q else Q_p.dense
    ce = _b_scan(A, A, B, B, space, classes, tol)
    return ConditionReport("b", ce is None, ce)


def check_condition_b_nonhomogeneous(family: Sequence[AbsorbedKernel], family_p: Sequence[AbsorbedKernel],
                                     start: int = 0, tol: float = DOM_TOL) -> ConditionReport:
    """Condition (b') for consecutive pairs of a time-inhomogeneous family.

    ``family[i]`` drives the step from window time ``start + i`` to
    ``start + i + 1``; the check runs for every interior time ``k`` and uses
    the pair ``(family[k-1-start], family[k-start])``.  The first failing
    ``k`` is reported.
    """
    if len(family) != len(family_p):
        raise ValueError("families must have equal length")
    space = _check_spaces(*family, *family_p)
    dense = {}

    def d(K):
        if id(K) not in dense:
            dense[id(K)] = K.dense
        return dense[id(K)]

    for i in range(1, len(family)):
        A1, A2 = d(family[i - 1]), d(family[i])
        B1, B2 = d(family_p[i - 1]), d(family_p[i])
        ce = _b_scan(A1, A2, B1, B2, space, None, tol, k=start + i)
        if ce is not None:
            return ConditionReport("b'", False, ce)
    return ConditionReport("b'", True)


def _desc(desc):
    return sorted(desc) if isinstance(desc, frozenset) else desc


def holley_conditions(nu: Distribution, nu_p: Distribution, tm_kernels, tm_kernels_p) -> dict:
    """Conditions (a), (b)/(b') and (c) for two trajectory windows."""
    a = check_condition_a(nu, nu_p, tm_kernels[0], tm_kernels_p[0])
    c = check_condition_c(tm_kernels[-1], tm_kernels_p[-1])
    homog = all(K is tm_kernels[0] for K in tm_kernels) and all(K is tm_kernels_p[0] for K in tm_kernels_p)
    if homog:
        b = check_condition_b(tm_kernels[0], tm_kernels_p[0])
    else:
        b = check_condition_b_nonhomogeneous(tm_kernels, tm_kernels_p)
    return {"a": a, "b": b, "c": c}


def _has_birth_death_shortcut(tm: TrajectoryMeasure) -> bool:
    space = tm.space
    if not space.is_total:
        return False
    n = len(space)
    sup = np.flatnonzero(tm.initial.weights)
    if sup[-1] - sup[0] + 1 != sup.size:
        return False
    for K in set(tm.kernels):
        Q = K.Q.tocoo()
        if (np.abs(Q.row - Q.col) > 1).any():
            return False
        d = K.dense
        if (np.diag(d) <= 0).any():
            return False
        if n > 1 and ((np.diag(d, 1) <= 0).any() or (np.diag(d, -1) <= 0).any()):
            return False
    return True


def trajectory_components(tm: TrajectoryMeasure) -> int:
    """Connected components of the support under single-coordinate moves."""
    P = tm.paths
    labels = np.arange(len(P))
    while True:
        before = labels.copy()
        for k in range(P.shape[1]):
            rest = np.delete(P, k, axis=1)
            _, inv = np.unique(rest, axis=0, return_inverse=True)
            inv = inv.reshape(-1)
            gmin = np.full(inv.max() + 1, len(P))
            np.minimum.at(gmin, inv, labels)
            labels = gmin[inv]
        labels = labels[labels]
        if np.array_equal(labels, before):
            return int(np.unique(labels).size)


def check_trajectory_irreducibility(tm: TrajectoryMeasure, *, shortcut: bool = True) -> bool:
    """Is the support of ``tm`` connected under single-coordinate changes?

    Birth-death kernels with positive holding and nearest-neighbour
    probabilities everywhere (and an interval as initial support) are
    irreducible without enumeration.  Otherwise the support is enumerated.
    """
    if shortcut and _has_birth_death_shortcut(tm):
        return True
    try:
        return trajectory_components(tm) == 1
    except InstanceTooLarge:
        raise InstanceTooLarge("no analytic shortcut applies and the support is too large to enumerate")
