"""Conditioned laws of finite trajectories.

``TrajectoryMeasure`` is the law of ``(X_n, ..., X_m)`` started from ``nu`` at
time ``n`` and conditioned on not being absorbed during ``[n, m]``.  The chain
may be time-inhomogeneous: ``kernels[i]`` drives the step from site ``i`` to
site ``i + 1`` of the window.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .chain import AbsorbedKernel, Distribution
from .errors import InstanceTooLarge

MAX_PATHS = 200_000


@dataclass(frozen=True, eq=False)
class TrajectoryMeasure:
    kernels: tuple
    initial: Distribution
    start: int = 0

    def __post_init__(self):
        if len(self.kernels) < 1:
            raise ValueError("a trajectory window needs at least two sites")
        for k in self.kernels:
            if k.space != self.initial.space:
                raise ValueError("kernels and initial distribution live on different spaces")

    @classmethod
    def homogeneous(cls, nu: Distribution, Q: AbsorbedKernel, n: int, m: int) -> "TrajectoryMeasure":
        """``mu_n^m(nu, Q)``; the window ``[n, m]`` has ``m - n + 1`` sites."""
        if m <= n:
            raise ValueError("need n < m")
        return cls(tuple([Q] * (m - n)), nu, n)

    @property
    def space(self):
        return self.initial.space

    @property
    def length(self) -> int:
        return len(self.kernels) + 1

    @property
    def window(self) -> tuple[int, int]:
        return self.start, self.start + self.length - 1

    @property
    def is_homogeneous(self) -> bool:
        return all(k is self.kernels[0] for k in self.kernels)

    def count_paths(self, cap: int = MAX_PATHS) -> int:
        """Number of positive-probability paths, or ``cap + 1`` if above ``cap``."""
        alive = self.initial.weights > 0
        counts = alive.astype(float)
        for k in self.kernels:
            counts = (k.Q.T > 0).astype(float) @ counts
            if counts.sum() > cap:
                return cap + 1
        return int(counts.sum())

    @cached_property
    def _enumerated(self) -> tuple[np.ndarray, np.ndarray, float]:
        if self.count_paths() > MAX_PATHS:
            raise InstanceTooLarge(f"more than {MAX_PATHS} positive-probability trajectories")
        idx = np.flatnonzero(self.initial.weights)
        paths = idx[:, None]
        w = self.initial.weights[idx]
        for k in self.kernels:
            Q = k.Q
            new_p, new_w = [], []
            for path, pw in zip(paths, w):
                x = path[-1]
                lo, hi = Q.indptr[x], Q.indptr[x + 1]
                for y, q in zip(Q.indices[lo:hi], Q.data[lo:hi]):
                    if q > 0:
                        new_p.append(np.append(path, y))
                        new_w.append(pw * q)
            if not new_p:
                raise ValueError("every trajectory is absorbed inside the window")
            paths = np.array(new_p, dtype=np.int64)
            w = np.array(new_w)
        raw = float(w.sum())
        paths.setflags(write=False)
        return paths, w / raw, raw

    @property
    def paths(self) -> np.ndarray:
        """Index-coded support, shape ``(n_paths, length)``."""
        return self._enumerated[0]

    @property
    def probs(self) -> np.ndarray:
        return self._enumerated[1]

    @property
    def survival(self) -> float:
        """``1 - nu Q^{m-n}(0)``, the normalizing constant."""
        return self._enumerated[2]

    def table(self) -> dict:
        """Exact ``{trajectory (labels): probability}``."""
        lab = self.space.states
        return {tuple(lab[i] for i in p): float(w) for p, w in zip(self.paths, self.probs)}

    def marginal(self, site: int) -> Distribution:
        w = np.bincount(self.paths[:, site], weights=self.probs, minlength=len(self.space))
        return Distribution(self.space, w, normalize=True)

    def last_marginal(self) -> Distribution:
        return self.marginal(self.length - 1)

    def sample(self, rng: np.random.Generator, size: int = 1) -> np.ndarray:
        """Index-coded samples, shape ``(size, length)``.

        Uses the exact table when it fits, otherwise forward simulation with
        rejection of absorbed paths (unbiased, possibly slow).
        """
        if self.count_paths() <= MAX_PATHS:
            pick = rng.choice(len(self.probs), size=size, p=self.probs)
            return np.array(self.paths[pick])
        return self._rejection_sample(rng, size)

    def _rejection_sample(self, rng, size, max_tries: int = 10_000_000) -> np.ndarray:
        out = []
        tries = 0
        n = len(self.space)
        rows = [np.hstack([k.dense, k.absorption[:, None]]).cumsum(axis=1) for k in self.kernels]
        init_cdf = np.cumsum(self.initial.weights)
        while len(out) < size:
            tries += 1
            if tries > max_tries:
                raise InstanceTooLarge("rejection sampler exceeded its try budget")
            x = min(int(np.searchsorted(init_cdf, rng.random(), side="right")), n - 1)
            path = [x]
            for cdf in rows:
                y = int(np.searchsorted(cdf[x], rng.random() * cdf[x][-1], side="right"))
                if y >= n:
                    break
                path.append(y)
                x = y
            else:
                out.append(path)
        return np.array(out, dtype=np.int64)


def encode_paths(paths: np.ndarray, n_states: int) -> np.ndarray:
    """Mixed-radix integer code of index paths (site 0 least significant)."""
    base = n_states ** np.arange(paths.shape[1], dtype=np.int64)
    return paths.astype(np.int64) @ base
