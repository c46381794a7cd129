"""Discrete paths on dyadic grids and the exact discrete Ito/Stratonovich
identities.

A grid function is any callable ``f(t, x)`` that accepts a scalar ``t`` and a
numpy array of grid points ``x``. Walk-driven uses always have mesh
``h = 2**-m`` and time mesh ``h**2``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import HorizonError

__all__ = [
    "DyadicGrid",
    "DiscretePath",
    "GridFunction",
    "trapezoid_between",
    "trapezoidal_sum",
    "trapezoidal_sum_edges",
    "discrete_ito_decompose",
    "discrete_stratonovich_decompose",
    "stochastic_sum",
]


@dataclass(frozen=True)
class DyadicGrid:
    """The grid ``origin + mesh * Z`` with time mesh ``mesh**2``."""

    origin: float = 0.0
    mesh: float = 1.0

    def __post_init__(self):
        if not self.mesh > 0:
            raise ValueError("mesh must be positive")

    @classmethod
    def level(cls, m: int, origin: float = 0.0) -> "DyadicGrid":
        return cls(origin, 2.0 ** -m)

    @property
    def time_mesh(self) -> float:
        return self.mesh * self.mesh

    def node(self, k):
        return self.origin + np.asarray(k) * self.mesh

    def time(self, r):
        return np.asarray(r) * self.time_mesh


@dataclass(frozen=True)
class DiscretePath:
    """An oriented nearest-neighbour path ``x_r = x_{r-1} + mu_r * h``."""

    start: float
    increments: np.ndarray
    mesh: float = 1.0

    def __post_init__(self):
        inc = np.asarray(self.increments, dtype=np.int64).reshape(-1)
        if inc.size and not np.all(np.abs(inc) == 1):
            raise ValueError("increments must be +1 or -1")
        object.__setattr__(self, "increments", inc)

    def __len__(self):
        return self.increments.size

    @property
    def vertices(self) -> np.ndarray:
        steps = np.concatenate(([0], np.cumsum(self.increments)))
        return self.start + self.mesh * steps

    @property
    def end(self) -> float:
        return self.start + self.mesh * int(self.increments.sum())


@dataclass(frozen=True)
class GridFunction:
    """Deterministic function ``f(t, x)`` on a grid.

    ``smoothness`` is declared by the caller and never checked.
    """

    func: Callable
    smoothness: str = "continuous"

    def __call__(self, t, x):
        return self.func(t, x)


def _at_fixed_time(f, t):
    return lambda x: f(t, x)


def trapezoid_between(f, x_start: float, x_end: float, h: float) -> float:
    """Endpoint form of the trapezoidal sum ``T_{x=x_start}^{x_end} f(x) h``.

    ``f`` is a function of the space variable only, vectorised over arrays.
    """
    steps = int(round((x_end - x_start) / h))
    if steps == 0:
        return 0.0
    sgn = 1 if steps > 0 else -1
    nodes = x_start + sgn * h * np.arange(abs(steps) + 1)
    vals = np.asarray(f(nodes), dtype=float)
    return sgn * h * (0.5 * vals[0] + 0.5 * vals[-1] + vals[1:-1].sum())


def trapezoidal_sum(f, path: DiscretePath, h: float | None = None) -> float:
    """Trapezoidal sum of a space function over ``path``.

    Depends only on the endpoints; zero for an empty or closed path.
    """
    h = path.mesh if h is None else h
    if len(path) == 0:
        return 0.0
    return trapezoid_between(f, path.start, path.end, h)


def trapezoidal_sum_edges(f, path: DiscretePath, h: float | None = None) -> float:
    """Edge-by-edge reference for :func:`trapezoidal_sum`."""
    h = path.mesh if h is None else h
    if len(path) == 0:
        return 0.0
    x = path.vertices
    fx = np.asarray(f(x), dtype=float)
    return 0.5 * h * float(np.sum(path.increments * (fx[:-1] + fx[1:])))


def _time_term(f, s, h):
    dt = h * h
    total = 0.0
    for r in range(1, s.size):
        t_prev, t_cur = (r - 1) * dt, r * dt
        g = lambda x, a=t_cur, b=t_prev: (np.asarray(f(a, x)) - np.asarray(f(b, x))) / dt
        total += trapezoid_between(g, s[0], s[r], h) * dt
    return total


def discrete_ito_decompose(f, path: DiscretePath, h: float | None = None):
    """Split ``T_{x=S_0}^{S_n} f(t_n, x) h`` into time, stochastic and
    quadratic-variation terms.

    Returns ``(time_term, stochastic_sum, quadratic_term)``; the three add up
    to the trapezoidal sum of ``f(t_n, .)`` up to rounding.
    """
    h = path.mesh if h is None else h
    s = path.vertices
    xi = path.increments
    n = xi.size
    if n == 0:
        return 0.0, 0.0, 0.0
    t = np.arange(n + 1) * h * h
    f_prev = np.array([f(t[r - 1], s[r - 1 : r + 1]) for r in range(1, n + 1)], dtype=float)
    stoch = float(np.sum(f_prev[:, 0] * h * xi))
    quad = 0.5 * float(np.sum((f_prev[:, 1] - f_prev[:, 0]) / (h * xi))) * h * h
    return _time_term(f, s, h), stoch, quad


def discrete_stratonovich_decompose(f, path: DiscretePath, h: float | None = None):
    """Split the trapezoidal sum into a time term and a midpoint sum.

    Returns ``(time_term, midpoint_sum)``.
    """
    h = path.mesh if h is None else h
    s = path.vertices
    xi = path.increments
    n = xi.size
    if n == 0:
        return 0.0, 0.0
    t = np.arange(n + 1) * h * h
    f_prev = np.array([f(t[r - 1], s[r - 1 : r + 1]) for r in range(1, n + 1)], dtype=float)
    mid = float(np.sum(0.5 * (f_prev[:, 0] + f_prev[:, 1]) * h * xi))
    return _time_term(f, s, h), mid


def stochastic_sum(f, walk, t: float) -> float:
    """``sum_{r=1}^{floor(t 4^m)} f(t_{r-1}, B_m(t_{r-1})) 2^-m xi_m(r)``.

    ``walk`` is a :class:`~twistshrink.walker.WalkLevel`.
    """
    n = int(np.floor(t * 4.0 ** walk.level + 1e-9))
    if n > walk.n_steps:
        raise HorizonError(
            f"t={t} needs {n} steps but the level-{walk.level} walk has {walk.n_steps}"
        )
    if n == 0:
        return 0.0
    times = walk.times[:n]
    vals = walk.values[:n]
    fv = np.array([f(ti, np.array([bi]))[0] for ti, bi in zip(times, vals)], dtype=float)
    return float(np.sum(fv * walk.mesh * walk.increments[:n]))
