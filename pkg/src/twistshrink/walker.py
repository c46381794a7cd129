"""Nested "twist and shrink" random walks and Skorohod embedding.

Level ``m`` is a simple symmetric walk with time step ``4**-m`` and space step
``2**-m``. Levels are twisted so that level ``m+1`` sampled at its
even-crossing times reproduces level ``m`` doubled.

Randomness: every level draws its raw +-1 increments from its own PCG64
stream seeded by ``SeedSequence(seed, spawn_key=(level,))``, in chunks whose
size depends only on the level. Building with a longer horizon therefore
extends the same paths instead of resampling them.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import HorizonError, ResourceError

__all__ = [
    "TwistedWalk",
    "WalkLevel",
    "level_stream",
    "even_crossing_times",
    "build_twisted_hierarchy",
    "shrink",
    "skorohod_embed",
    "write_walks_csv",
]

_MAX_CHUNKS = 64


def level_stream(seed: int, level: int) -> np.random.Generator:
    """Independent generator for one row of the base walk matrix."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(level,))))


def _chunk_size(level):
    return max(1024, 4 ** level)


def _draw_signs(rng, n):
    raw = rng.integers(0, 256, size=n // 8, dtype=np.uint8)
    return (2 * np.unpackbits(raw).astype(np.int8) - 1).astype(np.int8)


def even_crossing_times(increments: np.ndarray) -> np.ndarray:
    """Stopping times ``T(k)`` at which the walk reaches an even integer
    different from the previous one. ``T(0) = 0`` is included.

    Starting from an even point the walk returns after two opposite steps or
    moves by 2 after two equal ones, so the times are read off step pairs.
    """
    n = increments.size // 2 * 2
    equal = increments[0:n:2] == increments[1:n:2]
    return np.concatenate(([0], 2 * (np.flatnonzero(equal) + 1))).astype(np.int64)


@dataclass(frozen=True)
class TwistedWalk:
    """Twisted integer walk of one level.

    ``increments`` are the twisted steps; ``stopping_times`` are its
    even-crossing times (twisting flips whole bridges, so they coincide with
    those of the raw walk).
    """

    level: int
    increments: np.ndarray
    stopping_times: np.ndarray

    @property
    def positions(self) -> np.ndarray:
        return np.concatenate(([0], np.cumsum(self.increments, dtype=np.int64)))

    def __len__(self):
        return self.increments.size


@dataclass(frozen=True)
class WalkLevel:
    """Shrunken walk ``B_m(t_r)`` on ``t_r = r 4^-m`` with values in ``2^-m Z``.

    ``positions`` holds the integer walk ``2^m B_m``; ``embed_index`` the
    Skorohod stopping indices into the reference walk, when embedded.
    """

    level: int
    positions: np.ndarray
    embed_index: np.ndarray | None = None
    reference_level: int | None = None

    @property
    def mesh(self) -> float:
        return 2.0 ** -self.level

    @property
    def time_mesh(self) -> float:
        return 4.0 ** -self.level

    @property
    def n_steps(self) -> int:
        return self.positions.size - 1

    @property
    def horizon(self) -> float:
        return self.n_steps * self.time_mesh

    @property
    def values(self) -> np.ndarray:
        return self.positions * self.mesh

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.positions.size) * self.time_mesh

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.positions).astype(np.int8)

    def steps_until(self, t: float) -> int:
        """``floor(t 4^m)``, guarded against rounding of dyadic ``t``."""
        return int(math.floor(t * 4.0 ** self.level + 1e-9))

    def __call__(self, t):
        """Piecewise-linear interpolation in time."""
        t = np.asarray(t, dtype=float)
        if np.any(t > self.horizon + 1e-12) or np.any(t < 0):
            raise HorizonError(f"time outside [0, {self.horizon}] for level {self.level}")
        return np.interp(t, self.times, self.values)

    def truncate(self, n: int) -> "WalkLevel":
        idx = None if self.embed_index is None else self.embed_index[: n + 1]
        return WalkLevel(self.level, self.positions[: n + 1], idx, self.reference_level)


class _LevelSource:
    """Lazily extended raw increments of one level."""

    def __init__(self, seed, level):
        self.level = level
        self.rng = level_stream(seed, level)
        self.chunks = []
        self.steps = np.empty(0, dtype=np.int8)
        self.times = np.zeros(1, dtype=np.int64)

    def extend(self):
        if len(self.chunks) >= _MAX_CHUNKS:
            raise ResourceError(
                f"level {self.level}: base walk exhausted after {self.steps.size} steps",
                level=self.level,
            )
        self.chunks.append(_draw_signs(self.rng, _chunk_size(self.level)))
        self.steps = np.concatenate(self.chunks)
        self.times = even_crossing_times(self.steps)

    def cover(self, n):
        """Make sure a complete bridge ends at or after step ``n``."""
        while self.times[-1] < n:
            self.extend()


def build_twisted_hierarchy(seed: int, levels: int, horizon: float) -> list[TwistedWalk]:
    """Twisted walks of levels ``0..levels`` covering ``[0, horizon]``.

    Level ``m`` has at least ``ceil(horizon 4^m)`` steps and always ends on a
    complete bridge, so the refinement identity
    ``S_{m+1}(T_{m+1}(k)) = 2 S_m(k)`` holds for every ``k`` in range.
    """
    if levels < 0:
        raise ValueError("levels must be >= 0")
    if not horizon > 0:
        raise ValueError("horizon must be positive")

    sources = [_LevelSource(seed, m) for m in range(levels + 1)]
    # Required steps flow downward: level m-1 needs one step per bridge of m.
    need = [0] * (levels + 1)
    bridges = [0] * (levels + 1)
    carry = 0
    for m in range(levels, -1, -1):
        need[m] = max(math.ceil(horizon * 4 ** m - 1e-9), carry, 1)
        src = sources[m]
        if m == 0:
            while src.steps.size < need[0]:
                src.extend()
            break
        src.cover(need[m])
        bridges[m] = int(np.searchsorted(src.times, need[m], side="left"))
        carry = bridges[m]

    walks = []
    s0 = sources[0]
    walks.append(TwistedWalk(0, s0.steps[: need[0]].copy(), even_crossing_times(s0.steps[: need[0]])))
    for m in range(1, levels + 1):
        src = sources[m]
        k = bridges[m]
        ends = src.times[: k + 1]
        raw = src.steps[: ends[-1]]
        target = walks[m - 1].increments[:k]
        flip = raw[ends[1:] - 1] * target
        twisted = raw * np.repeat(flip, np.diff(ends)).astype(np.int8)
        walks.append(TwistedWalk(m, twisted, ends.copy()))
    return walks


def shrink(tw: TwistedWalk) -> WalkLevel:
    """``B_m(t) = 2^-m S_m(t 4^m)``."""
    return WalkLevel(tw.level, tw.positions)


def skorohod_embed(reference: WalkLevel, m: int, horizon: float | None = None) -> WalkLevel:
    """Embed a level-``m`` walk into a finer ``reference`` walk by first
    passages at distance ``2^-m``.

    The embedded walk has ``ceil(horizon 4^m)`` steps; ``horizon`` defaults to
    the reference's horizon.
    """
    M = reference.level
    if m > M:
        raise ValueError(f"cannot embed level {m} into coarser level {M}")
    horizon = reference.horizon if horizon is None else horizon
    n = math.ceil(horizon * 4 ** m - 1e-9)
    if m == M:
        if n > reference.n_steps:
            raise ResourceError(
                f"reference has {reference.n_steps} steps, {n} needed",
                level=m,
                shortfall=n - reference.n_steps,
            )
        idx = np.arange(n + 1, dtype=np.int64)
        return WalkLevel(m, reference.positions[: n + 1].copy(), idx, M)

    span = 2 ** (M - m)
    s = reference.positions
    hits = np.flatnonzero(s % span == 0)
    units = s[hits] // span
    keep = np.concatenate(([True], units[1:] != units[:-1]))
    idx = hits[keep]
    if idx.size - 1 < n:
        raise ResourceError(
            f"reference level {M} exhausted after {idx.size - 1} embedded level-{m} steps; "
            f"{n} needed",
            level=m,
            shortfall=n - (idx.size - 1),
        )
    idx = idx[: n + 1]
    return WalkLevel(m, s[idx] // span, idx, M)


def write_walks_csv(walks, path) -> None:
    """Write walk levels as rows ``(level, r, t_r, value)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["level", "r", "t_r", "value"])
        for wl in walks:
            for r, (t, v) in enumerate(zip(wl.times, wl.values)):
                w.writerow([wl.level, r, f"{t:.17g}", f"{v:.17g}"])
