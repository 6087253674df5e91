"""Interval partitions: ordered block masses, concatenation, scaling, diversity.

A partition is stored as its left-to-right block masses; block positions are
implicit prefix sums, so the interval (a, b) of the i-th block is recovered
as (prefix[i], prefix[i] + mass[i]).  Truncation metadata rides along:
``dust_bound`` accumulates an upper bound on mass lost to dropped
sub-threshold blocks and ``resolution`` records the size scale below which
stored blocks may be missing.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np

from .primitives import sample_beta
from .rng import RandomSource

__all__ = ["IntervalPartition", "EMPTY", "concat", "scale", "diversity", "sample_pdip"]

SQRT_PI = math.sqrt(math.pi)


class IntervalPartition:
    """Immutable ordered sequence of positive block masses."""

    __slots__ = ("blocks", "dust_bound", "resolution")

    def __init__(self, blocks=(), dust_bound: float = 0.0, resolution: float = 0.0):
        arr = np.asarray(blocks, dtype=float)
        if arr.ndim != 1:
            raise ValueError("blocks must be one-dimensional")
        if arr.size and not np.all(arr > 0):
            raise ValueError("all block masses must be positive")
        arr = arr.copy()
        arr.setflags(write=False)
        self.blocks = arr
        self.dust_bound = float(dust_bound)
        self.resolution = float(resolution)

    @classmethod
    def _wrap(cls, arr: np.ndarray, dust_bound: float, resolution: float) -> "IntervalPartition":
        # internal fast path: caller guarantees a fresh positive float array
        self = object.__new__(cls)
        arr.setflags(write=False)
        self.blocks = arr
        self.dust_bound = dust_bound
        self.resolution = resolution
        return self

    @property
    def mass(self) -> float:
        return float(self.blocks.sum())

    def __len__(self) -> int:
        return self.blocks.size

    def __bool__(self) -> bool:
        return self.blocks.size > 0

    def __eq__(self, other) -> bool:
        if not isinstance(other, IntervalPartition):
            return NotImplemented
        return np.array_equal(self.blocks, other.blocks)

    def __repr__(self):
        head = np.array2string(self.blocks[:6], precision=4, separator=", ")
        more = "" if len(self) <= 6 else f" (+{len(self) - 6} more)"
        return f"IntervalPartition({head}{more}, mass={self.mass:.6g})"

    def block_interval(self, index: int) -> tuple[float, float]:
        """Endpoints (a, b) of the index-th block from prefix sums."""
        a = float(self.blocks[:index].sum())
        return a, a + float(self.blocks[index])

    def split_at(self, index: int):
        """(prefix partition, block mass, suffix partition) around one block."""
        if not 0 <= index < len(self):
            raise IndexError(f"block index {index} out of range")
        left = IntervalPartition(self.blocks[:index], 0.0, self.resolution)
        right = IntervalPartition(self.blocks[index + 1 :], self.dust_bound, self.resolution)
        return left, float(self.blocks[index]), right


EMPTY = IntervalPartition()


def concat(*parts: IntervalPartition) -> IntervalPartition:
    """Left-to-right concatenation; masses and dust bounds add."""
    parts = [p for p in parts if p is not None]
    if not parts:
        return EMPTY
    blocks = np.concatenate([p.blocks for p in parts])
    return IntervalPartition._wrap(
        blocks,
        sum(p.dust_bound for p in parts),
        max(p.resolution for p in parts),
    )


def scale(alpha: IntervalPartition, c: float) -> IntervalPartition:
    """Every block mass multiplied by c > 0; diversity scales by sqrt(c)."""
    if not (c > 0):
        raise ValueError(f"scale factor must be positive, got {c!r}")
    return IntervalPartition._wrap(alpha.blocks * c, alpha.dust_bound * c, alpha.resolution * c)


def default_h_schedule(alpha: IntervalPartition, points_per_decade: int = 4) -> np.ndarray:
    """Decreasing geometric grid from the largest block down to the resolution floor."""
    if len(alpha) == 0:
        return np.array([1.0])
    top = float(alpha.blocks.max())
    floor = resolution_floor(alpha)
    if floor >= top:
        return np.array([floor])
    n = max(2, int(math.log10(top / floor) * points_per_decade) + 1)
    return np.geomspace(top, floor, n)


def resolution_floor(alpha: IntervalPartition) -> float:
    """Smallest h at which block counts are trustworthy: 4x the scale at
    which stored blocks stop being complete (truncation scale or smallest
    stored block)."""
    smallest = float(alpha.blocks.min()) if len(alpha) else 0.0
    return 4.0 * max(alpha.resolution, smallest)


def diversity(
    alpha: IntervalPartition,
    prefix: Optional[int] = None,
    h_schedule: Optional[Sequence[float]] = None,
) -> tuple[float, float]:
    """Estimate sqrt(pi) * lim sqrt(h) #{blocks > h before position prefix}.

    Evaluates sqrt(pi)*sqrt(h)*count(h) along the decreasing schedule and
    returns (value at the smallest admissible h, spread over the last three
    schedule points as an error estimate).  prefix=None means the whole
    partition; prefix=j restricts to the first j blocks.
    """
    if prefix is None:
        blocks = alpha.blocks
    else:
        blocks = alpha.blocks[: max(0, prefix)]
    if blocks.size == 0:
        return 0.0, 0.0
    sub = IntervalPartition(blocks, alpha.dust_bound, alpha.resolution)
    if h_schedule is None:
        h_schedule = default_h_schedule(sub)
    hs = np.asarray(h_schedule, dtype=float)
    if hs.size == 0 or np.any(np.diff(hs) > 0):
        raise ValueError("h_schedule must be nonempty and decreasing")
    floor = resolution_floor(sub)
    if hs[-1] < floor * (1 - 1e-12):
        raise ValueError(
            f"h_schedule reaches {hs[-1]:.3g}, below the resolution floor {floor:.3g}"
        )
    sorted_blocks = np.sort(blocks)
    counts = blocks.size - np.searchsorted(sorted_blocks, hs, side="right")
    vals = SQRT_PI * np.sqrt(hs) * counts
    tail = vals[-3:] if vals.size >= 3 else vals
    return float(vals[-1]), float(tail.max() - tail.min())


def sample_pdip(rng: RandomSource, n_blocks: int = 10_000) -> IntervalPartition:
    """Unit-mass Poisson-Dirichlet(1/2, 1/2) interval partition.

    Stick-breaking with residual fractions Beta(1/2, (n+1)/2) at step n,
    truncated to n_blocks sticks whose leftover mass goes to dust_bound; the
    stored blocks are uniformly permuted, standing in for an exchangeable
    arrangement.  Ordering-sensitive functionals should not rely on it.
    """
    if n_blocks < 1:
        raise ValueError("n_blocks must be >= 1")
    gen = rng.generator
    n = np.arange(1, n_blocks + 1)
    b = gen.beta(0.5, 0.5 + 0.5 * n)
    log_resid = np.concatenate([[0.0], np.cumsum(np.log1p(-b[:-1]))])
    sticks = b * np.exp(log_resid)
    residual = math.exp(log_resid[-1] + math.log1p(-b[-1]))
    sticks = sticks[sticks > 0]
    gen.shuffle(sticks)
    smallest = float(sticks.min()) if sticks.size else 0.0
    return IntervalPartition(sticks, dust_bound=residual, resolution=smallest)
