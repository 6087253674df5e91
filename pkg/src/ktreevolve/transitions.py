"""Exact interval-partition transition kernels and the type-2 construction.

The type-0 and type-1 kernels are sampled exactly for any elapsed time, so a
state can be advanced over an interval in one draw; composing draws over a
partition of the interval yields the same marginal law (a tested invariant).
The type-2 evolution has no closed-form kernel here and is built pathwise by
alternating a squared-Bessel(-1) clock top with a type-1 evolution, swapping
roles when the clock is absorbed.

Degeneration of a type-1 evolution is absorption at (0, empty).  Its total
mass is a squared Bessel(0), so given mass M at the start of a query window
of length d, conditionally on being dead at the end, the death time within
the window has exact conditional law P(death <= s) = exp(-M/2s + M/2d);
windows are refined by inverse transform rather than by grid search.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .partition import EMPTY, IntervalPartition, concat
from .primitives import (
    DEFAULT_JUMP_TRUNCATION_REL,
    _besq_euler_core,
    sample_exponential,
    sample_leading_block_mass,
    sample_subordinator_jumps,
)
from .rng import RandomSource

__all__ = [
    "Type1State",
    "Type2State",
    "BlockTransitionDraw",
    "build_ip_rs",
    "type0_transition",
    "type1_transition",
    "type1_death_refinement",
    "type2_evolve",
    "Type2Core",
    "Type2Death",
    "DEFAULT_CLOCK_STEP_REL",
]

# Euler step for clock tops, relative to the compound's mass at segment start.
# Absorption-time bias of the clamped Euler scheme is below two-sample KS
# resolution at this setting (measured against the exact inverse-gamma law).
DEFAULT_CLOCK_STEP_REL = 1e-3

_CHUNK = 1 << 14


@dataclass(frozen=True)
class Type1State:
    """Pair state (top mass, remaining partition) of a type-1 evolution."""

    top: float
    partition: IntervalPartition

    @property
    def mass(self) -> float:
        return self.top + self.partition.mass

    @property
    def degenerate(self) -> bool:
        return self.top == 0.0 and len(self.partition) == 0


@dataclass(frozen=True)
class Type2State:
    """State of a type-2 evolution: two top masses over one partition.

    clock_label records which top (1 or 2) currently runs as the
    squared-Bessel(-1) clock; clock_time is the age of that clock segment.
    Both are bookkeeping: the law of the future given (top1, top2, partition)
    does not depend on them.
    """

    top1: float
    top2: float
    partition: IntervalPartition
    clock_label: int = 1
    clock_time: float = 0.0

    @property
    def mass(self) -> float:
        return self.top1 + self.top2 + self.partition.mass

    @property
    def degenerate(self) -> bool:
        empty = len(self.partition) == 0
        return (self.top1 == 0.0 and empty) or (self.top2 == 0.0 and empty)


@dataclass(frozen=True)
class BlockTransitionDraw:
    """Per-block outcome of one kernel step: did the block survive, and if so
    the mass of its new leading block and the trailing partition behind it."""

    survived: bool
    new_top: Optional[float] = None
    tail: Optional[IntervalPartition] = None


def build_ip_rs(
    elapsed: float,
    rng: RandomSource,
    truncation_rel: float = DEFAULT_JUMP_TRUNCATION_REL,
) -> IntervalPartition:
    """Partition from the range of the tilted stable(1/2) subordinator run for
    an independent Exponential[(2*elapsed)^(-1/2)] time: blocks are the jump
    sizes in time order."""
    s = sample_exponential(1.0 / math.sqrt(2.0 * elapsed), rng)
    eps = truncation_rel * elapsed
    jumps = sample_subordinator_jumps(elapsed, s, eps, rng)
    return IntervalPartition._wrap(jumps.sizes, jumps.dust_mass_bound, eps)


def _block_survivals(blocks: np.ndarray, elapsed: float, rng: RandomSource) -> np.ndarray:
    p = -np.expm1(-blocks / (2.0 * elapsed))
    return rng.generator.random(blocks.size) < p


def block_transition_draw(
    block_mass: float,
    elapsed: float,
    rng: RandomSource,
    truncation_rel: float = DEFAULT_JUMP_TRUNCATION_REL,
) -> BlockTransitionDraw:
    """Bernoulli(1 - e^(-w/2y)) survival; on survival, the new leading block
    mass and the trailing partition."""
    if rng.generator.random() >= -math.expm1(-block_mass / (2.0 * elapsed)):
        return BlockTransitionDraw(False)
    new_top = sample_leading_block_mass(block_mass, elapsed, rng)
    tail = build_ip_rs(elapsed, rng, truncation_rel)
    return BlockTransitionDraw(True, new_top, tail)


def _kernel_blocks(
    blocks: np.ndarray,
    elapsed: float,
    rng: RandomSource,
    truncation_rel: float,
    lead: bool,
) -> tuple[np.ndarray, float]:
    """Concatenated output blocks of one kernel step over `blocks`, plus the
    dust bound added by jump truncation.

    Per surviving block: its new leading block followed by subordinator jumps
    over an independent exponential horizon; with `lead`, an extra leading
    jump partition is prepended.  Jump draws are batched: all horizons share
    one rate and one flat size array.
    """
    from .primitives import sample_jump_sizes, subordinator_tail_rate

    alive = _block_survivals(blocks, elapsed, rng)
    ws = blocks[alive]
    n_rows = ws.size + (1 if lead else 0)
    if n_rows == 0:
        return np.empty(0), 0.0
    gen = rng.generator
    horizons = gen.exponential(math.sqrt(2.0 * elapsed), size=n_rows)
    eps = truncation_rel * elapsed
    rate = subordinator_tail_rate(eps, elapsed)
    counts = gen.poisson(horizons * rate)
    sizes = sample_jump_sizes(int(counts.sum()), elapsed, eps, rng)
    split = np.split(sizes, np.cumsum(counts)[:-1])
    parts = []
    row = 0
    if lead:
        parts.append(split[0])
        row = 1
    for w in ws:
        top = sample_leading_block_mass(float(w), elapsed, rng)
        parts.append(np.array([top]))
        parts.append(split[row])
        row += 1
    dust = float(horizons.sum()) * math.sqrt(eps / math.pi)
    return np.concatenate(parts) if parts else np.empty(0), dust


def type1_transition(
    state: Type1State,
    elapsed: float,
    rng: RandomSource,
    truncation_rel: float = DEFAULT_JUMP_TRUNCATION_REL,
) -> Type1State:
    """One exact type-1 kernel step of size `elapsed`.

    The pair (top, partition) is treated as the single partition
    (top block) * partition; each block survives independently and surviving
    blocks contribute (new leading block) * (subordinator partition),
    concatenated left to right.  The output pair is (leftmost block, rest);
    if nothing survives the state is absorbed at (0, empty).
    """
    if not (elapsed > 0):
        raise ValueError("elapsed must be positive")
    carried_dust = state.partition.dust_bound
    if state.top > 0:
        gamma = np.concatenate([[state.top], state.partition.blocks])
    else:
        gamma = state.partition.blocks
    out, dust = _kernel_blocks(gamma, elapsed, rng, truncation_rel, lead=False)
    if out.size == 0:
        return Type1State(0.0, EMPTY)
    top, rest = float(out[0]), out[1:]
    return Type1State(
        top,
        IntervalPartition._wrap(rest, dust + carried_dust, truncation_rel * elapsed),
    )


def type0_transition(
    alpha: IntervalPartition,
    elapsed: float,
    rng: RandomSource,
    truncation_rel: float = DEFAULT_JUMP_TRUNCATION_REL,
) -> IntervalPartition:
    """One exact type-0 kernel step: an independent leading subordinator
    partition concatenated with the per-block survivals."""
    if not (elapsed > 0):
        raise ValueError("elapsed must be positive")
    out, dust = _kernel_blocks(alpha.blocks, elapsed, rng, truncation_rel, lead=True)
    return IntervalPartition._wrap(out, dust + alpha.dust_bound, truncation_rel * elapsed)


def type1_death_refinement(mass: float, window: float, rng: RandomSource) -> float:
    """Death time within (0, window], given a type-1 state of total `mass` at
    the window start that is degenerate at the window end."""
    if mass <= 0:
        return 0.0
    v = rng.generator.random()
    while v <= 0.0:
        v = rng.generator.random()
    return 1.0 / (1.0 / window - 2.0 * math.log(v) / mass)


# ---------------------------------------------------------------------------
# Type-2 construction


class _ClockPath:
    """Euler clock path over one query window, stored as chunks.

    Lookups return the value at the last grid time <= offset, matching the
    snap-to-grid convention for recorded states.
    """

    __slots__ = ("dt", "z0", "chunks", "length", "end_value", "absorbed_offset")

    def __init__(self, dt: float, z0: float):
        self.dt = dt
        self.z0 = z0
        self.chunks: list[np.ndarray] = []
        self.length = 0
        self.end_value = z0
        self.absorbed_offset = None

    def append(self, values: np.ndarray):
        # values[0] duplicates the previous end value; keep values[1:]
        self.chunks.append(values[1:])
        self.length += values.size - 1
        self.end_value = float(values[-1])

    def lookup(self, offset: float) -> float:
        idx = int(offset / self.dt)
        if idx <= 0 or self.length == 0:
            return self.z0
        flat = min(idx - 1, self.length - 1)
        for c in self.chunks:
            if flat < c.size:
                return float(c[flat])
            flat -= c.size
        return float(self.chunks[-1][-1])


def _walk_clock(z0: float, dt: float, window: float, rng: RandomSource):
    """Euler squared-Bessel(-1) walk from z0 over [0, window] at step dt, with
    a shorter final step so the walk lands exactly on the window end.

    Returns a _ClockPath with absorbed_offset set if the walk hit zero.
    """
    path = _ClockPath(dt, z0)
    nfull = int(window / dt + 1e-9)
    rem = max(window - nfull * dt, 0.0)
    z = z0
    done = 0
    while done < nfull:
        m = min(_CHUNK, nfull - done)
        normals = rng.generator.standard_normal(m)
        values, idx = _besq_euler_core(z, -1.0, dt, normals, True)
        if idx >= 0:
            path.append(values[: idx + 1])
            path.absorbed_offset = (done + idx) * dt
            return path
        path.append(values)
        z = float(values[-1])
        done += m
    if rem > 1e-15 * max(window, 1.0):
        normals = rng.generator.standard_normal(1)
        values, idx = _besq_euler_core(z, -1.0, rem, normals, True)
        z = float(values[-1])
        if idx >= 0:
            path.absorbed_offset = window
    path.end_value = z
    return path


@dataclass(frozen=True)
class Type2Death:
    """Compound degeneration report: the first time one top-plus-partition
    total hit zero, and the state in the left limit (degenerate side zeroed)."""

    time: float
    left_state: Type2State


class Type2Core:
    """Pathwise type-2 evolution driver.

    Holds the committed state (time, clock top, non-clock type-1 pair) and
    advances it: the clock follows an Euler squared-Bessel(-1) path; the rest
    follows exact type-1 kernel draws queried at swap times and targets.  When
    the clock is absorbed the roles swap.  Degeneration is reported when the
    type-1 side dies (refined within its query window) or when a swap finds an
    empty partition.
    """

    __slots__ = (
        "time",
        "clock_label",
        "clock_mass",
        "clock_step",
        "clock_age",
        "type1",
        "grid_step",
        "clock_step_rel",
        "truncation_rel",
        "first_swap_time",
    )

    def __init__(
        self,
        state: Type2State,
        grid_step: float,
        clock_step_rel: float = DEFAULT_CLOCK_STEP_REL,
        truncation_rel: float = DEFAULT_JUMP_TRUNCATION_REL,
        time: float = 0.0,
    ):
        if state.degenerate:
            raise ValueError("cannot evolve a degenerate type-2 state")
        self.time = time
        self.grid_step = grid_step
        self.clock_step_rel = clock_step_rel
        self.truncation_rel = truncation_rel
        self.clock_label = state.clock_label
        if state.clock_label == 1:
            self.clock_mass, other = state.top1, state.top2
        else:
            self.clock_mass, other = state.top2, state.top1
        self.type1 = Type1State(other, state.partition)
        self.clock_age = state.clock_time
        self.clock_step = self._step_for(state.mass)
        self.first_swap_time = None  # first instant a top mass hit zero

    def _step_for(self, mass: float) -> float:
        return min(self.grid_step, max(self.clock_step_rel * mass, 1e-300))

    def copy(self) -> "Type2Core":
        c = object.__new__(Type2Core)
        for name in self.__slots__:
            setattr(c, name, getattr(self, name))
        return c

    def state(self) -> Type2State:
        tops = {self.clock_label: self.clock_mass, 3 - self.clock_label: self.type1.top}
        return Type2State(
            top1=tops[1],
            top2=tops[2],
            partition=self.type1.partition,
            clock_label=self.clock_label,
            clock_time=self.clock_age,
        )

    def _death_state(self, clock_value: float, type1_side_died: bool) -> Type2State:
        if type1_side_died:
            tops = {self.clock_label: clock_value, 3 - self.clock_label: 0.0}
        else:
            tops = {self.clock_label: 0.0, 3 - self.clock_label: clock_value}
        return Type2State(tops[1], tops[2], EMPTY, self.clock_label, self.clock_age)

    def advance(self, target: float, rng: RandomSource) -> Optional[Type2Death]:
        """Advance the committed state to `target`, or stop at degeneration."""
        while target - self.time > 1e-15:
            if self.clock_mass <= 0.0:
                death = self._swap(rng)
                if death is not None:
                    return death
                continue
            window = target - self.time
            path = _walk_clock(self.clock_mass, self.clock_step, window, rng)
            query_window = window if path.absorbed_offset is None else path.absorbed_offset
            if query_window > 0:
                mass_before = self.type1.mass
                nxt = type1_transition(self.type1, query_window, rng, self.truncation_rel)
                if nxt.degenerate and mass_before > 0:
                    offset = type1_death_refinement(mass_before, query_window, rng)
                    return Type2Death(
                        self.time + offset,
                        self._death_state(path.lookup(offset), type1_side_died=True),
                    )
                self.type1 = nxt
            if path.absorbed_offset is None:
                self.clock_mass = path.end_value
                self.clock_age += window
                self.time = target
                return None
            self.time += path.absorbed_offset
            self.clock_mass = 0.0
            death = self._swap(rng)
            if death is not None:
                return death
        return None

    def _swap(self, rng: RandomSource) -> Optional[Type2Death]:
        """Clock absorbed: the type-1 top becomes the new clock and the
        partition restarts a type-1 evolution from a zero top.  An empty
        partition at this moment means the clock side's compound mass is zero,
        which is degeneration."""
        if self.first_swap_time is None:
            self.first_swap_time = self.time
        if self.type1.top <= 0.0 and len(self.type1.partition) == 0:
            return Type2Death(self.time, self._death_state(0.0, type1_side_died=True))
        if len(self.type1.partition) == 0:
            return Type2Death(self.time, self._death_state(self.type1.top, type1_side_died=False))
        new_clock = self.type1.top
        self.type1 = Type1State(0.0, self.type1.partition)
        self.clock_label = 3 - self.clock_label
        self.clock_mass = new_clock
        self.clock_age = 0.0
        self.clock_step = self._step_for(new_clock + self.type1.mass)
        return None


def type2_evolve(
    state: Type2State,
    duration: float,
    step: float,
    rng: RandomSource,
    truncation_rel: float = DEFAULT_JUMP_TRUNCATION_REL,
    clock_step_rel: float = DEFAULT_CLOCK_STEP_REL,
) -> tuple[Type2State, Optional[float]]:
    """Evolve a type-2 state for `duration`; clock tops run at Euler
    resolution min(step, clock_step_rel * compound mass).

    Returns (state at the end, degeneration time or None).  After
    degeneration only the surviving top keeps running, as a squared
    Bessel(-1) until its own absorption freezes the compound at zero.
    """
    if not (duration > 0 and step > 0):
        raise ValueError("duration and step must be positive")
    core = Type2Core(state, grid_step=step, clock_step_rel=clock_step_rel, truncation_rel=truncation_rel)
    death = core.advance(duration, rng)
    if death is None:
        return core.state(), None
    left = death.left_state
    clock_now = max(left.top1, left.top2)
    rest = duration - death.time
    if clock_now > 0 and rest > 0:
        dt = min(step, max(clock_step_rel * clock_now, 1e-300))
        tail = _walk_clock(clock_now, dt, rest, rng)
        clock_now = 0.0 if tail.absorbed_offset is not None else tail.end_value
    if left.top1 > 0:
        final = replace(left, top1=clock_now)
    elif left.top2 > 0:
        final = replace(left, top2=clock_now)
    else:
        final = left
    return final, death.time
