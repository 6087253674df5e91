"""Killed, non-resampling, and resampling k-tree evolutions.

A k-tree decomposes into independent compounds, one per internal edge: a
type-0 edge carries just its partition, a type-1 edge carries one leaf top,
a type-2 edge carries two.  Each compound evolves by its own kernel; the
tree degenerates when the first compound does.

The engine is event-driven.  Type-0/1 compounds are advanced by single exact
kernel draws between checkpoints (record times, horizon); by the semigroup
property this has the same law as any finer composition.  Compound death
times inside a checkpoint window are refined by the exact conditional
absorption law of the compound's squared-Bessel(0) total mass, and the
surviving compounds' states at the refined event time are fresh kernel draws
from their last committed state, rejected until alive, which is exactly
conditioning on surviving past the event.  Only type-2 clock tops require a
grid (Euler paths at resolution clock_step_rel times the compound mass).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np

from .partition import EMPTY, IntervalPartition, concat, scale as pscale
from .primitives import DEFAULT_JUMP_TRUNCATION_REL, sample_dirichlet
from .rng import RandomSource
from .transitions import (
    DEFAULT_CLOCK_STEP_REL,
    Type1State,
    Type2Core,
    Type2State,
    _walk_clock,
    type1_death_refinement,
    type1_transition,
    type0_transition,
)
from .trees import (
    InternalRef,
    KTree,
    LeafRef,
    TreeShape,
    children,
    degenerate_label,
    edge_type,
    insert_label,
    swap_and_reduce_shape,
    swap_and_reduce_tree,
    uniform_shape,
    validate_ktree,
)
from .partition import sample_pdip

__all__ = [
    "EvolutionConfig",
    "DegenerationEvent",
    "Trajectory",
    "sample_brownian_reduced_ktree",
    "resampling_kernel",
    "run_killed",
    "run_nonresampling",
    "run_resampling",
]

_MAX_ALIVE_RETRIES = 256


@dataclass(frozen=True)
class EvolutionConfig:
    """Run parameters.

    grid_step bounds the Euler resolution of clock tops and the snapping of
    record times; jump_truncation_rel scales the subordinator jump-size
    cutoff per kernel draw (cutoff = rel * elapsed); mass_floor terminates
    resampling runs whose accumulating degenerations have shrunk the tree
    below it (None resolves to 1e-4 * initial mass); pdip_blocks is the
    stick-breaking truncation used when resampling splits a leaf block.
    """

    grid_step: float = 1e-3
    jump_truncation_rel: float = DEFAULT_JUMP_TRUNCATION_REL
    clock_step_rel: float = DEFAULT_CLOCK_STEP_REL
    mass_floor: Optional[float] = None
    record_times: tuple = ()
    pdip_blocks: int = 10_000

    def snapped_record_times(self, horizon: float) -> list[float]:
        """Record times snapped to the grid (nearest not-after), deduplicated."""
        out = sorted(
            {
                round(math.floor(t / self.grid_step + 1e-9) * self.grid_step, 12)
                for t in self.record_times
                if 0.0 < t <= horizon
            }
        )
        return out


@dataclass(frozen=True)
class DegenerationEvent:
    """One degeneration: at `time`, label `caused_by` had zero compound mass
    and label `dropped` left the tree (after swapping); resampling runs then
    reinserted `dropped` at `resample_target`."""

    time: float
    caused_by: int
    dropped: int
    resample_target: Optional[Union[LeafRef, InternalRef]] = None
    labels_before: tuple = ()


@dataclass
class Trajectory:
    """Grid-recorded path of one evolution plus its event log."""

    config: EvolutionConfig
    initial: KTree
    horizon: float
    times: list = field(default_factory=list)
    states: dict = field(default_factory=dict)
    events: list = field(default_factory=list)
    terminal: str = "horizon"
    terminal_time: Optional[float] = None
    coordinate_zero_time: Optional[float] = None  # first committed top-mass zero

    def record(self, t: float, tree: KTree):
        self.times.append(t)
        self.states[t] = tree

    def state_at(self, t: float) -> KTree:
        """Recorded state at the last recorded time <= t."""
        idx = np.searchsorted(np.asarray(self.times), t + 1e-12) - 1
        if idx < 0:
            raise KeyError(f"no recorded state at or before t={t}")
        return self.states[self.times[idx]]

    def masses(self) -> np.ndarray:
        return np.array([self.states[t].mass for t in self.times])


# ---------------------------------------------------------------------------
# Brownian reduced trees and the resampling kernel


def sample_brownian_reduced_ktree(
    k: int,
    mass: float,
    rng: RandomSource,
    pdip_blocks: int = 10_000,
) -> KTree:
    """Scaled Brownian reduced k-tree: uniform shape, Dirichlet(1/2,...,1/2)
    masses over the 2k-1 components, independent Poisson-Dirichlet(1/2,1/2)
    partitions on internal edges."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not (mass > 0):
        raise ValueError("mass must be positive")
    labels = list(range(1, k + 1))
    if k == 1:
        return KTree(TreeShape(frozenset(labels), frozenset()), {1: mass}, {})
    shape = uniform_shape(labels, rng)
    weights = sample_dirichlet([0.5] * (2 * k - 1), rng)
    tops = {lab: mass * weights[idx] for idx, lab in enumerate(sorted(labels))}
    partitions = {}
    for idx, e in enumerate(shape.sorted_edges()):
        pdip = sample_pdip(rng, pdip_blocks)
        partitions[e] = pscale(pdip, mass * weights[k + idx])
    return KTree(shape, tops, partitions)


def _unit_two_tree(rng: RandomSource, pdip_blocks: int) -> tuple:
    t2 = sample_brownian_reduced_ktree(2, 1.0, rng, pdip_blocks)
    return t2.tops[1], t2.tops[2], t2.partitions[frozenset([1, 2])]


def resampling_kernel(
    tree: KTree,
    j: int,
    rng: RandomSource,
    pdip_blocks: int = 10_000,
) -> tuple[KTree, Union[LeafRef, InternalRef]]:
    """Insert fresh label j into a block chosen with probability proportional
    to its mass; a chosen leaf block is split into an independent unit-mass
    Brownian reduced 2-tree scaled to the leaf's mass.

    Returns (new tree, chosen block reference).
    """
    total = tree.mass
    if not (total > 0):
        raise ValueError("cannot resample into a zero-mass tree")
    if j in tree.labels:
        raise ValueError(f"label {j} already present")
    u = rng.generator.random() * total
    acc = 0.0
    chosen = None
    for lab in tree.sorted_labels():
        acc += tree.tops[lab]
        if u < acc:
            chosen = LeafRef(lab)
            break
    if chosen is None:
        for e in tree.sorted_edges():
            blocks = tree.partitions[e].blocks
            s = blocks.sum()
            if u < acc + s:
                idx = int(np.searchsorted(np.cumsum(blocks), u - acc, side="right"))
                idx = min(idx, blocks.size - 1)
                chosen = InternalRef(tuple(sorted(e)), idx)
                break
            acc += s
        else:
            chosen = LeafRef(tree.sorted_labels()[-1])
    if isinstance(chosen, LeafRef):
        new = insert_label(tree, chosen, j, _unit_two_tree(rng, pdip_blocks))
    else:
        new = insert_label(tree, chosen, j)
    return new, chosen


# ---------------------------------------------------------------------------
# Compound runners


class _Type0Runner:
    dies = False

    def __init__(self, edge, part: IntervalPartition, cfg: EvolutionConfig, time: float):
        self.edge = edge
        self.state = part
        self.time = time
        self.cfg = cfg

    def peek(self, target: float, rng: RandomSource):
        dt = target - self.time
        if dt <= 0:
            return ("alive", self.state)
        return ("alive", type0_transition(self.state, dt, rng, self.cfg.jump_truncation_rel))

    def commit(self, peek, target: float):
        self.state = peek[1]
        self.time = target

    def committed(self):
        return self.state

    def draw_alive_at(self, t: float, rng: RandomSource):
        dt = t - self.time
        if dt <= 0:
            return self.state
        return type0_transition(self.state, dt, rng, self.cfg.jump_truncation_rel)

    def tree_parts(self, state) -> tuple[dict, dict]:
        return {}, {self.edge: state}


class _Type1Runner:
    dies = True

    def __init__(self, edge, leaf: int, state: Type1State, cfg: EvolutionConfig, time: float):
        self.edge = edge
        self.leaf = leaf
        self.state = state
        self.time = time
        self.cfg = cfg

    def peek(self, target: float, rng: RandomSource):
        dt = target - self.time
        if dt <= 0:
            return ("alive", self.state)
        nxt = type1_transition(self.state, dt, rng, self.cfg.jump_truncation_rel)
        if nxt.degenerate:
            death = self.time + type1_death_refinement(self.state.mass, dt, rng)
            return ("dead", death)
        return ("alive", nxt)

    def commit(self, peek, target: float):
        self.state = peek[1]
        self.time = target

    def committed(self):
        return self.state

    def death_parts(self) -> tuple[dict, dict]:
        return {self.leaf: 0.0}, {self.edge: EMPTY}

    def draw_alive_at(self, t: float, rng: RandomSource):
        dt = t - self.time
        if dt <= 0:
            return self.state
        for _ in range(_MAX_ALIVE_RETRIES):
            nxt = type1_transition(self.state, dt, rng, self.cfg.jump_truncation_rel)
            if not nxt.degenerate:
                return nxt
        raise RuntimeError("could not draw a surviving type-1 state (conditioning too strong)")

    def tree_parts(self, state: Type1State) -> tuple[dict, dict]:
        return {self.leaf: state.top}, {self.edge: state.partition}


class _Type2Runner:
    dies = True

    def __init__(self, edge, low: int, high: int, state: Type2State, cfg: EvolutionConfig, time: float):
        self.edge = edge
        self.low = low
        self.high = high
        self.cfg = cfg
        self.core = Type2Core(
            state,
            grid_step=cfg.grid_step,
            clock_step_rel=cfg.clock_step_rel,
            truncation_rel=cfg.jump_truncation_rel,
            time=time,
        )

    @property
    def time(self):
        return self.core.time

    def peek(self, target: float, rng: RandomSource):
        if target - self.core.time <= 0:
            return ("alive", self.core.copy())
        clone = self.core.copy()
        death = clone.advance(target, rng)
        if death is not None:
            return ("dead2", death)
        return ("alive", clone)

    def commit(self, peek, target: float):
        self.core = peek[1]

    def committed(self):
        return self.core

    def death_parts(self, death) -> tuple[dict, dict]:
        st = death.left_state
        return {self.low: st.top1, self.high: st.top2}, {self.edge: EMPTY}

    def draw_alive_at(self, t: float, rng: RandomSource):
        if t - self.core.time <= 0:
            return self.core.copy()
        for _ in range(_MAX_ALIVE_RETRIES):
            clone = self.core.copy()
            if clone.advance(t, rng) is None:
                return clone
        raise RuntimeError("could not draw a surviving type-2 state (conditioning too strong)")

    def tree_parts(self, core: Type2Core) -> tuple[dict, dict]:
        st = core.state()
        return {self.low: st.top1, self.high: st.top2}, {self.edge: st.partition}


class _SingleLeafRunner:
    """One-label tree: the top runs as a squared Bessel(-1) killed at zero."""

    dies = True

    def __init__(self, label: int, mass: float, cfg: EvolutionConfig, time: float):
        self.label = label
        self.value = mass
        self.time = time
        self.cfg = cfg
        self.step = min(cfg.grid_step, max(cfg.clock_step_rel * mass, 1e-300))

    def peek(self, target: float, rng: RandomSource):
        dt = target - self.time
        if dt <= 0:
            return ("alive", self.value)
        path = _walk_clock(self.value, self.step, dt, rng)
        if path.absorbed_offset is not None:
            return ("dead", self.time + path.absorbed_offset)
        return ("alive", path.end_value)

    def commit(self, peek, target: float):
        self.value = peek[1]
        self.time = target

    def committed(self):
        return self.value

    def death_parts(self) -> tuple[dict, dict]:
        return {self.label: 0.0}, {}

    def draw_alive_at(self, t: float, rng: RandomSource):
        dt = t - self.time
        if dt <= 0:
            return self.value
        for _ in range(_MAX_ALIVE_RETRIES):
            path = _walk_clock(self.value, self.step, dt, rng)
            if path.absorbed_offset is None:
                return path.end_value
        raise RuntimeError("could not draw a surviving top (conditioning too strong)")

    def tree_parts(self, value) -> tuple[dict, dict]:
        return {self.label: value}, {}


def _build_runners(tree: KTree, cfg: EvolutionConfig, time: float) -> list:
    if len(tree.labels) == 1:
        lab = next(iter(tree.labels))
        return [_SingleLeafRunner(lab, tree.tops[lab], cfg, time)]
    runners = []
    for e in tree.sorted_edges():
        leaf_children = sorted(min(c) for c in children(tree.shape, e) if len(c) == 1)
        part = tree.partitions[e]
        if not leaf_children:
            runners.append(_Type0Runner(e, part, cfg, time))
        elif len(leaf_children) == 1:
            leaf = leaf_children[0]
            runners.append(_Type1Runner(e, leaf, Type1State(tree.tops[leaf], part), cfg, time))
        else:
            low, high = leaf_children
            state = Type2State(tree.tops[low], tree.tops[high], part, clock_label=1)
            runners.append(_Type2Runner(e, low, high, state, cfg, time))
    return runners


def _assemble(shape: TreeShape, runners, runner_states) -> KTree:
    tops: dict = {}
    partitions: dict = {}
    for r, s in zip(runners, runner_states):
        t, p = r.tree_parts(s)
        tops.update(t)
        partitions.update(p)
    return KTree(shape, tops, partitions)


def _assemble_event_state(shape: TreeShape, runners, dier_idx: int, death, event_time: float, rng) -> KTree:
    tops: dict = {}
    partitions: dict = {}
    for idx, r in enumerate(runners):
        if idx == dier_idx:
            t, p = r.death_parts(death) if isinstance(r, _Type2Runner) else r.death_parts()
        else:
            s = r.draw_alive_at(event_time, rng)
            t, p = r.tree_parts(s)
        tops.update(t)
        partitions.update(p)
    return KTree(shape, tops, partitions)


# ---------------------------------------------------------------------------
# Evolutions


class _KilledSegment:
    """Killed evolution of a fixed-shape tree: runs compounds independently
    between checkpoints until the first compound degeneration."""

    def __init__(self, tree: KTree, cfg: EvolutionConfig, start_time: float):
        bad = validate_ktree(tree, allow_one_degenerate=False)
        if bad:
            raise ValueError("initial state violates the state space: " + "; ".join(bad))
        self.tree = tree
        self.cfg = cfg
        self.time = start_time
        self.runners = _build_runners(tree, cfg, start_time)

    def advance(self, target: float, rng: RandomSource):
        """Move all compounds to `target`.  Returns None, or a degeneration
        (event_time, left_limit_tree) with the degenerate compound zeroed."""
        deaths = []
        peeks = []
        for r in self.runners:
            p = r.peek(target, rng)
            peeks.append(p)
            if p[0] == "dead":
                deaths.append((p[1], len(peeks) - 1, None))
            elif p[0] == "dead2":
                deaths.append((p[1].time, len(peeks) - 1, p[1]))
        if not deaths:
            for r, p in zip(self.runners, peeks):
                r.commit(p, target)
            self.time = target
            return None
        deaths.sort(key=lambda d: d[0])
        if len(deaths) > 1 and deaths[0][0] == deaths[1][0]:
            raise RuntimeError("two compounds degenerated at the same refined instant")
        event_time, dier_idx, death = deaths[0]
        left = _assemble_event_state(self.tree.shape, self.runners, dier_idx, death, event_time, rng)
        self.time = event_time
        return event_time, left

    def state(self) -> KTree:
        return _assemble(self.tree.shape, self.runners, [r.committed() for r in self.runners])

    def first_swap_time(self):
        times = [
            r.core.first_swap_time
            for r in self.runners
            if isinstance(r, _Type2Runner) and r.core.first_swap_time is not None
        ]
        return min(times) if times else None


def _run_chained(
    tree: KTree,
    cfg: EvolutionConfig,
    horizon: float,
    rng: RandomSource,
    mode: str,
    stop_after_events: Optional[int] = None,
) -> Trajectory:
    if not (horizon > 0):
        raise ValueError("horizon must be positive")
    if mode in ("nonresampling", "resampling") and len(tree.labels) < 2:
        raise ValueError(f"{mode} evolutions need at least two labels")
    traj = Trajectory(config=cfg, initial=tree, horizon=horizon)
    floor = cfg.mass_floor if cfg.mass_floor is not None else 1e-4 * tree.mass
    records = cfg.snapped_record_times(horizon)
    checkpoints = sorted(set(records) | {horizon})
    record_set = set(records)
    traj.record(0.0, tree)

    next_label_pool = None  # resampling reuses the dropped label
    segment = _KilledSegment(tree, cfg, 0.0)
    current = tree
    for tau in checkpoints:
        while True:
            hit = segment.advance(tau, rng)
            if hit is None:
                current = segment.state()
                swap_t = segment.first_swap_time()
                if swap_t is not None and (
                    traj.coordinate_zero_time is None or swap_t < traj.coordinate_zero_time
                ):
                    traj.coordinate_zero_time = swap_t
                if tau in record_set:
                    traj.record(tau, current)
                break
            event_time, left = hit
            labels_before = tuple(sorted(left.labels))
            if len(left.labels) == 1:
                # the last top was absorbed
                lab = labels_before[0]
                traj.events.append(
                    DegenerationEvent(event_time, lab, lab, None, labels_before)
                )
                traj.terminal = "degenerated"
                traj.terminal_time = event_time
                return traj
            caused = degenerate_label(left)
            if caused is None:
                raise RuntimeError("event state has no degenerate label")
            _, dropped = swap_and_reduce_shape(left.shape, caused)
            if mode == "killed":
                traj.events.append(
                    DegenerationEvent(event_time, caused, dropped, None, labels_before)
                )
                traj.terminal = "degenerated"
                traj.terminal_time = event_time
                return traj
            reduced = swap_and_reduce_tree(left)
            target_ref = None
            if mode == "resampling":
                if reduced.mass < floor or reduced.mass <= 0:
                    traj.events.append(
                        DegenerationEvent(event_time, caused, dropped, None, labels_before)
                    )
                    traj.terminal = "mass_floor"
                    traj.terminal_time = event_time
                    return traj
                reduced, target_ref = resampling_kernel(reduced, dropped, rng, cfg.pdip_blocks)
            traj.events.append(
                DegenerationEvent(event_time, caused, dropped, target_ref, labels_before)
            )
            if stop_after_events is not None and len(traj.events) >= stop_after_events:
                traj.terminal = "event_limit"
                traj.terminal_time = event_time
                return traj
            segment = _KilledSegment(reduced, cfg, event_time)
            current = reduced
    traj.terminal = "horizon"
    traj.terminal_time = horizon
    return traj


def run_killed(tree: KTree, cfg: EvolutionConfig, horizon: float, rng: RandomSource) -> Trajectory:
    """Killed evolution: compounds evolve independently until the first one
    degenerates; the trajectory ends there (or at the horizon)."""
    return _run_chained(tree, cfg, horizon, rng, "killed")


def run_nonresampling(tree: KTree, cfg: EvolutionConfig, horizon: float, rng: RandomSource) -> Trajectory:
    """Chain of killed evolutions; each degeneration swaps and drops a label,
    so the label set shrinks by one per event until a single top dies."""
    return _run_chained(tree, cfg, horizon, rng, "nonresampling")


def run_resampling(
    tree: KTree,
    cfg: EvolutionConfig,
    horizon: float,
    rng: RandomSource,
    stop_after_events: Optional[int] = None,
) -> Trajectory:
    """Chain of killed evolutions; each degeneration swaps, drops, and then
    reinserts the dropped label by the mass-weighted resampling kernel.  The
    run terminates at the horizon or when total mass falls below the floor
    (degenerations accumulate exactly as the mass approaches zero)."""
    return _run_chained(tree, cfg, horizon, rng, "resampling", stop_after_events)
