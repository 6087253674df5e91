"""De-Poissonization: time change by cumulative inverse mass, normalization
to unit mass, and extraction of the Wright-Fisher coordinate process.

The time change is u(y) = integral_0^y 1/||T^z|| dz, computed by the
trapezoid rule over recorded states; its inverse maps a normalized clock u
back to the original time axis.  Near the mass floor the integrand blows up,
so the integral is only trusted while mass exceeds 10x the floor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .evolution import Trajectory
from .partition import scale as pscale
from .trees import KTree

__all__ = ["TimeChange", "time_change", "depoissonize", "wf_slice", "WFSlice"]


@dataclass
class TimeChange:
    """Sampled time change: u_values[i] = integral of 1/mass up to grid_times[i]."""

    grid_times: np.ndarray
    u_values: np.ndarray

    def u_of(self, y: float) -> float:
        if y < self.grid_times[0] or y > self.grid_times[-1]:
            raise ValueError(f"time {y} outside the sampled range")
        return float(np.interp(y, self.grid_times, self.u_values))

    def y_of(self, u: float) -> float:
        """Inverse time change by interpolation; errors beyond the sampled range."""
        if u < 0 or u > self.u_values[-1]:
            raise ValueError(
                f"normalized time {u} beyond the available range {self.u_values[-1]:.6g}"
            )
        return float(np.interp(u, self.u_values, self.grid_times))

    @property
    def max_u(self) -> float:
        return float(self.u_values[-1])


def time_change(traj: Trajectory, mass_floor_guard: Optional[float] = None) -> TimeChange:
    """Cumulative trapezoid of 1/mass over the recorded grid.

    States with mass at or below the guard (default 10x the run's mass floor)
    are excluded; at least two positive-mass states are required.
    """
    if mass_floor_guard is None:
        base_floor = traj.config.mass_floor
        if base_floor is None:
            base_floor = 1e-4 * traj.initial.mass
        mass_floor_guard = 10.0 * base_floor
    times = np.asarray(traj.times)
    masses = traj.masses()
    on_grid = masses > mass_floor_guard
    keep = np.cumprod(on_grid).astype(bool)  # stop at the first guarded state
    times, masses = times[keep], masses[keep]
    if times.size < 2:
        raise ValueError("need at least two recorded states above the mass guard")
    inv = 1.0 / masses
    u = np.concatenate([[0.0], np.cumsum(0.5 * (inv[1:] + inv[:-1]) * np.diff(times))])
    if np.any(np.diff(u) <= 0):
        raise ValueError("time change is not strictly increasing")
    return TimeChange(grid_times=times, u_values=u)


def _normalized(tree: KTree) -> KTree:
    m = tree.mass
    if not (m > 0):
        raise ValueError("cannot normalize a zero-mass tree")
    tops = {k: v / m for k, v in tree.tops.items()}
    partitions = {e: pscale(p, 1.0 / m) if len(p) else p for e, p in tree.partitions.items()}
    return KTree(tree.shape, tops, partitions)


@dataclass
class DepoissonizedTrajectory:
    """Unit-mass states indexed by the de-Poissonized clock u."""

    source: Trajectory
    change: TimeChange
    u_times: list
    states: dict

    def state_at(self, u: float) -> KTree:
        idx = np.searchsorted(np.asarray(self.u_times), u + 1e-12) - 1
        if idx < 0:
            raise KeyError(f"no state at or before u={u}")
        return self.states[self.u_times[idx]]

    @property
    def max_u(self) -> float:
        return self.change.max_u


def depoissonize(traj: Trajectory, u_grid: Sequence[float]) -> DepoissonizedTrajectory:
    """States at the requested u values: the recorded state at the inverse
    time change, rescaled to unit mass.

    The source trajectory should start from (approximately) unit mass; states
    are normalized exactly regardless.
    """
    change = time_change(traj)
    u_times, states = [], {}
    for u in sorted(set(float(v) for v in u_grid)):
        if u > change.max_u:
            break
        y = change.y_of(u)
        tree = traj.state_at(y)
        states[u] = _normalized(tree)
        u_times.append(u)
    if not u_times:
        raise ValueError("no requested u value lies inside the sampled range")
    return DepoissonizedTrajectory(source=traj, change=change, u_times=u_times, states=states)


@dataclass
class WFSlice:
    """Coordinate paths of a de-Poissonized evolution read on the quadruple-
    speed clock: row r holds the top masses (sorted labels) then the edge
    partition masses (sorted edges) at normalized time u_grid[r]/4.

    Coordinates are reported up to tau, the first slice at which a coordinate
    vanishes, the shape changes, or a resampling event intervenes; rows from
    tau onward are NaN and `killed_at` records the first excluded u.
    """

    u_grid: np.ndarray
    labels: list
    edges: list
    coords: np.ndarray
    killed_at: Optional[float]

    @property
    def parameters(self) -> np.ndarray:
        """Comparison parameters: -1/2 per top coordinate, +1/2 per edge."""
        return np.array([-0.5] * len(self.labels) + [0.5] * len(self.edges))


def wf_slice(depoi: DepoissonizedTrajectory, u_grid: Sequence[float]) -> WFSlice:
    """Read the Wright-Fisher coordinates at times u/4 for each u in u_grid."""
    base = depoi.states[depoi.u_times[0]]
    labels = base.sorted_labels()
    edges = base.sorted_edges()
    grid_end = depoi.change.grid_times[-1]
    # de-Poissonized kill time: first top-mass zero or first degeneration event
    tau = np.inf
    src = depoi.source
    if src.coordinate_zero_time is not None and src.coordinate_zero_time <= grid_end:
        tau = min(tau, depoi.change.u_of(src.coordinate_zero_time))
    for ev in src.events:
        if ev.time <= grid_end:
            tau = min(tau, depoi.change.u_of(ev.time))
        break
    u_grid = np.asarray(sorted(float(v) for v in u_grid))
    coords = np.full((u_grid.size, len(labels) + len(edges)), np.nan)
    killed_at = None
    for r, u in enumerate(u_grid):
        target = u / 4.0
        if target >= tau:
            killed_at = u
            break
        if target > depoi.max_u:
            break
        tree = depoi.state_at(target)
        if tree.shape.sorted_edges() != edges or tree.sorted_labels() != labels:
            killed_at = u
            break
        row = [tree.tops[i] for i in labels] + [tree.partitions[e].mass for e in edges]
        if min(row) <= 0.0:
            killed_at = u
            break
        coords[r] = row
    return WFSlice(u_grid=u_grid, labels=labels, edges=edges, coords=coords, killed_at=killed_at)
