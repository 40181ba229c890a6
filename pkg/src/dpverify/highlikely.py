"""Data-driven high-likely output sets and event partitions.

A mechanism's trajectory outputs are summarized per timestep by a
minimum-volume enclosing ellipsoid fitted to enough sampled runs that each
per-step set captures at least ``1 - beta`` of the output mass with
confidence ``1 - gamma``.  Two partition constructions are provided:

* :func:`grid_partition` splits each per-step bounding box into ``r`` cells
  per axis and takes all cross-timestep combinations, giving
  ``(r ** dim) ** steps`` mutually exclusive box events.
* :func:`bounded_probability_partition` builds nested ellipsoid shells over
  whole (flattened) trajectories whose per-event probability is empirically
  bounded by a requested ``eta_d``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .geometry import Ellipsoid, mvee, required_sample_count
from .sampling import as_seed_sequence, generator, sample_runs, substream

__all__ = [
    "Event",
    "EventList",
    "HighLikelySet",
    "NestedEvent",
    "NestedEventList",
    "PartitionBoundError",
    "bounded_probability_partition",
    "estimate_high_likely_set",
    "event_contains",
    "grid_partition",
]

DEFAULT_EVENT_CAP = 1_000_000


class PartitionBoundError(RuntimeError):
    """The per-event probability bound could not be reached; raise eta_d."""


@dataclass(frozen=True)
class HighLikelySet:
    """One fitted ellipsoid per estimation timestep."""

    per_step: tuple
    beta: float
    gamma: float
    steps: int

    def __post_init__(self):
        object.__setattr__(self, "per_step", tuple(self.per_step))
        if len(self.per_step) != self.steps:
            raise ValueError(
                f"per_step has {len(self.per_step)} entries for steps={self.steps}")
        dims = {e.dim for e in self.per_step}
        if len(dims) > 1:
            raise ValueError(f"per-step ellipsoids disagree on dimension: {dims}")

    @property
    def dim(self) -> int:
        return self.per_step[0].dim

    def to_dict(self) -> dict:
        return {
            "beta": float(self.beta),
            "gamma": float(self.gamma),
            "steps": self.steps,
            "per_step": [e.to_dict() for e in self.per_step],
        }


def estimate_high_likely_set(mechanism, sensor_data, beta: float, gamma: float,
                             rng, *, tolerance: float = 1e-7,
                             workers: int = 1) -> HighLikelySet:
    """Sample enough runs and fit one enclosing ellipsoid per timestep.

    The number of full-trajectory runs is
    ``required_sample_count(beta, gamma, mechanism.estimate_dim)``; each
    timestep's ellipsoid is fitted to that timestep's slice of all runs.
    Rank-deficient slices (e.g. a deterministic mechanism) are regularized
    and flagged with :class:`~dpverify.geometry.DegenerateCloudWarning`.
    """
    count = required_sample_count(beta, gamma, mechanism.estimate_dim)
    samples = sample_runs(mechanism, sensor_data, count, rng, workers=workers)
    per_step = tuple(
        mvee(samples[:, k, :], tolerance=tolerance) for k in range(mechanism.steps))
    return HighLikelySet(per_step=per_step, beta=beta, gamma=gamma,
                         steps=mechanism.steps)


@dataclass(frozen=True)
class Event:
    """Product of one axis-aligned box per timestep.

    Boxes are half-open ``[lower, upper)`` except where ``closed_upper`` marks
    the final cell along an axis, whose upper face is closed so the grid
    covers its bounding box exactly.
    """

    id: int
    lower: np.ndarray
    upper: np.ndarray
    closed_upper: np.ndarray

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        closed = np.asarray(self.closed_upper, dtype=bool)
        if lower.shape != upper.shape or lower.shape != closed.shape:
            raise ValueError("lower, upper, closed_upper must share a shape")
        if np.any(lower > upper):
            raise ValueError("cell lower corners must not exceed upper corners")
        for name, arr in (("lower", lower), ("upper", upper), ("closed_upper", closed)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def steps(self) -> int:
        return self.lower.shape[0]

    @property
    def dim(self) -> int:
        return self.lower.shape[1]

    def contains(self, trajectory) -> bool:
        return bool(self.contains_batch(np.asarray(trajectory, dtype=float)[None])[0])

    def contains_batch(self, trajectories: np.ndarray) -> np.ndarray:
        t = np.asarray(trajectories, dtype=float)
        if t.shape[1:] != self.lower.shape:
            raise ValueError(
                f"trajectories must have shape (n, {self.steps}, {self.dim}), got {t.shape}")
        above = t >= self.lower
        below = np.where(self.closed_upper, t <= self.upper, t < self.upper)
        return np.all(above & below, axis=(1, 2))

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "lower": self.lower.tolist(),
            "upper": self.upper.tolist(),
        }


def event_contains(event, trajectory) -> bool:
    """Membership test backing the occurrence counts."""
    t = np.asarray(trajectory, dtype=float)
    if t.ndim != 2:
        raise ValueError(f"trajectory must be (steps, dim), got shape {t.shape}")
    if t.shape != (event.steps, event.dim):
        raise ValueError(
            f"trajectory shape {t.shape} does not match event ({event.steps}, {event.dim})")
    return event.contains(t)


class EventList:
    """Grid partition of the per-step bounding boxes; a lazy event sequence.

    Event ids enumerate cells in mixed radix with timestep 0 most
    significant and, within a timestep, axis 0 most significant.
    """

    def __init__(self, lows: np.ndarray, highs: np.ndarray, r: int):
        lows = np.asarray(lows, dtype=float)
        highs = np.asarray(highs, dtype=float)
        if lows.ndim != 2 or lows.shape != highs.shape:
            raise ValueError("lows and highs must both have shape (steps, dim)")
        if np.any(highs <= lows):
            raise ValueError("boxes must have positive width along every axis")
        r = int(r)
        if r < 1:
            raise ValueError(f"r must be at least 1, got {r}")
        self.lows = lows
        self.highs = highs
        self.r = r
        self.steps, self.dim = lows.shape
        self.cells_per_step = r ** self.dim
        self._widths = (highs - lows) / r

    @property
    def resolution(self) -> int:
        return self.r

    def __len__(self) -> int:
        return self.cells_per_step ** self.steps

    def __getitem__(self, event_id: int) -> Event:
        n = len(self)
        if event_id < 0:
            event_id += n
        if not 0 <= event_id < n:
            raise IndexError(f"event id {event_id} out of range [0, {n})")
        lower = np.empty((self.steps, self.dim))
        upper = np.empty((self.steps, self.dim))
        closed = np.zeros((self.steps, self.dim), dtype=bool)
        rem = event_id
        for k in range(self.steps):
            cell, rem = divmod(rem, self.cells_per_step ** (self.steps - 1 - k))
            for j in range(self.dim):
                power = self.r ** (self.dim - 1 - j)
                idx, cell = divmod(cell, power)
                lower[k, j] = self.lows[k, j] + idx * self._widths[k, j]
                upper[k, j] = self.lows[k, j] + (idx + 1) * self._widths[k, j]
                if idx == self.r - 1:
                    upper[k, j] = self.highs[k, j]
                    closed[k, j] = True
        return Event(id=event_id, lower=lower, upper=upper, closed_upper=closed)

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def events(self) -> list:
        """Materialized event list (intended for small grids)."""
        return list(self)

    def locate(self, trajectories: np.ndarray) -> np.ndarray:
        """Event id of each trajectory, -1 where it escapes every event."""
        t = np.asarray(trajectories, dtype=float)
        if t.ndim == 2:
            t = t[None]
        if t.shape[1:] != (self.steps, self.dim):
            raise ValueError(
                f"trajectories must have shape (n, {self.steps}, {self.dim}), got {t.shape}")
        rel = (t - self.lows) / self._widths
        idx = np.floor(rel).astype(np.int64)
        # Closed upper face of the last cell along each axis.
        idx = np.where((t <= self.highs) & (idx >= self.r), self.r - 1, idx)
        inside = (t >= self.lows) & (t <= self.highs) & (idx >= 0) & (idx < self.r)
        valid = np.all(inside, axis=(1, 2))

        axis_weights = self.r ** np.arange(self.dim - 1, -1, -1, dtype=np.int64)
        cells = np.tensordot(idx, axis_weights, axes=([2], [0]))
        step_weights = self.cells_per_step ** np.arange(
            self.steps - 1, -1, -1, dtype=np.int64)
        ids = cells @ step_weights
        return np.where(valid, ids, -1)

    def to_dict(self) -> dict:
        return {
            "kind": "grid",
            "r": self.r,
            "steps": self.steps,
            "dim": self.dim,
            "event_count": len(self),
            "lows": self.lows.tolist(),
            "highs": self.highs.tolist(),
        }


def grid_partition(hls: HighLikelySet, r: int,
                   max_events: int = DEFAULT_EVENT_CAP) -> EventList:
    """Axis-aligned grid over each per-step bounding box, r cells per axis.

    The event count is exactly ``(r ** dim) ** steps``; an error is raised
    when it would exceed ``max_events``.
    """
    r = int(r)
    if r < 1:
        raise ValueError(f"r must be at least 1, got {r}")
    dim = hls.dim
    count = (r ** dim) ** hls.steps
    if count > max_events:
        raise ValueError(
            f"grid would contain {count} events, above the cap {max_events}; "
            "lower r or raise max_events")
    lows = np.empty((hls.steps, dim))
    highs = np.empty((hls.steps, dim))
    for k, e in enumerate(hls.per_step):
        lows[k], highs[k] = e.bounding_box()
    return EventList(lows, highs, r)


@dataclass(frozen=True)
class NestedEvent:
    """One shell of a nested-ellipsoid partition over flattened trajectories.

    Event j holds the points of the base region that are inside the first j
    chain ellipsoids and outside chain ellipsoid j+1; the last event is the
    common core.  Assigning each point to its first escape keeps the shells
    mutually exclusive.
    """

    id: int
    region: Ellipsoid
    chain: tuple
    steps: int
    dim: int

    def contains(self, trajectory) -> bool:
        flat = np.asarray(trajectory, dtype=float).reshape(-1)
        if flat.shape[0] != self.steps * self.dim:
            raise ValueError(
                f"trajectory must flatten to {self.steps * self.dim} values")
        if not self.region.contains(flat):
            return False
        for j, shell in enumerate(self.chain):
            if not shell.contains(flat):
                return j == self.id
        return self.id == len(self.chain)


class NestedEventList:
    """Partition of a trajectory-space region into nested ellipsoid shells."""

    def __init__(self, region: Ellipsoid, chain, eta: float, steps: int, dim: int):
        self.region = region
        self.chain = tuple(chain)
        self.eta = float(eta)
        self.steps = int(steps)
        self.dim = int(dim)
        if region.dim != self.steps * self.dim:
            raise ValueError("region dimension must equal steps * dim")

    @property
    def resolution(self) -> float:
        return self.eta

    def __len__(self) -> int:
        return len(self.chain) + 1

    def __getitem__(self, event_id: int) -> NestedEvent:
        n = len(self)
        if event_id < 0:
            event_id += n
        if not 0 <= event_id < n:
            raise IndexError(f"event id {event_id} out of range [0, {n})")
        return NestedEvent(id=event_id, region=self.region, chain=self.chain,
                           steps=self.steps, dim=self.dim)

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def events(self) -> list:
        return list(self)

    def locate(self, trajectories: np.ndarray) -> np.ndarray:
        t = np.asarray(trajectories, dtype=float)
        if t.ndim == 2:
            t = t[None]
        flat = t.reshape(t.shape[0], -1)
        if flat.shape[1] != self.region.dim:
            raise ValueError(
                f"trajectories must flatten to {self.region.dim} values per run")
        ids = np.full(flat.shape[0], len(self.chain), dtype=np.int64)
        assigned = ~self.region.contains(flat)
        ids[assigned] = -1
        for j, shell in enumerate(self.chain):
            escaped = ~assigned & ~shell.contains(flat)
            ids[escaped] = j
            assigned |= escaped
        return ids

    def to_dict(self) -> dict:
        return {
            "kind": "nested",
            "eta": self.eta,
            "steps": self.steps,
            "dim": self.dim,
            "event_count": len(self),
            "region": self.region.to_dict(),
            "chain": [e.to_dict() for e in self.chain],
        }


def bounded_probability_partition(mechanism, sensor_data, beta_d: float,
                                  eta_d: float, gamma: float, rng, *,
                                  max_retries: int = 50,
                                  validation_runs: int | None = None,
                                  workers: int = 1) -> NestedEventList:
    """Partition the high-likely region into events of probability <= eta_d.

    The region R is an enclosing ellipsoid of flattened trajectories fitted
    to ``required_sample_count(beta_bar, gamma, steps * dim)`` runs with
    ``beta_bar = min(beta_d, eta_d / 4)``, so it captures at least
    ``1 - beta_d`` of the output mass with confidence ``1 - gamma``.  Nested
    ellipsoids fitted to disjoint random sample subsets of shrinking size
    carve R into shells (first escape wins, which reassigns overlaps to the
    lowest event id).  A candidate partition is accepted once every event's
    frequency on a fresh validation batch is at most ``eta_d``; subsets are
    redrawn up to ``max_retries`` times before giving up.
    """
    if not 0.0 < beta_d < 1.0:
        raise ValueError(f"beta_d must lie in (0, 1), got {beta_d}")
    if not 0.0 < eta_d <= 1.0:
        raise ValueError(f"eta_d must lie in (0, 1], got {eta_d}")
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")

    ss = as_seed_sequence(rng)
    steps, dim = mechanism.steps, mechanism.estimate_dim
    flat_dim = steps * dim
    beta_bar = min(beta_d, eta_d / 4.0) if eta_d < 1.0 else beta_d
    count = required_sample_count(beta_bar, gamma, flat_dim)
    samples = sample_runs(mechanism, sensor_data, count, substream(ss, 0),
                          workers=workers)
    flat = samples.reshape(count, flat_dim)
    region = mvee(flat)

    if eta_d >= 1.0:
        # The bound is vacuous; the region itself is the single event.
        return NestedEventList(region, (), eta_d, steps, dim)

    n_val = validation_runs if validation_runs is not None else max(
        4000, int(math.ceil(20.0 / eta_d)))
    fresh = sample_runs(mechanism, sensor_data, n_val, substream(ss, 1),
                        workers=workers)
    # Accept slightly under the bound so a fresh audit stays within eta_d.
    threshold = eta_d - 1.5 * math.sqrt(eta_d * (1.0 - eta_d) / n_val)
    sizes = _subset_size_ladder(count, flat_dim)

    for attempt in range(max_retries):
        pick = generator(substream(ss, 2, attempt))
        order = pick.permutation(count)
        chain = []
        offset = 0
        for size in sizes:
            subset = flat[order[offset:offset + size]]
            offset += size
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                chain.append(mvee(subset))
        candidate = NestedEventList(region, chain, eta_d, steps, dim)
        ids = candidate.locate(fresh)
        freqs = np.bincount(ids[ids >= 0], minlength=len(candidate)) / n_val
        if np.all(freqs <= threshold):
            return candidate
    raise PartitionBoundError(
        f"no partition with per-event frequency <= {eta_d} found in "
        f"{max_retries} attempts; try a larger eta_d")


def _subset_size_ladder(count: int, flat_dim: int) -> list:
    """Disjoint subset sizes shrinking geometrically to the minimum fit size.

    The geometric series is sized to fit inside the available sample budget;
    small subsets produce small ellipsoids, so the ladder spans coverage
    scales from nearly all of the region down to a core around the mode.
    """
    ratio = 0.7
    floor_size = flat_dim + 1
    sizes = []
    size = max(int(count * (1.0 - ratio) * 0.95), floor_size)
    budget = count
    while size > floor_size and budget >= size:
        sizes.append(size)
        budget -= size
        size = max(int(size * ratio), floor_size)
    if budget >= floor_size and (not sizes or sizes[-1] > floor_size):
        sizes.append(floor_size)
    return sizes
