"""Point-queue simulator for a single signalized intersection.

Vehicles arrive per movement as a Poisson process, join the shortest lane
queue of that movement and leave the stop line at the saturation headway
while the movement shows green.  There is no travel-time lag and no
car-following: queue formation and discharge are all that matter for the
queue-based reward and the efficiency metric.

The simulator ticks in whole seconds.  Discharge capacity accumulates as
fractional credit (``dt / headway`` per green tick) so a 2 s headway gives
one departure every two green seconds; the credit is dropped when the lane
turns yellow or red.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

GREEN, YELLOW, RED = 2, 1, 0

COMPASS = ("N", "E", "S", "W")


class SpecificationError(ValueError):
    """Raised when an input violates a documented contract."""


@dataclass(frozen=True)
class MovementSpec:
    id: int
    is_straight: bool
    lane_count: int = 1
    entry_arm: str = "N"
    exit_arm: str = "S"

    def __post_init__(self):
        if not 1 <= self.id <= 8:
            raise SpecificationError(f"movement id {self.id} outside 1..8")
        if self.lane_count < 1:
            raise SpecificationError(f"movement {self.id}: lane_count must be >= 1")
        for arm in (self.entry_arm, self.exit_arm):
            if arm not in COMPASS:
                raise SpecificationError(f"movement {self.id}: unknown arm {arm!r}")
        if (COMPASS.index(self.exit_arm) - COMPASS.index(self.entry_arm)) % 4 == 3:
            # entering from N and leaving W is a right turn (driving on the right)
            raise SpecificationError(f"movement {self.id}: right turns are not controlled")


@dataclass(frozen=True)
class IntersectionSpec:
    movements: tuple[MovementSpec, ...]
    phases: tuple[frozenset[int], ...]
    detector_range_m: float = 150.0
    saturation_headway_s: float = 2.0
    vehicle_footprint_m: float = 7.5

    def __post_init__(self):
        object.__setattr__(self, "movements", tuple(self.movements))
        object.__setattr__(self, "phases", tuple(frozenset(p) for p in self.phases))
        ids = [m.id for m in self.movements]
        if len(ids) > 8:
            raise SpecificationError("at most 8 movements are supported")
        if len(set(ids)) != len(ids):
            raise SpecificationError("movement ids must be unique")
        if len(self.phases) < 2:
            raise SpecificationError("need at least two phases")
        known = set(ids)
        for k, phase in enumerate(self.phases):
            if not phase:
                raise SpecificationError(f"phase {k + 1} is empty")
            if not phase <= known:
                raise SpecificationError(f"phase {k + 1} references unknown movements {sorted(phase - known)}")
        covered = set().union(*self.phases)
        if covered != known:
            raise SpecificationError(f"movements {sorted(known - covered)} are in no phase")
        if self.detector_range_m <= 0:
            raise SpecificationError("detector_range_m must be positive")
        if self.saturation_headway_s <= 0 or self.vehicle_footprint_m <= 0:
            raise SpecificationError("headway and footprint must be positive")

    @property
    def movement_ids(self) -> list[int]:
        return [m.id for m in self.movements]

    @property
    def n_phases(self) -> int:
        return len(self.phases)

    @property
    def n_lanes(self) -> int:
        return sum(m.lane_count for m in self.movements)

    @cached_property
    def lane_movement(self) -> np.ndarray:
        """Index into ``movements`` for every lane, in lane order."""
        return np.repeat(np.arange(len(self.movements)), [m.lane_count for m in self.movements])

    @cached_property
    def lane_offsets(self) -> np.ndarray:
        return np.cumsum([0] + [m.lane_count for m in self.movements])

    @cached_property
    def lanes_per_movement(self) -> np.ndarray:
        return np.array([m.lane_count for m in self.movements], dtype=float)

    @property
    def lane_cap_vehicles(self) -> float:
        return self.detector_range_m / self.vehicle_footprint_m

    def movement_index(self, movement_id: int) -> int:
        for k, m in enumerate(self.movements):
            if m.id == movement_id:
                return k
        raise SpecificationError(f"unknown movement id {movement_id}")

    def phase_mask(self) -> np.ndarray:
        """Boolean (n_phases, n_movements) membership matrix."""
        return self._phase_mask.copy()

    @cached_property
    def _phase_mask(self) -> np.ndarray:
        mask = np.zeros((self.n_phases, len(self.movements)), dtype=bool)
        for p, phase in enumerate(self.phases):
            for mid in phase:
                mask[p, self.movement_index(mid)] = True
        return mask


@dataclass(frozen=True)
class ArrivalProfile:
    """Piecewise-constant arrival rates.

    ``segments`` maps movement id to a list of ``(start_s, end_s, rate)``
    tuples; outside every segment the rate is zero.
    """

    segments: dict[int, tuple[tuple[float, float, float], ...]]
    rng_seed: int = 0

    def __post_init__(self):
        clean = {}
        for mid, segs in self.segments.items():
            segs = tuple(sorted((float(a), float(b), float(r)) for a, b, r in segs))
            for a, b, r in segs:
                if b <= a or r < 0:
                    raise SpecificationError(f"movement {mid}: bad segment ({a}, {b}, {r})")
            for (a0, b0, _), (a1, _, _) in zip(segs, segs[1:]):
                if a1 < b0:
                    raise SpecificationError(f"movement {mid}: overlapping segments")
            clean[int(mid)] = segs
        object.__setattr__(self, "segments", clean)

    @property
    def duration_s(self) -> float:
        ends = [s[1] for segs in self.segments.values() for s in segs]
        return max(ends) if ends else 0.0

    def rate(self, movement_id: int, t: float) -> float:
        for a, b, r in self.segments.get(movement_id, ()):
            if a <= t < b:
                return r
        return 0.0

    def rates_at(self, spec: IntersectionSpec, t: float) -> np.ndarray:
        return np.array([self.rate(mid, t) for mid in spec.movement_ids])

    def with_seed(self, seed: int) -> "ArrivalProfile":
        return ArrivalProfile(self.segments, int(seed))


@dataclass
class SimState:
    clock_s: float
    queue_count: np.ndarray
    credit: np.ndarray
    rng: np.random.Generator
    # rolling per-second log, one entry per tick: (arrivals, departures, occupancy)
    arrivals_log: deque = field(default_factory=deque)
    departures_log: deque = field(default_factory=deque)
    occupancy_log: deque = field(default_factory=deque)
    cumulative_arrivals: int = 0
    cumulative_departures: int = 0

    def copy(self) -> "SimState":
        rng = np.random.Generator(type(self.rng.bit_generator)())
        rng.bit_generator.state = self.rng.bit_generator.state
        return SimState(
            self.clock_s,
            self.queue_count.copy(),
            self.credit.copy(),
            rng,
            deque(self.arrivals_log, maxlen=self.arrivals_log.maxlen),
            deque(self.departures_log, maxlen=self.departures_log.maxlen),
            deque(self.occupancy_log, maxlen=self.occupancy_log.maxlen),
            self.cumulative_arrivals,
            self.cumulative_departures,
        )


@dataclass(frozen=True)
class DetectorReading:
    flow: np.ndarray
    occ_max: np.ndarray
    occ_avg: np.ndarray


def initial_state(spec: IntersectionSpec, seed: int = 0, history_s: int = 600) -> SimState:
    n = spec.n_lanes
    return SimState(
        clock_s=0.0,
        queue_count=np.zeros(n, dtype=np.int64),
        credit=np.zeros(n),
        rng=np.random.default_rng(seed),
        arrivals_log=deque(maxlen=history_s),
        departures_log=deque(maxlen=history_s),
        occupancy_log=deque(maxlen=history_s),
    )


def _signal_array(active_signal, spec: IntersectionSpec) -> np.ndarray:
    if isinstance(active_signal, dict):
        sig = np.full(len(spec.movements), RED, dtype=np.int8)
        for mid, s in active_signal.items():
            sig[spec.movement_index(mid)] = s
        return sig
    sig = np.asarray(active_signal, dtype=np.int8)
    if sig.shape != (len(spec.movements),):
        raise SpecificationError(f"signal must have one entry per movement, got shape {sig.shape}")
    return sig


def movement_occupancy(queue_count: np.ndarray, spec: IntersectionSpec) -> np.ndarray:
    """Fraction of detector length covered by queued vehicles, averaged over a movement's lanes."""
    lengths = queue_lengths_m_from_counts(queue_count, spec)
    occ = np.bincount(spec.lane_movement, weights=lengths / spec.detector_range_m,
                      minlength=len(spec.movements))
    return occ / spec.lanes_per_movement


def step(state: SimState, active_signal, dt: float, profile: ArrivalProfile,
         spec: IntersectionSpec) -> SimState:
    """Advance the simulation by ``dt`` seconds under a constant signal.

    Returns a new state; ``state`` itself is left untouched.
    """
    if dt <= 0:
        raise SpecificationError("dt must be positive")
    sig = _signal_array(active_signal, spec)
    new = state.copy()
    _advance(new, sig, dt, profile, spec)
    return new


def _advance(state: SimState, sig: np.ndarray, dt: float, profile: ArrivalProfile | None,
             spec: IntersectionSpec, arrivals: np.ndarray | None = None) -> None:
    """In-place version of :func:`step` used by the environment's hot loop.

    ``arrivals`` may carry pre-drawn per-movement counts for this tick.
    """
    if arrivals is None:
        arrivals = state.rng.poisson(profile.rates_at(spec, state.clock_s) * dt)
    q = state.queue_count
    offsets = spec.lane_offsets
    for k, n_arr in enumerate(arrivals.tolist()):
        if not n_arr:
            continue
        lo, hi = offsets[k], offsets[k + 1]
        if hi - lo == 1:
            q[lo] += n_arr
            continue
        for _ in range(n_arr):
            # shortest lane, lowest index on ties
            j = lo + int(np.argmin(q[lo:hi]))
            q[j] += 1

    green = (sig[spec.lane_movement] == GREEN).astype(float)
    # credit only survives on green lanes
    credit = state.credit
    credit *= green
    credit += green * (dt / spec.saturation_headway_s)
    served = np.minimum(q, np.floor(credit + 1e-9).astype(np.int64))
    q -= served
    credit -= served
    # an empty lane cannot bank capacity for later arrivals
    idle = green * (q == 0)
    credit -= idle * np.floor(credit + 1e-9)

    departures = np.bincount(spec.lane_movement, weights=served,
                             minlength=len(spec.movements)).astype(np.int64)
    state.clock_s += dt
    state.cumulative_arrivals += int(arrivals.sum())
    state.cumulative_departures += int(served.sum())
    state.arrivals_log.append(arrivals)
    state.departures_log.append(departures)
    state.occupancy_log.append(movement_occupancy(q, spec))


def advance_block(state: SimState, sig: np.ndarray, arrivals: np.ndarray, spec: IntersectionSpec) -> np.ndarray:
    """Advance one second per row of ``arrivals`` under a constant signal, in place.

    Gives exactly the state of calling :func:`_advance` once per row with
    ``dt = 1``, but runs the lane updates on Python scalars instead of
    small numpy arrays.  Returns the per-lane queue counts after every tick,
    shape ``(len(arrivals), n_lanes)``.
    """
    T = len(arrivals)
    q = state.queue_count.tolist()
    credit = state.credit.tolist()
    offsets = spec.lane_offsets.tolist()
    green = (sig[spec.lane_movement] == GREEN).tolist()
    rate = 1.0 / spec.saturation_headway_s
    lanes = range(len(q))
    counts = np.empty((T, len(q)), dtype=np.int64)
    served = np.zeros((T, len(q)), dtype=np.int64)
    for t, row in enumerate(arrivals.tolist()):
        for k, n_arr in enumerate(row):
            if not n_arr:
                continue
            lo, hi = offsets[k], offsets[k + 1]
            if hi - lo == 1:
                q[lo] += n_arr
                continue
            for _ in range(n_arr):
                j = min(range(lo, hi), key=q.__getitem__)  # first minimum, as argmin
                q[j] += 1
        for i in lanes:
            if not green[i]:
                credit[i] = 0.0
                continue
            c = credit[i] + rate
            s = min(q[i], math.floor(c + 1e-9))
            q[i] -= s
            c -= s
            if q[i] == 0:
                c -= math.floor(c + 1e-9)
            credit[i] = c
            served[t, i] = s
        counts[t] = q

    state.queue_count[:] = q
    state.credit[:] = credit
    state.clock_s += T
    state.cumulative_arrivals += int(arrivals.sum())
    state.cumulative_departures += int(served.sum())
    n_mov = len(offsets) - 1
    departures = np.zeros((T, n_mov), dtype=np.int64)
    covered = queue_lengths_m_from_counts(counts, spec) / spec.detector_range_m
    occupancy = np.zeros((T, n_mov))
    for k in range(n_mov):
        for j in range(offsets[k], offsets[k + 1]):
            departures[:, k] += served[:, j]
            occupancy[:, k] += covered[:, j]
    occupancy /= spec.lanes_per_movement
    state.arrivals_log.extend(arrivals)
    state.departures_log.extend(departures)
    state.occupancy_log.extend(occupancy)
    return counts


def queue_lengths_m_from_counts(queue_count: np.ndarray, spec: IntersectionSpec) -> np.ndarray:
    return np.minimum(np.asarray(queue_count) * spec.vehicle_footprint_m, spec.detector_range_m)


def queue_lengths_m(state: SimState, spec: IntersectionSpec) -> np.ndarray:
    """Per-lane queue length in meters, capped at the detector range."""
    return queue_lengths_m_from_counts(state.queue_count, spec)


def read_detectors(state: SimState, window_k: float, spec: IntersectionSpec | None = None) -> DetectorReading:
    """Aggregate the rolling event log over the last ``window_k`` seconds.

    Flow counts vehicles crossing the detector (arrivals plus departures)
    per second.  If fewer than ``window_k`` seconds have elapsed the
    reading covers the available history.
    """
    if window_k <= 0:
        raise SpecificationError("window_k must be positive")
    n = int(math.ceil(window_k))
    arr = list(state.arrivals_log)[-n:]
    dep = list(state.departures_log)[-n:]
    occ = list(state.occupancy_log)[-n:]
    width = len(state.arrivals_log[0]) if state.arrivals_log else (len(spec.movements) if spec else 0)
    if not arr:
        z = np.zeros(width)
        return DetectorReading(z, z.copy(), z.copy())
    crossings = np.sum(arr, axis=0) + np.sum(dep, axis=0)
    occ = np.asarray(occ)
    return DetectorReading(
        flow=crossings / len(arr),
        occ_max=occ.max(axis=0),
        occ_avg=occ.mean(axis=0),
    )


def vehicles_queued(state: SimState) -> int:
    return int(state.queue_count.sum())


def check_conservation(state: SimState) -> bool:
    return state.cumulative_arrivals - state.cumulative_departures == vehicles_queued(state)


def simulate(spec: IntersectionSpec, profile: ArrivalProfile,
             signals: Sequence, dt: float = 1.0, history_s: int = 600) -> list[SimState]:
    """Run a whole signal sequence and return the trajectory of states (after each tick)."""
    state = initial_state(spec, profile.rng_seed, history_s)
    out = []
    for sig in signals:
        state = step(state, sig, dt, profile, spec)
        out.append(state)
    return out
