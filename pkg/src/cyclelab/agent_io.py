"""Observation matrix and queue-length reward."""

from __future__ import annotations

import numpy as np

from .sim import DetectorReading, IntersectionSpec, SpecificationError
from .signals import SignalPlan

N_ROWS = 8
COLUMNS = ("flow", "occ_max", "occ_avg", "is_straight", "lanes", "is_green", "green_elapsed", "min_green_met")


def build_state(detectors: DetectorReading, spec: IntersectionSpec, plan: SignalPlan,
                active_phase: int, phase_elapsed_s: float) -> np.ndarray:
    """8x8 observation, one row per movement slot in movement order, zero padded.

    ``active_phase`` is 0-based; pass ``None`` when no phase is green
    (e.g. during yellow).
    """
    n = len(spec.movements)
    if n > N_ROWS:
        raise SpecificationError(f"{n} movements exceed the {N_ROWS}-row observation")
    if len(detectors.flow) != n:
        raise SpecificationError("detector reading does not cover every movement")
    obs = np.zeros((N_ROWS, len(COLUMNS)))
    green = np.zeros(n, dtype=bool)
    if active_phase is not None:
        green = spec.phase_mask()[active_phase]
    obs[:n, 0] = detectors.flow
    obs[:n, 1] = detectors.occ_max
    obs[:n, 2] = detectors.occ_avg
    obs[:n, 3] = [float(m.is_straight) for m in spec.movements]
    obs[:n, 4] = [m.lane_count for m in spec.movements]
    obs[:n, 5] = green
    obs[:n, 6] = np.where(green, phase_elapsed_s, 0.0)
    obs[:n, 7] = green & (obs[:n, 6] >= plan.min_green_s)
    return obs


def build_cycle_state(detectors: DetectorReading, spec: IntersectionSpec, plan: SignalPlan) -> np.ndarray:
    """Observation for decisions taken at a cycle boundary.

    Same rows and columns as :func:`build_state` with phase 1 about to turn
    green, except ``D`` holds the green seconds per cycle the plan allots to
    each movement (summed over its phases) and ``I^min`` flags whether that
    allotment reaches the minimum green.  At a cycle boundary the elapsed
    green is always zero, so this is what tells the agent which plan it is
    adjusting.
    """
    obs = build_state(detectors, spec, plan, 0, 0.0)
    n = len(spec.movements)
    allotted = np.asarray(plan.durations, dtype=float) @ spec.phase_mask()
    obs[:n, 6] = allotted
    obs[:n, 7] = allotted >= plan.min_green_s
    return obs


def scale_observation(obs: np.ndarray, spec: IntersectionSpec, plan: SignalPlan) -> np.ndarray:
    """Bring the mixed-unit columns to comparable magnitudes for the network."""
    out = np.array(obs, dtype=float)
    out[:, 0] *= spec.saturation_headway_s  # veh/s divided by saturation flow of one lane
    out[:, 4] /= 4.0
    out[:, 6] /= plan.max_green_s
    return out


def compute_reward(queues, spec: IntersectionSpec) -> float:
    """Negative total queued vehicles, normalised to [-1, 0].

    ``queues`` are per-lane vehicle counts; each lane contributes at most the
    number of vehicles that fit inside the detector range.
    """
    cap = spec.lane_cap_vehicles
    q = np.minimum(np.asarray(queues, dtype=float), cap)
    return -float(q.sum()) / (spec.n_lanes * cap)
