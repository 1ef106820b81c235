"""Scenario definitions and the JSON scenario file format.

A scenario file looks like::

    {
      "name": "int1-steady",
      "intersection": {
        "movements": [{"id": 1, "is_straight": true, "lane_count": 2,
                        "entry_arm": "N", "exit_arm": "S"}, ...],
        "phases": [[1, 5], [2, 6], [3, 7], [4, 8]],
        "detector_range_m": 150, "saturation_headway_s": 2.0,
        "vehicle_footprint_m": 7.5
      },
      "arrivals": {"1": [[0, 7200, 0.21]], ...},
      "seed": 0,
      "horizon_s": 7200,
      "initial_durations": [30, 30, 30, 30],
      "yellow_s": 3, "min_green_s": 9, "max_green_s": 90,
      "detector_window_s": 60
    }

Arrival keys are movement ids; every segment is ``[start_s, end_s, veh_per_s]``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .sim import ArrivalProfile, IntersectionSpec, MovementSpec, SpecificationError
from .signals import SignalPlan


@dataclass(frozen=True)
class Scenario:
    name: str
    spec: IntersectionSpec
    profile: ArrivalProfile
    horizon_s: int = 7200
    initial_durations: tuple[int, ...] = ()
    yellow_s: int = 3
    min_green_s: int = 9
    max_green_s: int = 90
    detector_window_s: float = 60.0

    def __post_init__(self):
        durations = tuple(self.initial_durations) or (30,) * self.spec.n_phases
        object.__setattr__(self, "initial_durations", durations)
        if len(durations) != self.spec.n_phases:
            raise SpecificationError("initial_durations must give one duration per phase")
        if self.horizon_s <= 0:
            raise SpecificationError("horizon_s must be positive")
        unknown = set(self.profile.segments) - set(self.spec.movement_ids)
        if unknown:
            raise SpecificationError(f"arrivals reference unknown movements {sorted(unknown)}")
        if self.detector_window_s <= 0:
            raise SpecificationError("detector_window_s must be positive")
        self.initial_plan()  # validates green bounds

    def initial_plan(self) -> SignalPlan:
        return SignalPlan(self.initial_durations, self.yellow_s, self.min_green_s, self.max_green_s)

    def rate_table(self) -> np.ndarray:
        """Arrival rate per second and movement, shape ``(horizon_s, n_movements)``."""
        table = np.zeros((self.horizon_s, len(self.spec.movements)))
        for k, mid in enumerate(self.spec.movement_ids):
            for a, b, r in self.profile.segments.get(mid, ()):
                lo, hi = int(np.ceil(a)), int(min(np.ceil(b), self.horizon_s))
                table[lo:hi, k] = r
        return table

    def mean_arrival_rate(self) -> float:
        """Total intersection arrival rate (veh/s) averaged over the horizon."""
        return float(self.rate_table().sum(axis=1).mean())

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "intersection": {
                "movements": [asdict(m) for m in self.spec.movements],
                "phases": [sorted(p) for p in self.spec.phases],
                "detector_range_m": self.spec.detector_range_m,
                "saturation_headway_s": self.spec.saturation_headway_s,
                "vehicle_footprint_m": self.spec.vehicle_footprint_m,
            },
            "arrivals": {str(k): [list(s) for s in v] for k, v in sorted(self.profile.segments.items())},
            "seed": self.profile.rng_seed,
            "horizon_s": self.horizon_s,
            "initial_durations": list(self.initial_durations),
            "yellow_s": self.yellow_s,
            "min_green_s": self.min_green_s,
            "max_green_s": self.max_green_s,
            "detector_window_s": self.detector_window_s,
        }


def scenario_from_dict(d: dict) -> Scenario:
    try:
        inter = d["intersection"]
        spec = IntersectionSpec(
            movements=tuple(MovementSpec(**m) for m in inter["movements"]),
            phases=tuple(frozenset(p) for p in inter["phases"]),
            detector_range_m=float(inter.get("detector_range_m", 150.0)),
            saturation_headway_s=float(inter.get("saturation_headway_s", 2.0)),
            vehicle_footprint_m=float(inter.get("vehicle_footprint_m", 7.5)),
        )
        profile = ArrivalProfile(
            {int(k): tuple(tuple(s) for s in v) for k, v in d["arrivals"].items()},
            int(d.get("seed", 0)),
        )
        return Scenario(
            name=str(d.get("name", "scenario")),
            spec=spec,
            profile=profile,
            horizon_s=int(d.get("horizon_s", 7200)),
            initial_durations=tuple(d.get("initial_durations", ())),
            yellow_s=int(d.get("yellow_s", 3)),
            min_green_s=int(d.get("min_green_s", 9)),
            max_green_s=int(d.get("max_green_s", 90)),
            detector_window_s=float(d.get("detector_window_s", 60.0)),
        )
    except (KeyError, TypeError) as exc:
        raise SpecificationError(f"malformed scenario: {exc}") from exc


def load_scenario(path) -> Scenario:
    return scenario_from_dict(json.loads(Path(path).read_text()))


def save_scenario(scenario: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario.to_dict(), indent=2) + "\n")


# -- built-in synthetic intersections -----------------------------------

def _four_way_movements(straight_lanes=2, left_lanes=1):
    # odd ids straight, even ids the left turn of the same approach
    return (
        MovementSpec(1, True, straight_lanes, "N", "S"),
        MovementSpec(2, False, left_lanes, "N", "E"),
        MovementSpec(3, True, straight_lanes, "E", "W"),
        MovementSpec(4, False, left_lanes, "E", "S"),
        MovementSpec(5, True, straight_lanes, "S", "N"),
        MovementSpec(6, False, left_lanes, "S", "W"),
        MovementSpec(7, True, straight_lanes, "W", "E"),
        MovementSpec(8, False, left_lanes, "W", "N"),
    )


def int1_spec() -> IntersectionSpec:
    """4-way, 4 phases: NS straight, NS left, EW straight, EW left."""
    return IntersectionSpec(_four_way_movements(), ({1, 5}, {2, 6}, {3, 7}, {4, 8}))


def int2_spec() -> IntersectionSpec:
    """4-way, 6 phases: the four paired phases plus two single-approach phases."""
    return IntersectionSpec(_four_way_movements(),
                            ({1, 5}, {2, 6}, {1, 2}, {3, 7}, {4, 8}, {3, 4}))


def int3_spec() -> IntersectionSpec:
    """3-way (T) intersection on an east-west main road, 3 phases.

    With right turns uncontrolled only four movements remain; rows 5-8 of
    the observation are zero padding.
    """
    movements = (
        MovementSpec(1, True, 2, "E", "W"),
        MovementSpec(2, True, 2, "W", "E"),
        MovementSpec(3, False, 1, "E", "S"),
        MovementSpec(4, False, 1, "S", "W"),
    )
    return IntersectionSpec(movements, ({1, 2}, {1, 3}, {4}))


# Relative demand per movement; scaled so the intersection total matches the target mean.
_INT1_WEIGHTS = {1: 0.25, 2: 0.06, 3: 0.12, 4: 0.04, 5: 0.25, 6: 0.06, 7: 0.12, 8: 0.04}
_INT3_WEIGHTS = {1: 0.3, 2: 0.3, 3: 0.1, 4: 0.15}


def _steady_segments(weights, total_rate, horizon_s):
    scale = total_rate / sum(weights.values())
    return {mid: ((0.0, float(horizon_s), w * scale),) for mid, w in weights.items()}


def _shifting_segments(weights, total_rate, horizon_s, block_s=1200):
    """Demand that alternates between the original and a mirrored split every ``block_s``."""
    scale = total_rate / sum(weights.values())
    mirror = {1: 3, 3: 1, 5: 7, 7: 5, 2: 4, 4: 2, 6: 8, 8: 6}
    segs = {mid: [] for mid in weights}
    for k, start in enumerate(range(0, horizon_s, block_s)):
        end = min(start + block_s, horizon_s)
        for mid in weights:
            src = mid if k % 2 == 0 else mirror.get(mid, mid)
            segs[mid].append((float(start), float(end), weights.get(src, weights[mid]) * scale))
    return {mid: tuple(s) for mid, s in segs.items()}


def synthetic(intersection: str = "int1", route: str = "steady", total_rate: float | None = None,
              horizon_s: int = 7200, seed: int = 0, block_s: int = 1200, **kw) -> Scenario:
    """Built-in scenario; the default demand is about 0.94 veh/s for the 4-way sites."""
    if intersection == "int1":
        spec, weights, default_rate = int1_spec(), _INT1_WEIGHTS, 0.942
    elif intersection == "int2":
        spec, weights, default_rate = int2_spec(), _INT1_WEIGHTS, 0.941
    elif intersection == "int3":
        spec, weights, default_rate = int3_spec(), _INT3_WEIGHTS, 0.665
    else:
        raise SpecificationError(f"unknown intersection {intersection!r}")
    rate = default_rate if total_rate is None else total_rate
    if route == "steady":
        segs = _steady_segments(weights, rate, horizon_s)
    elif route == "varying":
        segs = _shifting_segments(weights, rate, horizon_s, block_s)
    else:
        raise SpecificationError(f"unknown route {route!r}")
    return Scenario(f"{intersection}-{route}", spec, ArrivalProfile(segs, seed), horizon_s=horizon_s, **kw)
