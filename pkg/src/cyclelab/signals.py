"""Signal plans and the action designs that rewrite them.

Every transformer here is a pure function over immutable values.  Cycle
length counts green time only; yellow intervals are overhead inserted when
a plan is unrolled into a per-second signal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .sim import GREEN, RED, YELLOW, IntersectionSpec, SpecificationError

AAP_DELTAS = (-6, -3, 0, 3, 6)
SINGLE_PHASE_MAX_DELTA = 5


@dataclass(frozen=True)
class SignalPlan:
    durations: tuple[int, ...]
    yellow_s: int = 3
    min_green_s: int = 9
    max_green_s: int = 90

    def __post_init__(self):
        object.__setattr__(self, "durations", tuple(int(round(d)) for d in self.durations))
        if len(self.durations) < 2:
            raise SpecificationError("a signal plan needs at least two phases")
        if not 0 < self.min_green_s <= self.max_green_s:
            raise SpecificationError("need 0 < min_green_s <= max_green_s")
        for d in self.durations:
            if not self.min_green_s <= d <= self.max_green_s:
                raise SpecificationError(
                    f"duration {d} outside [{self.min_green_s}, {self.max_green_s}]")
        if self.yellow_s < 0:
            raise SpecificationError("yellow_s must be >= 0")

    @property
    def n_phases(self) -> int:
        return len(self.durations)

    def clamp(self, d: float) -> int:
        return int(min(max(d, self.min_green_s), self.max_green_s))

    def with_durations(self, durations: Sequence[float]) -> "SignalPlan":
        return replace(self, durations=tuple(self.clamp(d) for d in durations))

    @property
    def real_cycle_s(self) -> int:
        """Wall-clock length of one cycle including yellow intervals."""
        return sum(self.durations) + self.yellow_s * self.n_phases


def cycle_length(plan: SignalPlan) -> int:
    return sum(plan.durations)


def intervention_interval(delta_t: float, C: float) -> float:
    """Cycle-aligned waiting time before the next action.

    ``ceil(delta_t / C) * C``, floored at one cycle so that ``delta_t == 0``
    means "act once per cycle".
    """
    if C <= 0:
        raise SpecificationError("cycle length must be positive")
    if delta_t < 0:
        raise SpecificationError("delta_t must be >= 0")
    return max(1, math.ceil(delta_t / C)) * C


def cycles_per_interval(delta_t: float, C: float) -> int:
    return int(round(intervention_interval(delta_t, C) / C))


def apply_aap(plan: SignalPlan, action: Sequence[int], delta_set: Sequence[float] = AAP_DELTAS) -> SignalPlan:
    """Adjust every phase at once: ``d_n + delta_set[action[n]]``, clamped."""
    action = [int(a) for a in action]
    if len(action) != plan.n_phases:
        raise SpecificationError(f"expected {plan.n_phases} per-phase indices, got {len(action)}")
    for a in action:
        if not 0 <= a < len(delta_set):
            raise SpecificationError(f"action index {a} outside delta set of size {len(delta_set)}")
    return plan.with_durations([d + delta_set[a] for d, a in zip(plan.durations, action)])


def apply_adjust_single_phase(plan: SignalPlan, phase_index: int, delta: float,
                              max_delta: float = SINGLE_PHASE_MAX_DELTA) -> SignalPlan:
    """Change one phase (1-based index) by ``delta`` seconds."""
    if not 1 <= phase_index <= plan.n_phases:
        raise SpecificationError(f"phase index {phase_index} outside 1..{plan.n_phases}")
    if abs(delta) > max_delta:
        raise SpecificationError(f"|delta| = {abs(delta)} exceeds {max_delta}")
    d = list(plan.durations)
    d[phase_index - 1] += delta
    return plan.with_durations(d)


def single_phase_actions(n_phases: int, step: float = SINGLE_PHASE_MAX_DELTA) -> list[tuple[int, float]]:
    """Encoding of the adjust-single-phase action set: a no-op plus (phase, +/-step) pairs."""
    acts = [(1, 0.0)]
    for p in range(1, n_phases + 1):
        acts += [(p, -float(step)), (p, float(step))]
    return acts


def apply_choose_next_phase(current_phase: int, chosen_phase: int, n_phases: int,
                            yellow_s: int = 3) -> tuple[int, int]:
    """Return ``(next_phase, yellow_seconds)``; yellow only on an actual change."""
    if not 0 <= chosen_phase < n_phases or not 0 <= current_phase < n_phases:
        raise SpecificationError("phase index out of range")
    return chosen_phase, (0 if chosen_phase == current_phase else yellow_s)


def apply_next_or_not(current_phase: int, keep_or_change: int, n_phases: int,
                      yellow_s: int = 3) -> tuple[int, int]:
    """0 keeps the current phase, 1 advances to the next one in cyclic order."""
    if keep_or_change not in (0, 1):
        raise SpecificationError("next-or-not action must be 0 (keep) or 1 (change)")
    if not 0 <= current_phase < n_phases:
        raise SpecificationError("phase index out of range")
    if keep_or_change == 0:
        return current_phase, 0
    return (current_phase + 1) % n_phases, yellow_s


def apply_set_phase_duration(plan: SignalPlan, phase_index: int, duration: float,
                             duration_set: Sequence[float] | None = None) -> SignalPlan:
    """Set the duration of one phase (1-based) to a value from ``duration_set``."""
    if not 1 <= phase_index <= plan.n_phases:
        raise SpecificationError(f"phase index {phase_index} outside 1..{plan.n_phases}")
    if duration_set is not None and duration not in duration_set:
        raise SpecificationError(f"duration {duration} not in the configured set")
    if duration <= 0:
        raise SpecificationError("duration must be positive")
    d = list(plan.durations)
    d[phase_index - 1] = duration
    return plan.with_durations(d)


def phase_signal(spec: IntersectionSpec, phase: int, state: int = GREEN) -> np.ndarray:
    """Per-movement signal with the movements of ``phase`` at ``state`` and the rest red."""
    sig = np.full(len(spec.movements), RED, dtype=np.int8)
    sig[spec.phase_mask()[phase]] = state
    return sig


def unroll_signal(plan: SignalPlan, horizon_s: float, spec: IntersectionSpec) -> np.ndarray:
    """Per-second signal states, shape ``(ceil(horizon_s), n_movements)``.

    Phases fire in order, each followed by ``yellow_s`` seconds of yellow
    for its own movements.
    """
    n = int(math.ceil(horizon_s))
    if n <= 0:
        raise SpecificationError("horizon must be positive")
    one_cycle = []
    for p, d in enumerate(plan.durations):
        one_cycle += [phase_signal(spec, p, GREEN)] * d
        one_cycle += [phase_signal(spec, p, YELLOW)] * plan.yellow_s
    one_cycle = np.array(one_cycle)
    reps = -(-n // len(one_cycle))
    return np.tile(one_cycle, (reps, 1))[:n]


def joint_action_space(n_phases: int, n_deltas: int) -> int:
    return n_deltas ** n_phases


def factored_action_space(n_phases: int, n_deltas: int) -> int:
    return n_phases * n_deltas


def single_phase_action_space(n_phases: int) -> int:
    return len(single_phase_actions(n_phases))


def decode_joint(index: int, n_phases: int, n_deltas: int) -> tuple[int, ...]:
    """Mixed-radix decode of a joint index into per-phase indices (phase 1 most significant)."""
    if not 0 <= index < n_deltas ** n_phases:
        raise SpecificationError("joint action index out of range")
    out = []
    for _ in range(n_phases):
        index, r = divmod(index, n_deltas)
        out.append(r)
    return tuple(reversed(out))


def encode_joint(action: Sequence[int], n_deltas: int) -> int:
    idx = 0
    for a in action:
        idx = idx * n_deltas + int(a)
    return idx
