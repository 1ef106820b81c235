"""Episode driver: simulator + action design + observation/reward.

Cycle-based designs (``aap``, ``aap-joint``, ``asp`` and externally
supplied ``plan``) act at cycle boundaries and then hold the plan for the
cycle-aligned interval from :func:`~cyclelab.signals.intervention_interval`.
Slot-based designs (``cnp`` choose-next-phase, ``non`` next-or-not,
``spd`` set-phase-duration) act every few seconds or at phase starts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .agent_io import build_cycle_state, build_state, scale_observation
from .scenarios import Scenario
from .signals import (AAP_DELTAS, SignalPlan, apply_aap, apply_adjust_single_phase,
                      apply_choose_next_phase, apply_next_or_not, apply_set_phase_duration,
                      cycle_length, cycles_per_interval, decode_joint, intervention_interval,
                      phase_signal, single_phase_actions)
from .sim import GREEN, YELLOW, SpecificationError, advance_block, initial_state, read_detectors

CYCLE_DESIGNS = ("aap", "aap-joint", "asp", "plan")
SLOT_DESIGNS = ("cnp", "non", "spd")
DESIGNS = CYCLE_DESIGNS + SLOT_DESIGNS


@dataclass(frozen=True)
class EnvConfig:
    design: str = "aap"
    delta_t: float = 0.0
    delta_set: tuple = AAP_DELTAS
    single_step_s: float = 5.0
    slot_s: int = 5
    duration_set: tuple = (10, 20, 30, 40, 50, 60)
    # "auto": planned green per movement for cycle designs, elapsed green otherwise
    duration_feature: str = "auto"

    def __post_init__(self):
        if self.design not in DESIGNS:
            raise SpecificationError(f"unknown design {self.design!r}; choose from {DESIGNS}")
        if self.duration_feature not in ("auto", "elapsed", "planned"):
            raise SpecificationError("duration_feature must be 'auto', 'elapsed' or 'planned'")
        if self.delta_t < 0:
            raise SpecificationError("delta_t must be >= 0")


@dataclass
class StepInfo:
    interval_s: float
    elapsed_s: int
    cycles: int
    plan: tuple[int, ...]
    extra: dict = field(default_factory=dict)


class SignalEnv:
    def __init__(self, scenario: Scenario, config: EnvConfig | None = None):
        self.scenario = scenario
        self.spec = scenario.spec
        self.config = config or EnvConfig()
        self._rates = scenario.rate_table()
        self._signals = [
            (phase_signal(self.spec, p, GREEN), phase_signal(self.spec, p, YELLOW))
            for p in range(self.spec.n_phases)
        ]
        self._asp_actions = single_phase_actions(self.spec.n_phases, self.config.single_step_s)
        self.state = None

    # -- action space ----------------------------------------------------

    @property
    def n_phases(self) -> int:
        return self.spec.n_phases

    @property
    def head_sizes(self) -> list[int]:
        c, n = self.config, self.n_phases
        return {
            "aap": [len(c.delta_set)] * n,
            "aap-joint": [len(c.delta_set) ** n],
            "asp": [len(self._asp_actions)],
            "cnp": [n],
            "non": [2],
            "spd": [len(c.duration_set)],
            "plan": [],
        }[c.design]

    # -- episode ---------------------------------------------------------

    def reset(self, seed: int | None = None) -> np.ndarray:
        seed = self.scenario.profile.rng_seed if seed is None else seed
        self.seed = seed
        self.state = initial_state(self.spec, seed, history_s=max(600, int(self.scenario.detector_window_s)))
        self._arrivals = self.state.rng.poisson(self._rates)
        self.plan = self.scenario.initial_plan()
        self.active_phase = 0
        self.elapsed = 0
        self._counts = []  # per-lane queued vehicles after every tick
        self.duration_rows = []
        self.step_rewards = []
        self._run_green = [0] * self.n_phases
        return self.observe()

    @property
    def clock(self) -> int:
        return int(self.state.clock_s)

    @property
    def done(self) -> bool:
        return self.clock >= self.scenario.horizon_s

    @property
    def observes_plan(self) -> bool:
        mode = self.config.duration_feature
        if mode == "auto":
            return self.config.design in CYCLE_DESIGNS
        return mode == "planned"

    def observe(self) -> np.ndarray:
        det = read_detectors(self.state, self.scenario.detector_window_s, self.spec)
        if self.observes_plan:
            return build_cycle_state(det, self.spec, self.plan)
        return build_state(det, self.spec, self.plan, self.active_phase, self.elapsed)

    def encode(self, obs: np.ndarray) -> np.ndarray:
        """Network-ready scaling of an observation."""
        return scale_observation(obs, self.spec, self.plan)

    def _rewards(self, first: int = 0) -> np.ndarray:
        """Per-second rewards from tick ``first`` on (same normalisation as ``compute_reward``)."""
        if first >= len(self._counts):
            return np.zeros(0)
        cap = self.spec.lane_cap_vehicles
        q = np.minimum(np.array(self._counts[first:], dtype=float), cap)
        return -q.sum(axis=1) / (self.spec.n_lanes * cap)

    @property
    def reward_trace(self) -> list[float]:
        return self._rewards().tolist()

    @property
    def queue_trace(self) -> np.ndarray:
        """Per-second, per-lane queue length in meters, capped at the detector range."""
        spec = self.spec
        q = np.array(self._counts, dtype=float).reshape(-1, spec.n_lanes)
        return np.minimum(q * spec.vehicle_footprint_m, spec.detector_range_m)

    def _run(self, phase: int, seconds: int, yellow: bool = False) -> int:
        t = self.clock
        n = max(0, min(int(seconds), self.scenario.horizon_s - t))
        if n:
            sig = self._signals[phase][1 if yellow else 0]
            self._counts.extend(advance_block(self.state, sig, self._arrivals[t:t + n], self.spec))
        return n

    # -- stepping --------------------------------------------------------

    def step(self, action=None):
        """Apply one decision and run until the next decision point.

        Returns ``(obs, reward, done, info)`` where ``reward`` is the
        per-second reward averaged over the simulated interval.
        """
        if self.state is None:
            raise SpecificationError("call reset() before step()")
        if self.done:
            raise SpecificationError("episode finished; call reset()")
        start, first = self.clock, len(self._counts)
        if self.config.design in CYCLE_DESIGNS:
            info = self._step_cycle(action)
        else:
            info = self._step_slot(action)
        info.elapsed_s = self.clock - start
        reward = float(np.mean(self._rewards(first))) if info.elapsed_s else 0.0
        self.step_rewards.append(reward)
        return self.observe(), reward, self.done, info

    def _apply_cycle_action(self, action) -> SignalPlan:
        c = self.config
        if c.design == "aap":
            return apply_aap(self.plan, np.asarray(action).reshape(-1), c.delta_set)
        if c.design == "aap-joint":
            idx = decode_joint(int(np.asarray(action).reshape(-1)[0]), self.n_phases, len(c.delta_set))
            return apply_aap(self.plan, idx, c.delta_set)
        if c.design == "asp":
            phase, delta = self._asp_actions[int(np.asarray(action).reshape(-1)[0])]
            return apply_adjust_single_phase(self.plan, phase, delta, c.single_step_s)
        # "plan": the caller hands over a whole SignalPlan, or None to keep the current one
        if action is None:
            return self.plan
        if not isinstance(action, SignalPlan) or action.n_phases != self.n_phases:
            raise SpecificationError("plan design expects a SignalPlan with one duration per phase")
        return action

    def _step_cycle(self, action) -> StepInfo:
        self.plan = self._apply_cycle_action(action)
        C = cycle_length(self.plan)
        n_cycles = cycles_per_interval(self.config.delta_t, C)
        for _ in range(n_cycles):
            if self.done:
                break
            t0 = self.clock
            for p, d in enumerate(self.plan.durations):
                self.active_phase = p
                self._run(p, d)
                self._run(p, self.plan.yellow_s, yellow=True)
            # truncated final cycles do not count as a period
            if self.clock - t0 == self.plan.real_cycle_s:
                self.duration_rows.append(self.plan.durations)
        self.active_phase, self.elapsed = 0, 0
        return StepInfo(intervention_interval(self.config.delta_t, C), 0, n_cycles, self.plan.durations)

    def _record_green(self, phase: int, seconds: int) -> None:
        if phase == 0 and any(self._run_green[1:]):
            self.duration_rows.append(tuple(self._run_green))
            self._run_green = [0] * self.n_phases
        self._run_green[phase] += seconds

    def _switch(self, new_phase: int, yellow_s: int) -> None:
        if new_phase != self.active_phase:
            self._run(self.active_phase, yellow_s, yellow=True)
            self.active_phase, self.elapsed = new_phase, 0

    def _step_slot(self, action) -> StepInfo:
        c = self.config
        a = int(np.asarray(action).reshape(-1)[0])
        hold = int(max(c.slot_s, c.delta_t))
        extra = {}
        if c.design == "cnp":
            nxt, y = apply_choose_next_phase(self.active_phase, a, self.n_phases, self.plan.yellow_s)
            self._switch(nxt, y)
            ran = self._run(self.active_phase, hold)
        elif c.design == "non":
            nxt, y = apply_next_or_not(self.active_phase, a, self.n_phases, self.plan.yellow_s)
            self._switch(nxt, y)
            ran = self._run(self.active_phase, hold)
        else:
            duration = c.duration_set[a]
            self.plan = apply_set_phase_duration(self.plan, self.active_phase + 1, duration, c.duration_set)
            decided_at = self.clock
            ran = 0
            while True:
                p = self.active_phase
                got = self._run(p, self.plan.durations[p])
                self._record_green(p, got)
                self._run(p, self.plan.yellow_s, yellow=True)
                self.active_phase, self.elapsed = (p + 1) % self.n_phases, 0
                if self.done or self.clock - decided_at >= c.delta_t:
                    break
            extra["duration"] = duration
            return StepInfo(hold, 0, 0, self.plan.durations, extra)
        self._record_green(self.active_phase, ran)
        self.elapsed += ran
        return StepInfo(hold, 0, 0, self.plan.durations, extra)

    # -- measurement helpers ----------------------------------------------

    def recent_flow_ratios(self, window_s: int = 600) -> np.ndarray:
        """Per-phase critical flow ratio: max over its movements of per-lane arrival rate / saturation flow."""
        t = self.clock
        lo = max(0, t - window_s)
        if t == lo:
            return np.zeros(self.n_phases)
        counts = self._arrivals[lo:t].sum(axis=0)
        per_lane = counts / (t - lo) / self.spec.lanes_per_movement
        y_mov = per_lane * self.spec.saturation_headway_s
        mask = self.spec.phase_mask()
        return np.array([y_mov[mask[p]].max() for p in range(self.n_phases)])

    def queue_matrix(self) -> np.ndarray:
        return self.queue_trace
