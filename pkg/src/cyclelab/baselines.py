"""Non-learning controllers and the classical action designs as agents."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .env import EnvConfig, SignalEnv
from .scenarios import Scenario
from .signals import SignalPlan
from .sim import SpecificationError

WEBSTER_RECOMPUTE_S = 600
STARTUP_LOST_S = 1.0


@dataclass(frozen=True)
class WebsterInputs:
    flow_ratios: tuple[float, ...]
    lost_time_per_phase_s: float

    def __post_init__(self):
        object.__setattr__(self, "flow_ratios", tuple(float(y) for y in self.flow_ratios))
        if any(y < 0 for y in self.flow_ratios):
            raise SpecificationError("flow ratios must be non-negative")

    @property
    def total_lost_s(self) -> float:
        return self.lost_time_per_phase_s * len(self.flow_ratios)


@dataclass(frozen=True)
class WebsterResult:
    plan: SignalPlan
    cycle_s: float
    oversaturated: bool


def fixed_time_plan(duration_s: int, n_phases: int, yellow_s: int = 3, min_green_s: int = 9,
                    max_green_s: int = 90) -> SignalPlan:
    if not min_green_s <= duration_s <= max_green_s:
        raise SpecificationError(f"duration {duration_s} outside green bounds")
    return SignalPlan((duration_s,) * n_phases, yellow_s, min_green_s, max_green_s)


def webster_cycle(inputs: WebsterInputs) -> float:
    """Optimal cycle ``(1.5 L + 5) / (1 - Y)``; infinite when ``Y >= 1``."""
    Y = sum(inputs.flow_ratios)
    if Y >= 1:
        return math.inf
    return (1.5 * inputs.total_lost_s + 5.0) / (1.0 - Y)


def webster_plan(inputs: WebsterInputs, yellow_s: int = 3, min_green_s: int = 9,
                 max_green_s: int = 90) -> WebsterResult:
    """Green split proportional to each phase's critical flow ratio."""
    n = len(inputs.flow_ratios)
    C0 = webster_cycle(inputs)
    if not math.isfinite(C0):
        plan = SignalPlan((max_green_s,) * n, yellow_s, min_green_s, max_green_s)
        return WebsterResult(plan, math.inf, True)
    green = C0 - inputs.total_lost_s
    Y = sum(inputs.flow_ratios)
    shares = [y / Y for y in inputs.flow_ratios] if Y > 0 else [1.0 / n] * n
    durations = [min(max(round(green * s), min_green_s), max_green_s) for s in shares]
    return WebsterResult(SignalPlan(durations, yellow_s, min_green_s, max_green_s), C0, False)


class WebsterController:
    """Re-times the plan every ``recompute_s`` seconds from the arrivals just observed."""

    def __init__(self, recompute_s: int = WEBSTER_RECOMPUTE_S):
        self.recompute_s = recompute_s
        self._last = 0

    def reset(self):
        self._last = 0

    def __call__(self, env: SignalEnv) -> SignalPlan | None:
        if env.clock - self._last < self.recompute_s:
            return None
        self._last = env.clock
        plan = env.plan
        inputs = WebsterInputs(tuple(env.recent_flow_ratios(self.recompute_s)), plan.yellow_s + STARTUP_LOST_S)
        return webster_plan(inputs, plan.yellow_s, plan.min_green_s, plan.max_green_s).plan


class FixedTimeController:
    def __init__(self, duration_s: int):
        self.duration_s = duration_s

    def reset(self):
        pass

    def __call__(self, env: SignalEnv) -> SignalPlan | None:
        p = env.plan
        if all(d == self.duration_s for d in p.durations):
            return None
        return fixed_time_plan(self.duration_s, env.n_phases, p.yellow_s, p.min_green_s, p.max_green_s)


BASELINE_KINDS = ("ft30", "ft40", "webster")


def make_controller(kind: str):
    if kind == "ft30":
        return FixedTimeController(30)
    if kind == "ft40":
        return FixedTimeController(40)
    if kind == "webster":
        return WebsterController()
    raise SpecificationError(f"unknown baseline {kind!r}; choose from {BASELINE_KINDS}")


def run_controller(scenario: Scenario, controller, seed: int, delta_t: float = 0.0) -> SignalEnv:
    """Run one episode with a plan-emitting controller; returns the finished env for its traces."""
    env = SignalEnv(scenario, EnvConfig(design="plan", delta_t=delta_t))
    env.reset(seed)
    controller.reset()
    while not env.done:
        env.step(controller(env))
    return env


# -- classical action designs under the shared trainer -----------------

BASELINE_DESIGNS = {
    "choose-next-phase": "cnp",
    "next-or-not": "non",
    "set-phase-duration": "spd",
    "adjust-single-phase": "asp",
}


def make_baseline_agent(design: str, scenario: Scenario, delta_t: float = 0.0, seed: int = 0,
                        config=None, **env_kw):
    """Build a trainable single-head agent for one of the four classical designs.

    Returns ``(env, agent)``; the agent is an :class:`~cyclelab.ppo.Agent`
    with one actor head sized to the design's action set and one critic.
    """
    from .ppo import Agent, TrainConfig

    key = BASELINE_DESIGNS.get(design, design)
    if key not in BASELINE_DESIGNS.values():
        raise SpecificationError(f"unknown baseline design {design!r}")
    env = SignalEnv(scenario, EnvConfig(design=key, delta_t=delta_t, **env_kw))
    agent = Agent.for_env(env, "single", config or TrainConfig(seed=seed), seed=seed)
    return env, agent


def action_set_size(design: str, n_phases: int, duration_set: Sequence[int] = (10, 20, 30, 40, 50, 60)) -> int:
    key = BASELINE_DESIGNS.get(design, design)
    return {"cnp": n_phases, "non": 2, "spd": len(duration_set), "asp": 2 * n_phases + 1}[key]
