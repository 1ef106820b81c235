import math

import numpy as np
import pytest

from cyclelab.baselines import (FixedTimeController, WebsterController, WebsterInputs, action_set_size,
                                fixed_time_plan, make_baseline_agent, make_controller, run_controller,
                                webster_cycle, webster_plan)
from cyclelab.metrics import efficiency
from cyclelab.sim import SpecificationError


def test_webster_cycle_formula():
    inp = WebsterInputs((0.3, 0.1, 0.2, 0.1), 4.0)
    assert webster_cycle(inp) == pytest.approx((1.5 * 16 + 5) / (1 - 0.7))


def test_webster_split_proportional():
    inp = WebsterInputs((0.3, 0.1, 0.2, 0.1), 4.0)
    res = webster_plan(inp)
    green = res.cycle_s - 16
    expect = [min(max(round(green * y / 0.7), 9), 90) for y in inp.flow_ratios]
    assert list(res.plan.durations) == expect and not res.oversaturated


def test_webster_oversaturated():
    res = webster_plan(WebsterInputs((0.5, 0.3, 0.3, 0.1), 4.0))
    assert res.oversaturated and math.isinf(res.cycle_s)
    assert res.plan.durations == (90, 90, 90, 90)


def test_webster_rejects_negative():
    with pytest.raises(SpecificationError):
        WebsterInputs((-0.1, 0.2), 4.0)


def test_fixed_time():
    assert fixed_time_plan(30, 4).durations == (30, 30, 30, 30)
    with pytest.raises(SpecificationError):
        fixed_time_plan(5, 4)
    assert isinstance(make_controller("ft40"), FixedTimeController)
    assert isinstance(make_controller("webster"), WebsterController)
    with pytest.raises(SpecificationError):
        make_controller("sotl")


def test_run_controller_fixed_time(short_scenario):
    env = run_controller(short_scenario, make_controller("ft40"), seed=0)
    assert set(env.duration_rows) == {(40, 40, 40, 40)}
    assert efficiency(env.queue_matrix()) >= 0


def test_webster_retimes(short_varying):
    env = run_controller(short_varying, make_controller("webster"), seed=0)
    assert len(set(env.duration_rows)) > 1


def test_action_set_sizes():
    assert [action_set_size(d, 4) for d in ("choose-next-phase", "next-or-not",
                                            "set-phase-duration", "adjust-single-phase")] == [4, 2, 6, 9]


@pytest.mark.parametrize("design,size", [("cnp", 4), ("non", 2), ("spd", 6), ("asp", 9)])
def test_baseline_agents(short_scenario, design, size):
    env, agent = make_baseline_agent(design, short_scenario)
    assert env.head_sizes == [size] and agent.net.n_actors == 1
    obs = env.encode(env.reset(0))
    a, logp, v = agent.act(obs, np.random.default_rng(0))
    env.step(a)
    assert 0 <= a[0] < size and np.isfinite(logp).all()


def test_unknown_baseline_design(short_scenario):
    with pytest.raises(SpecificationError):
        make_baseline_agent("sotl", short_scenario)
