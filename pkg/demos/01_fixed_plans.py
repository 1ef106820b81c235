"""Walk through one intersection under a few hand-written plans.

Runs the four-phase site for two hours under fixed plans and under the
Webster controller, then prints queue length (m_q), the plan rows and the
north-south / west-east green split.

    python demos/01_fixed_plans.py
"""

import numpy as np

from cyclelab.baselines import FixedTimeController, WebsterController, run_controller
from cyclelab.metrics import direction_groups, efficiency, green_time_ratio
from cyclelab.scenarios import synthetic
from cyclelab.signals import SignalPlan, intervention_interval

sc = synthetic("int1", route="varying", seed=0, detector_window_s=300)
print(f"{sc.name}: {len(sc.spec.movements)} movements, {sc.spec.n_phases} phases, "
      f"{sc.mean_arrival_rate():.3f} veh/s over {sc.horizon_s} s")

# a plan with C = 120 green seconds is revisited every 3 cycles at dt = 300
print("interval at dt=300, C=120:", intervention_interval(300, 120), "s of green")
print("wall clock per cycle:", SignalPlan((30, 30, 30, 30)).real_cycle_s, "s")


class Hold:
    """Keep one plan for the whole episode."""

    def __init__(self, durations):
        self.plan = SignalPlan(durations)

    def reset(self):
        pass

    def __call__(self, env):
        return self.plan


groups = direction_groups(sc.spec)
for label, ctrl in [("FT-30", FixedTimeController(30)),
                    ("(30,12,30,12)", Hold((30, 12, 30, 12))),
                    ("(30,9,30,9)", Hold((30, 9, 30, 9))),
                    ("Webster", WebsterController())]:
    env = run_controller(sc, ctrl, seed=0, delta_t=300)
    rows = np.array(env.duration_rows)
    ratio = green_time_ratio(rows, groups)
    print(f"{label:>14}: m_q {efficiency(env.queue_matrix()):6.2f} m, {len(rows)} cycles, "
          f"NS share {ratio['NS-SN'].mean():.2f}, last plan {tuple(rows[-1].tolist())}")

# short left-turn phases starve the turning lanes: queue per movement for (30,9,30,9)
env = run_controller(sc, Hold((30, 9, 30, 9)), seed=0, delta_t=300)
q = env.queue_matrix()
print("mean queue per lane (m):", np.round(q.mean(axis=0), 1))
