"""Train the factored-head agent for a few episodes and look at what it learned.

    python demos/02_train_ccda.py [episodes]

Prints the learning curve every tenth episode, then compares greedy and
sampled evaluation against FT-30 on the same arrival seeds.  The default
200 episodes take under a minute and show the reward moving; the acceptance
runs use 300 (dt = 0) and 2000 (dt = 300).
"""

import sys

import numpy as np

from cyclelab.baselines import make_controller
from cyclelab.ppo import TrainConfig, evaluate, evaluate_controller, make_env, train
from cyclelab.scenarios import synthetic

episodes = int(sys.argv[1]) if len(sys.argv) > 1 else 200
sc = synthetic("int1", route="varying", seed=0, detector_window_s=300)
env, topology = make_env(sc, "aap-ccda", 300.0)
print("heads:", env.head_sizes, "topology:", topology)

result = train(env, TrainConfig(episodes=episodes, batch_size=128, lr=3e-4, epochs=8, gamma=0.9, seed=0), topology)
r = np.asarray(result.rewards)
for i in range(0, len(r), max(1, len(r) // 10)):
    print(f"episode {i:4d}  reward {r[i]:8.3f}")
print(f"{result.updates} updates")

greedy = evaluate(result.agent, env, episodes=3, seed=0, greedy=True)
sampled = evaluate(result.agent, env, episodes=3, seed=0, greedy=False)
ft30 = evaluate_controller(make_controller("ft30"), sc, episodes=3, seed=0, delta_t=300.0)
for label, res in [("greedy", greedy), ("sampled", sampled), ("FT-30", ft30)]:
    print(f"{label:>8}: m_q {res.mean_m_q:6.2f} m  m_s {res.mean_m_s:.4f}")
print("sampled plans, first episode:", [tuple(map(int, d)) for d in sampled.durations[0][:6]], "...")
