import numpy as np
import pytest

from cyclelab.env import EnvConfig, SignalEnv
from cyclelab.nn import PolicyNetwork, TrainingError, grad_check
from cyclelab.ppo import (Agent, Batch, TrainConfig, Transition, TrajectoryBuffer, collect_rollout,
                          compute_gae, curve_to_csv, episode_seed, evaluate, make_env, ppo_losses, train,
                          update, window_batch)
from cyclelab.sim import SpecificationError


def brute_force_gae(r, v, gamma, lam):
    n = len(r)
    deltas = [r[t] + gamma * v[t + 1] - v[t] for t in range(n)]
    adv = np.zeros(n)
    ret = np.zeros(n)
    for t in range(n):
        for k in range(t, n):
            adv[t] += (gamma * lam) ** (k - t) * deltas[k]
            ret[t] += gamma ** (k - t) * r[k]
        ret[t] += gamma ** (n - t) * v[n]
    return adv, ret


def test_gae_matches_double_loop(rng):
    for _ in range(50):
        n = int(rng.integers(1, 33))
        r, v = rng.normal(size=n), rng.normal(size=n + 1)
        g, l = rng.uniform(0.5, 1), rng.uniform(0, 1)
        a, ret = compute_gae(r, v, g, l)
        ea, eret = brute_force_gae(r, v, g, l)
        assert np.max(np.abs(a - ea)) <= 1e-12 and np.max(np.abs(ret - eret)) <= 1e-12


def test_gae_lambda_zero_is_td_error(rng):
    r, v = rng.normal(size=10), rng.normal(size=11)
    a, _ = compute_gae(r, v, 0.9, 0.0)
    assert np.array_equal(a, r + 0.9 * v[1:] - v[:-1])


def test_gae_gamma_lambda_one_is_return_minus_value():
    r = np.array([1.0, 2.0, 3.0])
    v = np.array([0.5, 0.25, 0.125, 4.0])
    a, ret = compute_gae(r, v, 1.0, 1.0)
    assert ret.tolist() == [10.0, 9.0, 7.0]
    assert a.tolist() == [9.5, 8.75, 6.875]


def test_gae_stops_at_episode_boundary():
    r = np.ones(4)
    v = np.zeros(5)
    a, ret = compute_gae(r, v, 0.5, 1.0, dones=[False, True, False, False])
    assert ret.tolist() == [1.5, 1.0, 1.5, 1.0]


def test_gae_next_values_form(rng):
    r, v = rng.normal(size=6), rng.normal(size=7)
    a1, r1 = compute_gae(r, v, 0.99, 0.95)
    a2, r2 = compute_gae(r, v[:-1], 0.99, 0.95, next_values=v[1:])
    assert np.array_equal(a1, a2) and np.array_equal(r1, r2)


def test_gae_length_mismatch():
    with pytest.raises(SpecificationError):
        compute_gae(np.ones(3), np.ones(3), 0.9, 0.9)


def test_config_validation():
    with pytest.raises(SpecificationError):
        TrainConfig(gamma=1.0)
    with pytest.raises(SpecificationError):
        TrainConfig(batch_size=10, memory_size=5)
    with pytest.raises(SpecificationError):
        TrainConfig(entropy_mode="other")


def _transition(i, done=False):
    s = np.full((8, 8), float(i))
    return Transition(s, (0,), float(i), s, np.array([-1.0]), np.array([0.0]), done)


def test_buffer_capacity_and_window(rng):
    buf = TrajectoryBuffer(5)
    for i in range(8):
        buf.append(_transition(i))
    assert len(buf) == 5 and buf.items[0].r == 3
    w = buf.window(3, rng)
    rs = [t.r for t in w]
    assert rs == list(range(int(rs[0]), int(rs[0]) + 3))
    with pytest.raises(SpecificationError):
        buf.window(6, rng)


def test_transition_rejects_nan_logp():
    s = np.zeros((8, 8))
    with pytest.raises(TrainingError):
        Transition(s, (0,), 0.0, s, np.array([np.nan]), np.array([0.0]), False)


def _batch(rng, net, K=8, heads=4, width=5, n_critics=1):
    obs = rng.random((K, 8, 8))
    actions = rng.integers(0, width, size=(K, heads))
    logits, _ = net.forward(obs)
    from cyclelab.nn import log_softmax
    old = np.stack([log_softmax(l)[np.arange(K), actions[:, h]] for h, l in enumerate(logits)], axis=1)
    return Batch(obs, actions, old, rng.normal(size=(K, n_critics)), rng.normal(size=(K, n_critics)))


def test_ratio_one_at_old_policy(rng):
    net = PolicyNetwork(4, 5, seed=0)
    rep = ppo_losses(_batch(rng, net), net, TrainConfig())
    assert np.allclose(rep.ratios, 1.0)


def test_clipped_surrogate_bounds(rng):
    net = PolicyNetwork(4, 5, seed=0)
    b = _batch(rng, net)
    b.old_logp = b.old_logp - 1.0  # new policy looks e times likelier
    b.advantages = np.abs(b.advantages)
    rep = ppo_losses(b, net, TrainConfig(clip_eps=0.2))
    assert np.allclose(rep.surrogates, 1.2 * b.advantages)


def test_entropy_modes(rng):
    net = PolicyNetwork(4, 5, seed=0)
    b = _batch(rng, net)
    bonus = ppo_losses(b, net, TrainConfig(entropy_mode="bonus"))
    literal = ppo_losses(b, net, TrainConfig(entropy_mode="literal"))
    assert bonus.entropy == pytest.approx(4 * np.log(5), rel=1e-3)
    assert literal.total - bonus.total == pytest.approx(2 * 0.01 * bonus.entropy)
    assert bonus.neg_entropy == -bonus.entropy


@pytest.mark.parametrize("heads,width,critics,mode", [(4, 5, 1, "bonus"), (1, 25, 1, "literal"), (3, 5, 3, "bonus")])
def test_loss_gradients(rng, heads, width, critics, mode):
    net = PolicyNetwork(heads, width, n_critics=critics, seed=1, conv1=8, conv2=6, hidden=5)
    b = _batch(rng, net, K=6, heads=heads, width=width, n_critics=critics)
    b.old_logp = b.old_logp + rng.normal(scale=0.3, size=b.old_logp.shape)
    cfg = TrainConfig(entropy_mode=mode)
    rep = ppo_losses(b, net, cfg)

    def loss():
        r = ppo_losses(b, net, cfg, with_grads=False)
        return r.total, r.branches

    check = grad_check(loss, net.params, rep.grads)
    assert check.passed, check


def test_agent_topology_checks(short_scenario):
    env = SignalEnv(short_scenario, EnvConfig("aap-joint"))
    with pytest.raises(SpecificationError):
        Agent.for_env(env, "ccda")
    env = SignalEnv(short_scenario, EnvConfig("aap"))
    with pytest.raises(SpecificationError):
        Agent.for_env(env, "fc")
    assert Agent.for_env(env, "fd").net.n_critics == 4


def test_make_env_methods(short_scenario):
    for method, design, topo in [("aap-ccda", "aap", "ccda"), ("aap-fc", "aap-joint", "fc"),
                                 ("aap-fd", "aap", "fd"), ("asp", "asp", "single")]:
        env, t = make_env(short_scenario, method, 0)
        assert env.config.design == design and t == topo
    with pytest.raises(SpecificationError):
        make_env(short_scenario, "dqn", 0)


def test_rollout_and_update(short_scenario, rng):
    env, topo = make_env(short_scenario, "aap-ccda", 0)
    agent = Agent.for_env(env, topo)
    buf, total = collect_rollout(env, agent, rng, 0)
    assert len(buf) == 5 and buf.items[-1].done and not buf.items[0].done
    assert total == pytest.approx(sum(t.r for t in buf.items))
    from cyclelab.nn import Adam
    cfg = TrainConfig(batch_size=4, memory_size=10)
    before = {k: v.copy() for k, v in agent.net.params.items()}
    update(agent, buf, Adam(agent.net.params, lr=1e-3), cfg, rng)
    assert len(buf) == 0
    assert any(not np.array_equal(before[k], agent.net.params[k]) for k in before)


def test_window_batch_normalizes(rng):
    window = [_transition(i) for i in range(6)]
    v = rng.normal(size=(6, 1))
    b = window_batch(window, v, rng.normal(size=(6, 1)), TrainConfig())
    assert abs(b.advantages.mean()) < 1e-12 and b.advantages.std() == pytest.approx(1, rel=1e-6)


def test_episode_seeds_distinct():
    seeds = {episode_seed(0, e, s) for e in range(20) for s in range(3)}
    assert len(seeds) == 60


def test_train_is_deterministic(short_scenario, tmp_path):
    cfg = TrainConfig(episodes=6, batch_size=8, memory_size=32, seed=4)
    curves = []
    for run in ("a", "b"):
        env, topo = make_env(short_scenario, "aap-ccda", 0)
        res = train(env, cfg, topo, out_dir=tmp_path / run)
        curves.append((tmp_path / run / "learning_curve.csv").read_bytes())
        assert res.updates >= 1
    assert curves[0] == curves[1]
    assert (tmp_path / "a" / "checkpoint.npz").exists()


def test_curve_csv_header():
    assert curve_to_csv([]).splitlines()[0].startswith("episode,cumulative_reward")


def test_evaluate_greedy(short_scenario):
    env, topo = make_env(short_scenario, "aap-fd", 0)
    res = evaluate(Agent.for_env(env, topo), env, episodes=2)
    assert len(res.m_q) == 2 and all(q >= 0 for q in res.m_q)
