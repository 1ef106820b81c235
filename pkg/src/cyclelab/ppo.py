"""PPO with generalized advantage estimation for multi-head signal agents.

Topologies
----------
``ccda``    one actor head per phase, one shared critic
``fc``      one actor head over the joint (M ** N) action space, one critic
``fd``      one actor head and one critic per phase; every critic regresses
            the same global return, head ``i`` uses critic ``i``'s advantages
``single``  one actor head sized to the environment's action set (used by the
            classical designs), one critic

The loss is ``-policy + c1 * value - c2 * entropy`` where ``policy`` sums the
clipped surrogate of every head, ``entropy`` sums each head's Shannon entropy
and ``value`` is the mean squared error of the critic(s).  Setting
``entropy_mode="literal"`` subtracts ``c2 * sum(p log p)`` instead, which
penalises entropy.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .env import EnvConfig, SignalEnv
from .metrics import efficiency, steadiness
from .nn import (Adam, PolicyNetwork, TrainingError, branch_pattern, clip_grad_norm, entropy, log_softmax,
                 save_checkpoint)
from .sim import SpecificationError

log = logging.getLogger(__name__)

TOPOLOGIES = ("ccda", "fc", "fd", "single")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    memory_size: int = 3000
    batch_size: int = 256
    clip_eps: float = 0.2
    gamma: float = 0.99
    lam: float = 0.95
    c1: float = 0.9
    c2: float = 0.01
    epochs: int = 4
    normalize_advantages: bool = True
    entropy_mode: str = "bonus"
    max_grad_norm: float | None = None
    episodes: int = 50
    seed: int = 0
    hidden: int = 64

    def __post_init__(self):
        if not 0 <= self.gamma < 1:
            raise SpecificationError("gamma must lie in [0, 1)")
        if not 0 <= self.lam <= 1:
            raise SpecificationError("lambda must lie in [0, 1]")
        if self.clip_eps <= 0:
            raise SpecificationError("clip_eps must be positive")
        if self.batch_size < 1 or self.memory_size < self.batch_size:
            raise SpecificationError("need 1 <= batch_size <= memory_size")
        if self.entropy_mode not in ("bonus", "literal"):
            raise SpecificationError("entropy_mode must be 'bonus' or 'literal'")


# -- trajectory storage --------------------------------------------------


@dataclass
class Transition:
    s: np.ndarray
    a: tuple[int, ...]
    r: float
    s_next: np.ndarray
    logp: np.ndarray
    value: np.ndarray
    done: bool

    def __post_init__(self):
        if not np.all(np.isfinite(self.logp)):
            raise TrainingError("non-finite log-probability in transition")


class TrajectoryBuffer:
    """Ordered transitions; mini-batches are contiguous windows."""

    def __init__(self, capacity: int = 3000):
        self.capacity = capacity
        self.items: list[Transition] = []

    def __len__(self):
        return len(self.items)

    def append(self, tr: Transition) -> None:
        if len(self.items) >= self.capacity:
            self.items.pop(0)
        self.items.append(tr)

    def clear(self) -> None:
        self.items.clear()

    def window(self, size: int, rng: np.random.Generator) -> list[Transition]:
        """``size`` consecutive transitions starting at a uniformly random valid index."""
        if size > len(self.items):
            raise SpecificationError(f"buffer holds {len(self.items)} < {size} transitions")
        start = int(rng.integers(0, len(self.items) - size + 1))
        return self.items[start:start + size]


# -- advantages ----------------------------------------------------------


def compute_gae(rewards, values, gamma: float, lam: float, dones=None, next_values=None):
    """Truncated GAE and discounted returns over one window.

    ``values`` holds ``V(s_t)``; give either ``len(rewards) + 1`` entries
    (the last is ``V`` of the state after the window) or pass
    ``next_values`` with ``V(s_{t+1})`` per step.  ``dones[t]`` marks an
    episode boundary after step ``t``: the recursion stops there but ``δ_t``
    still bootstraps from ``V(s_{t+1})`` since episodes end on a time limit.

    Returns ``(advantages, returns)`` with
    ``A_t = Σ_k (γλ)^k δ_{t+k}`` and ``R_t = Σ_k γ^k r_{t+k} + γ^n V(s_{t+n})``,
    both truncated at the window end or the next boundary.
    """
    r = np.asarray(rewards, dtype=float)
    v = np.asarray(values, dtype=float)
    n = len(r)
    if next_values is None:
        if len(v) != n + 1:
            raise SpecificationError("values must have len(rewards) + 1 entries")
        v, nv = v[:n], v[1:]
    else:
        nv = np.asarray(next_values, dtype=float)
        if len(v) != n or len(nv) != n:
            raise SpecificationError("values and next_values must match rewards")
    d = np.zeros(n, dtype=bool) if dones is None else np.asarray(dones, dtype=bool)
    if len(d) != n:
        raise SpecificationError("dones must match rewards")
    deltas = r + gamma * nv - v
    adv = np.zeros(n)
    ret = np.zeros(n)
    acc_a = 0.0
    acc_r = 0.0
    for t in reversed(range(n)):
        if t == n - 1 or d[t]:
            acc_a = deltas[t]
            acc_r = r[t] + gamma * nv[t]
        else:
            acc_a = deltas[t] + gamma * lam * acc_a
            acc_r = r[t] + gamma * acc_r
        adv[t] = acc_a
        ret[t] = acc_r
    return adv, ret


# -- losses --------------------------------------------------------------


@dataclass
class Batch:
    obs: np.ndarray          # (K, 8, 8)
    actions: np.ndarray      # (K, n_heads) int
    old_logp: np.ndarray     # (K, n_heads)
    advantages: np.ndarray   # (K, n_critics)
    returns: np.ndarray      # (K, n_critics)


@dataclass
class LossReport:
    policy: float
    value: float
    entropy: float
    total: float
    grads: dict | None = None
    ratios: np.ndarray | None = None
    surrogates: np.ndarray | None = None
    branches: np.ndarray | None = None

    @property
    def neg_entropy(self) -> float:
        """The ``sum p log p`` form of the entropy term."""
        return -self.entropy


def ppo_losses(batch: Batch, net: PolicyNetwork, config: TrainConfig, with_grads: bool = True) -> LossReport:
    K = len(batch.obs)
    cache = {}
    logits, values = net.forward(batch.obs, cache)
    n_heads = len(logits)
    eps = config.clip_eps
    sign = -1.0 if config.entropy_mode == "bonus" else 1.0
    policy = 0.0
    ent_total = 0.0
    dlogits = []
    ratios = np.zeros((K, n_heads))
    surrogates = np.zeros((K, n_heads))
    rows = np.arange(K)
    clip_branch = []
    for h in range(n_heads):
        adv = batch.advantages[:, h if batch.advantages.shape[1] > 1 else 0]
        logp = log_softmax(logits[h])
        p = np.exp(logp)
        a = batch.actions[:, h]
        rho = np.exp(logp[rows, a] - batch.old_logp[:, h])
        unclipped = rho * adv
        clipped = np.clip(rho, 1 - eps, 1 + eps) * adv
        surr = np.minimum(unclipped, clipped)
        clip_branch += [unclipped <= clipped, rho < 1 - eps, rho > 1 + eps]
        policy += surr.mean()
        ratios[:, h] = rho
        surrogates[:, h] = surr
        H = entropy(p, logp)
        ent_total += H.mean()
        if with_grads:
            dsurr_drho = np.where(unclipped <= clipped, adv, 0.0)
            onehot = np.zeros_like(p)
            onehot[rows, a] = 1.0
            g = -(dsurr_drho * rho)[:, None] * (onehot - p) / K
            # d H / d logits = -p (log p + H)
            g += sign * config.c2 * (-p * (logp + H[:, None])) / K
            dlogits.append(g)
    value_loss = 0.0
    dvalues = []
    for c, v in enumerate(values):
        err = v - batch.returns[:, c]
        value_loss += float(np.mean(err ** 2))
        dvalues.append(2.0 * config.c1 * err / K)
    total = -policy + config.c1 * value_loss + sign * config.c2 * ent_total
    if not np.isfinite(total):
        raise TrainingError(f"non-finite loss (policy={policy}, value={value_loss}, entropy={ent_total})")
    grads = net.backward(cache, dlogits, dvalues) if with_grads else None
    branches = np.concatenate([branch_pattern(cache)] + clip_branch)
    return LossReport(float(policy), value_loss, float(ent_total), float(total), grads, ratios,
                      surrogates, branches)


# -- agent ---------------------------------------------------------------


class Agent:
    """Network plus the glue between environment actions and actor heads."""

    def __init__(self, net: PolicyNetwork, topology: str, env_heads: Sequence[int], n_deltas: int | None = None):
        self.net = net
        self.topology = topology
        self.env_heads = list(env_heads)
        self.n_deltas = n_deltas

    @classmethod
    def for_env(cls, env: SignalEnv, topology: str, config: TrainConfig | None = None, seed: int = 0):
        config = config or TrainConfig()
        if topology not in TOPOLOGIES:
            raise SpecificationError(f"unknown topology {topology!r}")
        heads = env.head_sizes
        design = env.config.design
        if topology in ("ccda", "fd") and design != "aap":
            raise SpecificationError(f"{topology} needs the per-phase 'aap' design")
        if topology == "fc" and design != "aap-joint":
            raise SpecificationError("fc needs the joint 'aap-joint' design")
        if topology == "single" and len(heads) != 1:
            raise SpecificationError("single-head topology needs a one-head design")
        n_critics = len(heads) if topology == "fd" else 1
        net = PolicyNetwork(len(heads), heads[0], n_critics=n_critics, seed=seed, hidden=config.hidden)
        return cls(net, topology, heads, len(env.config.delta_set))

    @property
    def n_heads(self) -> int:
        return self.net.n_actors

    def act(self, obs: np.ndarray, rng: np.random.Generator | None = None, greedy: bool = False):
        """Return ``(action, logp, value)`` for one scaled observation."""
        logits, values = self.net.forward(obs)
        action, logps = [], []
        for lg in logits:
            logp = log_softmax(lg[0])
            if greedy:
                a = int(np.argmax(logp))
            else:
                a = int(rng.choice(len(logp), p=np.exp(logp)))
            action.append(a)
            logps.append(logp[a])
        return tuple(action), np.array(logps), np.array([v[0] for v in values])


# -- training loop -------------------------------------------------------


def episode_seed(base: int, episode: int, stream: int = 0) -> int:
    return int(np.random.SeedSequence([base, stream, episode]).generate_state(1)[0])


@dataclass
class EpisodeStats:
    episode: int
    cumulative_reward: float
    steps: int
    updates: int
    policy_loss: float = float("nan")
    value_loss: float = float("nan")
    entropy: float = float("nan")
    total_loss: float = float("nan")


@dataclass
class TrainResult:
    agent: Agent
    curve: list[EpisodeStats]
    config: TrainConfig
    topology: str
    optimizer: Adam
    updates: int = 0

    @property
    def rewards(self) -> np.ndarray:
        return np.array([e.cumulative_reward for e in self.curve])

    def curve_csv(self) -> str:
        return curve_to_csv(self.curve)


CURVE_COLUMNS = ("episode", "cumulative_reward", "steps", "updates",
                 "policy_loss", "value_loss", "entropy", "total_loss")


def curve_to_csv(curve: Sequence[EpisodeStats]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_COLUMNS)
    for e in curve:
        row = asdict(e)
        w.writerow([row[c] if isinstance(row[c], int) else repr(float(row[c])) for c in CURVE_COLUMNS])
    return buf.getvalue()


def collect_rollout(env: SignalEnv, agent: Agent, rng: np.random.Generator, seed: int,
                    buffer: TrajectoryBuffer | None = None, greedy: bool = False,
                    on_transition=None) -> tuple[TrajectoryBuffer, float]:
    """Run one episode, appending every decision to ``buffer``.

    ``on_transition`` is called after each append so the caller can update
    as soon as the buffer is full (the episode then continues).
    """
    buffer = TrajectoryBuffer() if buffer is None else buffer
    obs = env.encode(env.reset(seed))
    total = 0.0
    while not env.done:
        action, logp, value = agent.act(obs, rng, greedy)
        nxt, reward, done, _ = env.step(action)
        nxt = env.encode(nxt)
        buffer.append(Transition(obs, action, reward, nxt, logp, value, done))
        total += reward
        obs = nxt
        if on_transition is not None:
            on_transition(buffer)
    return buffer, total


def _old_values(buffer: TrajectoryBuffer, net: PolicyNetwork) -> tuple[np.ndarray, np.ndarray]:
    """Critic values of every ``s_t`` and ``s_{t+1}`` in the buffer, shape ``(len, n_critics)``.

    The buffer is cleared after each update, so the weights at update time
    are the weights that generated the data.
    """
    obs = np.stack([t.s for t in buffer.items])
    nxt = np.stack([t.s_next for t in buffer.items])
    return np.stack(net.forward(obs)[1], axis=1), np.stack(net.forward(nxt)[1], axis=1)


def window_batch(window: Sequence[Transition], values: np.ndarray, next_values: np.ndarray,
                 config: TrainConfig) -> Batch:
    rewards = np.array([t.r for t in window])
    dones = np.array([t.done for t in window])
    adv = np.zeros_like(values)
    ret = np.zeros_like(values)
    for c in range(values.shape[1]):
        adv[:, c], ret[:, c] = compute_gae(rewards, values[:, c], config.gamma, config.lam, dones,
                                           next_values[:, c])
    if config.normalize_advantages and len(window) > 1:
        adv = (adv - adv.mean(axis=0)) / (adv.std(axis=0) + 1e-8)
    return Batch(np.stack([t.s for t in window]), np.array([t.a for t in window]),
                 np.stack([t.logp for t in window]), adv, ret)


def update(agent: Agent, buffer: TrajectoryBuffer, opt: Adam, config: TrainConfig,
           rng: np.random.Generator) -> LossReport:
    """PPO epochs over random contiguous windows of the buffer, then clear it."""
    K = config.batch_size
    if len(buffer) < K:
        raise SpecificationError(f"buffer holds {len(buffer)} < {K} transitions")
    values, next_values = _old_values(buffer, agent.net)
    report = None
    for _ in range(config.epochs):
        start = int(rng.integers(0, len(buffer) - K + 1))
        window = buffer.items[start:start + K]
        batch = window_batch(window, values[start:start + K], next_values[start:start + K], config)
        report = ppo_losses(batch, agent.net, config)
        if config.max_grad_norm is not None:
            clip_grad_norm(report.grads, config.max_grad_norm)
        opt.step(agent.net.params, report.grads)
        for k, p in agent.net.params.items():
            if not np.all(np.isfinite(p)):
                raise TrainingError(f"parameters diverged in {k} after update")
    buffer.clear()
    return report


def make_env(scenario, method: str, delta_t: float, **env_kw) -> tuple[SignalEnv, str]:
    """Environment and topology for a method name used by the CLI and grid runner."""
    table = {
        "aap-ccda": ("aap", "ccda"), "aap-fc": ("aap-joint", "fc"), "aap-fd": ("aap", "fd"),
        "cnp": ("cnp", "single"), "non": ("non", "single"), "spd": ("spd", "single"),
        "asp": ("asp", "single"),
    }
    if method not in table:
        raise SpecificationError(f"unknown method {method!r}; choose from {sorted(table)}")
    design, topology = table[method]
    return SignalEnv(scenario, EnvConfig(design=design, delta_t=delta_t, **env_kw)), topology


def train(env: SignalEnv, config: TrainConfig, topology: str = "ccda", out_dir=None,
          checkpoint_every: int = 0, progress: bool = False) -> TrainResult:
    """Alternate rollouts and PPO updates for ``config.episodes`` episodes."""
    agent = Agent.for_env(env, topology, config, seed=config.seed)
    opt = Adam(agent.net.params, lr=config.lr)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    buffer = TrajectoryBuffer(config.memory_size)
    curve: list[EpisodeStats] = []
    state = {"updates": 0, "last": None}

    def maybe_update(buf):
        if len(buf) >= config.batch_size:
            state["last"] = update(agent, buf, opt, config, rng)
            state["updates"] += 1

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    for ep in range(config.episodes):
        _, total = collect_rollout(env, agent, rng, episode_seed(config.seed, ep), buffer,
                                   on_transition=maybe_update)
        last = state["last"]
        stats = EpisodeStats(ep, total, env.clock, state["updates"])
        if last is not None:
            stats.policy_loss, stats.value_loss = last.policy, last.value
            stats.entropy, stats.total_loss = last.entropy, last.total
        curve.append(stats)
        if progress and (ep % 10 == 0 or ep == config.episodes - 1):
            log.info("episode %d reward %.4f updates %d (%.0fs)", ep, total, state["updates"],
                     time.perf_counter() - t0)
        if out is not None and checkpoint_every and (ep + 1) % checkpoint_every == 0:
            save_checkpoint(out / f"checkpoint_ep{ep + 1}.npz", agent.net.params,
                            _meta(env, config, topology))
    result = TrainResult(agent, curve, config, topology, opt, state["updates"])
    if out is not None:
        save_checkpoint(out / "checkpoint.npz", agent.net.params, _meta(env, config, topology))
        (out / "learning_curve.csv").write_text(result.curve_csv())
        (out / "config.json").write_text(json.dumps(_meta(env, config, topology), indent=2, sort_keys=True) + "\n")
    return result


def _meta(env: SignalEnv, config: TrainConfig, topology: str) -> dict:
    return {
        "topology": topology,
        "design": env.config.design,
        "delta_t": env.config.delta_t,
        "delta_set": list(env.config.delta_set),
        "head_sizes": env.head_sizes,
        "scenario": env.scenario.to_dict(),
        "train": asdict(config),
    }


def agent_from_checkpoint(params: dict, meta: dict, env: SignalEnv) -> Agent:
    topology = meta["topology"]
    heads = meta["head_sizes"]
    n_critics = len(heads) if topology == "fd" else 1
    hidden = meta.get("train", {}).get("hidden", 64)
    net = PolicyNetwork(len(heads), heads[0], n_critics=n_critics, hidden=hidden)
    for k in net.params:
        if k not in params or params[k].shape != net.params[k].shape:
            raise SpecificationError(f"checkpoint does not match network layout at {k}")
        net.params[k] = params[k].copy()
    return Agent(net, topology, heads, len(meta.get("delta_set", [])) or None)


# -- evaluation ----------------------------------------------------------


@dataclass
class EvalResult:
    m_q: list[float]
    m_s: list[float]
    rewards: list[float]
    durations: list[list[tuple[int, ...]]] = field(default_factory=list)

    @property
    def mean_m_q(self) -> float:
        return float(np.mean(self.m_q))

    @property
    def mean_m_s(self) -> float:
        vals = [v for v in self.m_s if np.isfinite(v)]
        return float(np.mean(vals)) if vals else float("nan")


def _safe_steadiness(rows) -> float:
    return steadiness(rows) if len(rows) >= 3 else float("nan")


def evaluate(agent: Agent, env: SignalEnv, episodes: int = 5, seed: int = 0, greedy: bool = True) -> EvalResult:
    """Rollouts on fresh arrival seeds (stream 2, disjoint from training); argmax actions unless ``greedy=False``."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 3]))
    res = EvalResult([], [], [])
    for ep in range(episodes):
        _, total = collect_rollout(env, agent, rng, episode_seed(seed, ep, stream=2), greedy=greedy)
        res.m_q.append(efficiency(env.queue_matrix()))
        res.m_s.append(_safe_steadiness(env.duration_rows))
        res.rewards.append(total)
        res.durations.append(list(env.duration_rows))
    return res


def evaluate_controller(controller, scenario, episodes: int = 5, seed: int = 0, delta_t: float = 0.0) -> EvalResult:
    from .baselines import run_controller

    res = EvalResult([], [], [])
    for ep in range(episodes):
        env = run_controller(scenario, controller, episode_seed(seed, ep, stream=2), delta_t)
        res.m_q.append(efficiency(env.queue_matrix()))
        res.m_s.append(_safe_steadiness(env.duration_rows))
        res.rewards.append(float(np.sum(env.step_rewards)))
        res.durations.append(list(env.duration_rows))
    return res
