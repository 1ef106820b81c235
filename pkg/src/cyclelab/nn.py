"""Small numpy network with hand-written backward passes.

Architecture (all float64, ReLU after every hidden layer)::

    obs (8 x 8)
      -> row conv: 128 filters of 1 x 8, one 128-vector per movement
      -> column conv: 256 filters of 8 x 1 over the 8 x 128 map -> 256-vector
      -> critic head(s): 256 -> 64 -> 1
      -> actor heads:    256 -> 64 -> 64 -> M logits

Parameters live in a flat ``dict[str, ndarray]`` so optimisers, gradient
checks and checkpoints can treat them uniformly.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .sim import SpecificationError

CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    pass


def relu(x):
    return np.maximum(x, 0.0)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def entropy(probs: np.ndarray, logp: np.ndarray | None = None) -> np.ndarray:
    """Shannon entropy along the last axis."""
    if logp is None:
        logp = np.log(probs)
    return -(probs * logp).sum(axis=-1)


def _uniform(rng, shape, fan_in, gain=1.0):
    bound = gain * np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class PolicyNetwork:
    """Shared feature extractor with ``n_actors`` policy heads and ``n_critics`` value heads."""

    def __init__(self, n_actors: int, head_width: int, n_critics: int = 1, seed: int = 0,
                 conv1: int = 128, conv2: int = 256, hidden: int = 64, n_rows: int = 8,
                 n_features: int = 8):
        self.n_actors = n_actors
        self.head_width = head_width
        self.n_critics = n_critics
        self.shape = (n_rows, n_features)
        rng = np.random.default_rng(seed)
        p = {}
        p["conv1.w"] = _uniform(rng, (conv1, n_features), n_features)
        p["conv1.b"] = np.zeros(conv1)
        p["conv2.w"] = _uniform(rng, (conv2, n_rows, conv1), n_rows * conv1)
        p["conv2.b"] = np.zeros(conv2)
        for c in range(n_critics):
            p[f"critic{c}.0.w"] = _uniform(rng, (conv2, hidden), conv2)
            p[f"critic{c}.0.b"] = np.zeros(hidden)
            p[f"critic{c}.1.w"] = _uniform(rng, (hidden, 1), hidden, gain=0.1)
            p[f"critic{c}.1.b"] = np.zeros(1)
        for a in range(n_actors):
            p[f"actor{a}.0.w"] = _uniform(rng, (conv2, hidden), conv2)
            p[f"actor{a}.0.b"] = np.zeros(hidden)
            p[f"actor{a}.1.w"] = _uniform(rng, (hidden, hidden), hidden)
            p[f"actor{a}.1.b"] = np.zeros(hidden)
            # near-uniform initial policy
            p[f"actor{a}.2.w"] = _uniform(rng, (hidden, head_width), hidden, gain=0.01)
            p[f"actor{a}.2.b"] = np.zeros(head_width)
        self.params = p

    @property
    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())

    # -- forward ---------------------------------------------------------

    def _check(self, obs):
        obs = np.asarray(obs, dtype=float)
        if obs.ndim == 2:
            obs = obs[None]
        if obs.shape[1:] != self.shape:
            raise SpecificationError(f"observation must be {self.shape}, got {obs.shape[1:]}")
        return obs

    def features(self, obs: np.ndarray, cache: dict | None = None) -> np.ndarray:
        p = self.params
        x = self._check(obs)
        z1 = np.einsum("brc,fc->brf", x, p["conv1.w"]) + p["conv1.b"]
        h1 = relu(z1)
        z2 = np.einsum("brf,grf->bg", h1, p["conv2.w"]) + p["conv2.b"]
        h2 = relu(z2)
        if cache is not None:
            cache.update(x=x, z1=z1, h1=h1, z2=z2, h2=h2)
        return h2

    def _mlp(self, prefix: str, n_layers: int, h: np.ndarray, cache: dict | None):
        p = self.params
        acts = [h]
        for k in range(n_layers):
            h = h @ p[f"{prefix}.{k}.w"] + p[f"{prefix}.{k}.b"]
            if k < n_layers - 1:
                h = relu(h)
            acts.append(h)
        if cache is not None:
            cache[prefix] = acts
        return h

    def forward(self, obs: np.ndarray, cache: dict | None = None):
        """Return ``(logits, values)``: lists of ``(B, M)`` and ``(B,)`` arrays."""
        emb = self.features(obs, cache)
        logits = [self._mlp(f"actor{a}", 3, emb, cache) for a in range(self.n_actors)]
        values = [self._mlp(f"critic{c}", 2, emb, cache)[:, 0] for c in range(self.n_critics)]
        return logits, values

    # -- backward --------------------------------------------------------

    def _mlp_backward(self, prefix: str, n_layers: int, cache: dict, grad_out: np.ndarray, grads: dict):
        p = self.params
        acts = cache[prefix]
        g = grad_out
        for k in reversed(range(n_layers)):
            inp = acts[k]
            grads[f"{prefix}.{k}.w"] = inp.T @ g
            grads[f"{prefix}.{k}.b"] = g.sum(axis=0)
            g = g @ p[f"{prefix}.{k}.w"].T
            if k > 0:
                g = g * (acts[k] > 0)
        return g

    def backward(self, cache: dict, dlogits: list, dvalues: list) -> dict:
        """Gradients of a scalar loss given its gradients w.r.t. every head output."""
        p = self.params
        grads = {}
        g_emb = np.zeros_like(cache["h2"])
        for a in range(self.n_actors):
            g_emb += self._mlp_backward(f"actor{a}", 3, cache, dlogits[a], grads)
        for c in range(self.n_critics):
            g_emb += self._mlp_backward(f"critic{c}", 2, cache, dvalues[c][:, None], grads)
        g2 = g_emb * (cache["z2"] > 0)
        grads["conv2.w"] = np.einsum("bg,brf->grf", g2, cache["h1"])
        grads["conv2.b"] = g2.sum(axis=0)
        g1 = np.einsum("bg,grf->brf", g2, p["conv2.w"]) * (cache["z1"] > 0)
        grads["conv1.w"] = np.einsum("brf,brc->fc", g1, cache["x"])
        grads["conv1.b"] = g1.sum(axis=(0, 1))
        return grads

    # -- convenience -----------------------------------------------------

    def policy(self, obs: np.ndarray) -> list[np.ndarray]:
        logits, _ = self.forward(obs)
        return [softmax(l) for l in logits]

    def value(self, obs: np.ndarray) -> np.ndarray:
        _, values = self.forward(obs)
        return np.stack(values, axis=-1)


def feature_extract(obs: np.ndarray, net: PolicyNetwork) -> np.ndarray:
    """256-dimensional embedding of one observation (or a batch)."""
    emb = net.features(obs)
    return emb[0] if np.ndim(obs) == 2 else emb


def actor_forward(embedding: np.ndarray, net: PolicyNetwork, head: int) -> np.ndarray:
    h = np.atleast_2d(embedding)
    probs = softmax(net._mlp(f"actor{head}", 3, h, None))
    return probs[0] if np.ndim(embedding) == 1 else probs


def critic_forward(embedding: np.ndarray, net: PolicyNetwork, head: int = 0):
    h = np.atleast_2d(embedding)
    v = net._mlp(f"critic{head}", 2, h, None)[:, 0]
    return float(v[0]) if np.ndim(embedding) == 1 else v


class Adam:
    """Adam with bias correction; one moment pair per named parameter."""

    def __init__(self, params: dict, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        for k, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient for {k}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k in sorted(grads):
            g = grads[k]
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self) -> dict:
        out = {f"adam.m.{k}": v for k, v in self.m.items()}
        out.update({f"adam.v.{k}": v for k, v in self.v.items()})
        out["adam.t"] = np.array(self.t)
        return out

    def load_state_dict(self, state: dict) -> None:
        for k in self.m:
            self.m[k] = np.array(state[f"adam.m.{k}"])
            self.v[k] = np.array(state[f"adam.v.{k}"])
        self.t = int(state["adam.t"])


def adam_step(params: dict, grads: dict, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8, state: Adam | None = None) -> Adam:
    """Functional wrapper around :class:`Adam`; pass the returned state back in on the next call."""
    if state is None:
        state = Adam(params, lr, beta1, beta2, eps)
    state.step(params, grads)
    return state


def clip_grad_norm(grads: dict, max_norm: float) -> float:
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads.values():
            g *= scale
    return total


# -- gradient checking --------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    tolerance: float
    worst: tuple[str, tuple] | None
    n_skipped_kinks: int = 0

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def grad_check(loss_fn: Callable, params: dict, grads: dict, tolerance: float = 1e-4,
               n_samples: int | None = None, eps: float = 1e-5, seed: int = 0,
               floor: float = 1e-6) -> GradCheckReport:
    """Compare analytic ``grads`` with central differences of ``loss_fn``.

    ``loss_fn`` reads the (mutated in place) ``params`` and returns either
    the loss or ``(loss, branches)`` where ``branches`` records every
    piecewise decision (ReLU masks, clip branches).  An entry whose
    ``+eps``/``-eps`` evaluations take different branches straddles a kink;
    it is skipped and another entry drawn in its place.

    Relative error is ``|a - n| / max(|a|, |n|, floor)``; the floor keeps
    roundoff on near-zero gradients from dominating.  With
    ``n_samples=None`` every entry is checked.
    """
    rng = np.random.default_rng(seed)
    names = sorted(params)
    sizes = np.array([params[k].size for k in names])
    bounds = np.cumsum(sizes)
    if n_samples is None:
        order = np.arange(bounds[-1])
        target = bounds[-1]
    else:
        order = rng.permutation(bounds[-1])
        target = min(n_samples, bounds[-1])

    def evaluate():
        out = loss_fn()
        return out if isinstance(out, tuple) else (out, None)

    worst, worst_at, checked, skipped = 0.0, None, 0, 0
    for f in order:
        if checked >= target:
            break
        i = int(np.searchsorted(bounds, f, side="right"))
        k = names[i]
        idx = np.unravel_index(f - (bounds[i - 1] if i else 0), params[k].shape)
        arr = params[k]
        orig = arr[idx]
        arr[idx] = orig + eps
        up, b_up = evaluate()
        arr[idx] = orig - eps
        down, b_down = evaluate()
        arr[idx] = orig
        if b_up is not None and not np.array_equal(b_up, b_down):
            skipped += 1
            continue
        checked += 1
        num = (up - down) / (2 * eps)
        ana = grads[k][idx]
        err = abs(ana - num) / max(abs(ana), abs(num), floor)
        if err > worst:
            worst, worst_at = err, (k, tuple(int(j) for j in idx))
    return GradCheckReport(worst, checked, tolerance, worst_at, skipped)


def branch_pattern(cache: dict) -> np.ndarray:
    """Every ReLU on/off decision recorded in a forward cache, flattened."""
    parts = [cache["z1"] > 0, cache["z2"] > 0]
    for key in sorted(k for k in cache if k.startswith(("actor", "critic"))):
        acts = cache[key]
        parts += [a > 0 for a in acts[1:-1]]
    return np.concatenate([p.ravel() for p in parts])


# -- checkpoints --------------------------------------------------------


def save_checkpoint(path, params: dict, meta: dict | None = None, extra: dict | None = None) -> None:
    """Write every tensor (with its shape) to a versioned ``.npz`` file."""
    payload = {f"param.{k}": v for k, v in params.items()}
    for k, v in (extra or {}).items():
        payload[f"extra.{k}"] = v
    payload["__version__"] = np.array(CHECKPOINT_VERSION)
    payload["__meta__"] = np.frombuffer(json.dumps(meta or {}, sort_keys=True).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **payload)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path) -> tuple[dict, dict, dict]:
    """Return ``(params, meta, extra)``."""
    with np.load(path, allow_pickle=False) as data:
        version = int(data["__version__"])
        if version != CHECKPOINT_VERSION:
            raise SpecificationError(f"unsupported checkpoint version {version}")
        meta = json.loads(bytes(data["__meta__"]).decode())
        params = {k[6:]: data[k].copy() for k in data.files if k.startswith("param.")}
        extra = {k[6:]: data[k].copy() for k in data.files if k.startswith("extra.")}
    return params, meta, extra
