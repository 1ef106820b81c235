import numpy as np
import pytest

from cyclelab.nn import (Adam, PolicyNetwork, TrainingError, actor_forward, adam_step, critic_forward,
                         entropy, feature_extract, grad_check, load_checkpoint, log_softmax,
                         save_checkpoint, softmax)
from cyclelab.sim import SpecificationError


@pytest.fixture
def net():
    return PolicyNetwork(4, 5, seed=3)


def test_shapes(net, rng):
    obs = rng.random((8, 8))
    emb = feature_extract(obs, net)
    assert emb.shape == (256,)
    assert (emb >= 0).all()
    for h in range(4):
        p = actor_forward(emb, net, h)
        assert p.shape == (5,) and p.sum() == pytest.approx(1)
    assert isinstance(critic_forward(emb, net), float)
    logits, values = net.forward(rng.random((3, 8, 8)))
    assert len(logits) == 4 and logits[0].shape == (3, 5) and values[0].shape == (3,)


def test_bad_observation_shape(net):
    with pytest.raises(SpecificationError):
        net.forward(np.zeros((7, 8)))


def test_initial_policy_near_uniform(net, rng):
    p = net.policy(rng.random((8, 8)))
    assert np.allclose(p[0], 0.2, atol=0.02)


def test_softmax_and_entropy():
    x = np.array([[1000.0, 1000.0, 1000.0]])
    assert np.allclose(softmax(x), 1 / 3)
    assert entropy(softmax(np.zeros(4)))[()] == pytest.approx(np.log(4))
    assert np.isfinite(log_softmax(np.array([0.0, -1e4]))).all()


def test_grad_check_small_network(rng):
    net = PolicyNetwork(2, 3, n_critics=2, seed=0, conv1=6, conv2=5, hidden=4)
    obs = rng.random((4, 8, 8))
    dl = [rng.normal(size=(4, 3)) for _ in range(2)]
    dv = [rng.normal(size=4) for _ in range(2)]

    def loss():
        logits, values = net.forward(obs)
        return sum((l * d).sum() for l, d in zip(logits, dl)) + sum((v * d).sum() for v, d in zip(values, dv))

    cache = {}
    net.forward(obs, cache)
    grads = net.backward(cache, dl, dv)
    rep = grad_check(loss, net.params, grads)
    assert rep.n_checked == net.n_params
    assert rep.passed, rep


def test_grad_check_catches_wrong_gradient(rng):
    net = PolicyNetwork(1, 3, seed=0, conv1=4, conv2=4, hidden=3)
    obs = rng.random((2, 8, 8))

    def loss():
        return float(net.forward(obs)[1][0].sum())

    cache = {}
    net.forward(obs, cache)
    grads = net.backward(cache, [np.zeros((2, 3))], [np.ones(2)])
    grads["critic0.1.w"] = grads["critic0.1.w"] * 1.01
    assert not grad_check(loss, net.params, grads).passed


def test_adam_matches_reference():
    p = {"w": np.array([1.0, -2.0])}
    g = {"w": np.array([0.5, 0.1])}
    opt = Adam(p, lr=0.1)
    opt.step(p, g)
    # first step moves each coordinate by lr * sign(g)
    assert np.allclose(p["w"], [0.9, -2.1], atol=1e-6)
    state = adam_step(p, g, lr=0.1)
    assert state.t == 1


def test_adam_rejects_non_finite():
    p = {"w": np.zeros(2)}
    with pytest.raises(TrainingError):
        Adam(p).step(p, {"w": np.array([np.nan, 0.0])})


def test_adam_state_roundtrip():
    p = {"w": np.ones(3)}
    a = Adam(p, lr=0.01)
    a.step(p, {"w": np.ones(3)})
    b = Adam(p, lr=0.01)
    b.load_state_dict(a.state_dict())
    assert b.t == 1 and np.array_equal(b.m["w"], a.m["w"])


def test_checkpoint_roundtrip(tmp_path, net):
    path = tmp_path / "c.npz"
    save_checkpoint(path, net.params, {"topology": "ccda"}, {"step": np.array(3)})
    params, meta, extra = load_checkpoint(path)
    assert meta == {"topology": "ccda"} and int(extra["step"]) == 3
    assert all(np.array_equal(params[k], v) for k, v in net.params.items())


def test_checkpoint_version(tmp_path, net):
    path = tmp_path / "c.npz"
    np.savez(path, __version__=np.array(99), __meta__=np.frombuffer(b"{}", dtype=np.uint8))
    with pytest.raises(SpecificationError):
        load_checkpoint(path)
