import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ecosim.nervous import (HappinessNetwork, NervousError, NervousSystem, PolicyNetwork,
                            ReflexNetwork, combine, decide, happiness, layout_hash,
                            load_checkpoint, log_softmax, one_hot, policy_select, reflex_out,
                            save_checkpoint, softmax)


def test_empty_reflex_accepts_everything():
    net = ReflexNetwork.empty(3, 4)
    assert list(reflex_out(net, [1.0, -2.0, 3.0, 0.5])) == [0, 0, 0]


def test_lamb_reflexes():
    # inputs: [milk_smell_mouth, liquid_touch_nose]; actions: [Suck, Breathe]
    W = np.array([[1.0, 0.0], [0.0, -1.0]])
    net = ReflexNetwork(W, np.array([0.5, 0.5]))
    assert list(reflex_out(net, [0.9, 0.0])) == [1, 0]
    assert list(reflex_out(net, [0.0, 1.0])) == [0, -1]
    assert list(reflex_out(net, [0.2, 0.2])) == [0, 0]  # below threshold both ways


def test_reflex_zero_threshold_is_sign():
    net = ReflexNetwork(np.array([[1.0, -1.0]]), np.zeros(1))
    assert reflex_out(net, [2.0, 1.0])[0] == 1
    assert reflex_out(net, [1.0, 2.0])[0] == -1
    assert reflex_out(net, [1.0, 1.0])[0] == 0


def test_reflex_faults():
    with pytest.raises(NervousError):
        ReflexNetwork(np.array([[0.5]]), np.zeros(1))
    with pytest.raises(NervousError):
        reflex_out(ReflexNetwork.empty(2, 3), [1.0, 2.0])


def test_happiness_examples():
    assert happiness(HappinessNetwork(np.zeros(3)), [4.0, 5.0, 6.0]) == 0.0
    deer = HappinessNetwork(np.array([1.0, -1.0]))
    assert happiness(deer, [0.8, 0.3]) == pytest.approx(0.5)
    copepod = HappinessNetwork(np.array([1.0, -0.5]))
    assert happiness(copepod, [3.0, 0.0]) == 3.0
    with pytest.raises(NervousError):
        happiness(deer, [np.nan, 0.0])


def test_policy_select_examples():
    rng = np.random.default_rng(0)
    net = PolicyNetwork(1, 4, [4], rng=rng)
    for p in net.params:
        p[...] = 0.0
    for _ in range(20):
        a, lp, v = policy_select(net, [0.3], rng)
        assert lp == pytest.approx(math.log(0.25))
    net.params[-4][...] = 0.0
    net.params[-3][...] = [1.0, 3.0, 2.0, 0.0]
    assert policy_select(net, [0.0], rng, greedy=True)[0] == 1


def test_peaked_logits_sample_first_action():
    net = PolicyNetwork(1, 3, [2], rng=np.random.default_rng(1))
    for p in net.params:
        p[...] = 0.0
    net.params[-3][...] = [10.0, 0.0, 0.0]
    rng = np.random.default_rng(7)
    picks = [policy_select(net, [0.0], rng)[0] for _ in range(200)]
    assert picks.count(0) == 200
    assert softmax(np.array([[10.0, 0.0, 0.0]]))[0, 0] > 0.9999


def test_random_control_is_uniform():
    rng = np.random.default_rng(3)
    a, lp, v = policy_select(None, [0.0], rng, n_actions=5)
    assert lp == pytest.approx(math.log(0.2)) and v == 0.0


def test_nonfinite_logits_fault():
    net = PolicyNetwork(1, 2, [2], rng=np.random.default_rng(0))
    net.params[-3][...] = [np.nan, 0.0]
    with pytest.raises(NervousError):
        policy_select(net, [0.0], np.random.default_rng(0))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=2, max_size=6))
def test_softmax_normalized(logits):
    z = np.array([logits])
    p = softmax(z)
    assert abs(p.sum() - 1.0) < 1e-6
    assert np.allclose(np.log(p), log_softmax(z), atol=1e-9)


def test_combine_examples():
    assert list(combine([0, 0, 0], [0, 1, 0])) == [0, 1, 0]
    assert list(combine([-1, 0, 1], [1, 0, 0])) == [0, 0, 1]
    assert list(combine([1, 0, 0], [0, 1, 0])) == [1, 1, 0]
    with pytest.raises(NervousError):
        combine([0, 0], [1, 1])
    with pytest.raises(NervousError):
        combine([0, 0, 0], [1, 0])


def test_combine_dominance_exhaustive():
    for n in range(1, 5):
        for y in itertools.product((-1, 0, 1), repeat=n):
            for k in range(n):
                z = one_hot(k, n)
                out = combine(y, z)
                for i in range(n):
                    if y[i] == -1:
                        assert out[i] == 0
                    if y[i] == 1:
                        assert out[i] == 1
                if not any(y):
                    assert list(out) == list(z)


def _system(policy_rng=0):
    W = np.array([[1.0, 0.0], [0.0, -1.0], [0.0, 0.0]])
    reflex = ReflexNetwork(W, np.full(3, 0.5))
    pol = PolicyNetwork(2, 3, [4], rng=np.random.default_rng(policy_rng))
    return NervousSystem(reflex, HappinessNetwork(np.zeros(2)), pol, 3)


def test_decide_lamb_state_regardless_of_sample():
    ns = _system()
    rng = np.random.default_rng(5)
    for _ in range(50):
        d = decide(ns, [1.0, 1.0], rng)
        assert d.multi_hot[0] == 1 and d.multi_hot[1] == 0
        assert d.multi_hot[2] == (d.chosen_policy_action == 2)


def test_decide_empty_reflex_and_full_block():
    pol = PolicyNetwork(1, 3, [4], rng=np.random.default_rng(0))
    ns = NervousSystem(ReflexNetwork.empty(3, 1), HappinessNetwork(np.zeros(1)), pol, 3)
    d = decide(ns, [0.4], np.random.default_rng(1))
    assert list(d.multi_hot) == list(one_hot(d.chosen_policy_action, 3))
    block = NervousSystem(ReflexNetwork(-np.ones((3, 1)), np.zeros(3)),
                          HappinessNetwork(np.zeros(1)), pol, 3)
    assert not decide(block, [1.0], np.random.default_rng(1)).multi_hot.any()


def _numeric_grad(f, params, h=1e-5):
    out = []
    for p in params:
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            fp = f()
            p[idx] = old - h
            fm = f()
            p[idx] = old
            g[idx] = (fp - fm) / (2 * h)
        out.append(g)
    return out


def test_mlp_backward_matches_finite_differences():
    rng = np.random.default_rng(2)
    net = PolicyNetwork(3, 4, [5, 3], input_scale=[1.0, 0.5, 2.0], rng=rng)
    X = rng.normal(size=(6, 3))
    cl = rng.normal(size=(6, 4))
    cv = rng.normal(size=6)

    def loss():
        lg, v, _ = net.forward(X)
        return float((lg * cl).sum() + (v * cv).sum())

    _, _, acts = net.forward(X)
    grads = net.backward(acts, cl, cv)
    num = _numeric_grad(loss, net.params)
    for g, n in zip(grads, num):
        assert np.allclose(g, n, atol=1e-7, rtol=1e-5)


def test_flat_roundtrip_and_perturb():
    net = PolicyNetwork(2, 2, [3], rng=np.random.default_rng(0))
    flat = net.get_flat()
    other = net.perturbed(np.random.default_rng(1), 0.01)
    assert not np.allclose(other.get_flat(), flat)
    other.set_flat(flat)
    assert np.array_equal(other.get_flat(), flat)
    assert net.n_params == flat.size


def test_checkpoint_roundtrip(tmp_path):
    names = ["Energy", "eyes.Grass.dist"]
    net = PolicyNetwork(2, 3, [4, 4], input_scale=[1.0, 0.1], rng=np.random.default_rng(4))
    path = tmp_path / "Deer.ckpt"
    save_checkpoint(path, net, "Deer", names)
    back, header = load_checkpoint(path, names)
    assert header["species"] == "Deer"
    assert header["sensor_layout_hash"] == layout_hash(names)
    assert np.array_equal(back.get_flat(), net.get_flat())
    assert np.array_equal(back.input_scale, net.input_scale)
    raw = path.read_bytes()
    # parameters are little-endian f8 at the end of the file
    tail = np.frombuffer(raw[-8 * net.n_params:], dtype="<f8")
    assert np.array_equal(tail, net.get_flat())


def test_checkpoint_rejects_bad_files(tmp_path):
    net = PolicyNetwork(2, 3, [4], rng=np.random.default_rng(4))
    path = tmp_path / "a.ckpt"
    save_checkpoint(path, net, "A", ["x", "y"])
    with pytest.raises(NervousError):
        load_checkpoint(path, ["y", "x"])
    bad = tmp_path / "b.ckpt"
    bad.write_bytes(b"NOTACKPT" + path.read_bytes()[8:])
    with pytest.raises(NervousError):
        load_checkpoint(bad)
    trailing = tmp_path / "c.ckpt"
    trailing.write_bytes(path.read_bytes() + b"\0")
    with pytest.raises(NervousError):
        load_checkpoint(trailing)
