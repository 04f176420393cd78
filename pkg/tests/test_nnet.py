import numpy as np
import pytest
from hypothesis import given, strategies as st

from physprobe import nnet
from physprobe.nnet import AgentParams, HiddenState, NonFiniteError


def reference_unroll(p: AgentParams, obs):
    """Independent per-step LSTM written from the textbook equations."""
    H = p.hidden
    h = np.zeros(H)
    c = np.zeros(H)
    logits, values = [], []
    for x in obs:
        e = np.tanh(x @ p["W_embed"] + p["b_embed"]) if p.d_e else x
        W = p["W_lstm"]
        pre = e @ W[:p.d_in] + h @ W[p.d_in:] + p["b_lstm"]
        i = 1 / (1 + np.exp(-pre[:H]))
        f = 1 / (1 + np.exp(-pre[H:2 * H]))
        g = np.tanh(pre[2 * H:3 * H])
        o = 1 / (1 + np.exp(-pre[3 * H:]))
        c = f * c + i * g
        h = o * np.tanh(c)
        logits.append(h @ p["W_policy"] + p["b_policy"])
        values.append(h @ p["W_value"][:, 0] + p["b_value"][0])
    return np.array(logits), np.array(values)


def test_zero_weights_uniform_policy():
    p = AgentParams(4, 8)
    logits, values, _, _ = nnet.forward(p, np.random.default_rng(0).normal(size=(5, 4)))
    assert np.all(logits == 0) and np.all(values == 0)
    assert np.allclose(nnet.softmax(logits), 1 / 8)


def test_zero_input_zero_bias_fixed_point():
    p = AgentParams.init(4, 8, np.random.default_rng(0))
    p["b_lstm"][:] = 0
    p["b_embed"][:] = 0
    _, _, state, cache = nnet.forward(p, np.zeros((6, 4)))
    assert np.all(cache.hs == 0) and np.all(state.c == 0)


@pytest.mark.parametrize("d_e", [0, 64])
def test_forward_matches_reference(d_e):
    rng = np.random.default_rng(1)
    p = AgentParams.init(15, 25, rng, d_e=d_e)
    obs = rng.normal(size=(5, 15))
    logits, values, _, _ = nnet.forward(p, obs)
    rl, rv = reference_unroll(p, obs)
    assert np.max(np.abs(logits[:, 0] - rl)) < 1e-12
    assert np.max(np.abs(values[:, 0] - rv)) < 1e-12


def test_step_matches_forward():
    rng = np.random.default_rng(2)
    p = AgentParams.init(4, 8, rng)
    obs = rng.normal(size=(7, 3, 4))
    logits, values, _, _ = nnet.forward(p, obs)
    state = HiddenState.zeros(3)
    for t in range(7):
        lg, v, state = nnet.step(p, obs[t], state)
        assert np.allclose(lg, logits[t], atol=1e-13) and np.allclose(v, values[t], atol=1e-13)


def scalar_loss(p, obs, wl, wv):
    logits, values, _, _ = nnet.forward(p, obs)
    return float((logits * wl).sum() + (values * wv).sum())


# 20 configurations: each environment's dimensions with and without the embedding,
# plus random small shapes
GRAD_CONFIGS = ([(4, 8, d, 100) for d in (0, 64)] + [(15, 25, d, 100) for d in (0, 64)]
                + [(17, 9, d, 100) for d in (0, 64)]
                + [(int(a), int(b), int(d), int(h)) for a, b, d, h in
                   zip([3, 5, 2, 7, 6, 4, 9, 3, 2, 5, 8, 1, 6, 4],
                       [2, 4, 6, 3, 5, 7, 2, 8, 3, 2, 4, 5, 6, 3],
                       [0, 3, 0, 5, 2, 0, 4, 6, 0, 3, 0, 2, 7, 0],
                       [3, 5, 4, 6, 2, 7, 3, 5, 8, 4, 6, 3, 5, 2])])


@pytest.mark.parametrize("cfg", GRAD_CONFIGS, ids=[str(c) for c in GRAD_CONFIGS])
def test_bptt_matches_central_differences(cfg):
    obs_dim, n_act, d_e, hidden = cfg
    rng = np.random.default_rng(hash(cfg) % 2**32)
    p = AgentParams.init(obs_dim, n_act, rng, d_e=d_e, hidden=hidden)
    p.flat += rng.normal(scale=0.1, size=p.size)
    T, B = 6, 2
    obs = rng.normal(size=(T, B, obs_dim))
    wl = rng.normal(size=(T, B, n_act))
    wv = rng.normal(size=(T, B))
    _, _, _, cache = nnet.forward(p, obs)
    grad = nnet.backward(p, cache, wl, wv)
    # check every parameter block on a sample of coordinates
    h = 1e-5
    worst = 0.0
    for name, shape in p.shapes:
        view = p[name].reshape(-1)
        gview = grad[name].reshape(-1)
        idx = rng.choice(view.size, size=min(view.size, 12), replace=False)
        for i in idx:
            old = view[i]
            view[i] = old + h
            up = scalar_loss(p, obs, wl, wv)
            view[i] = old - h
            down = scalar_loss(p, obs, wl, wv)
            view[i] = old
            num = (up - down) / (2 * h)
            err = abs(num - gview[i]) / max(1e-6, abs(num) + abs(gview[i]))
            worst = max(worst, err)
    assert worst < 1e-4


def test_gradient_linear_in_loss_scale():
    rng = np.random.default_rng(4)
    p = AgentParams.init(4, 8, rng)
    obs = rng.normal(size=(5, 1, 4))
    wl, wv = rng.normal(size=(5, 1, 8)), rng.normal(size=(5, 1))
    _, _, _, cache = nnet.forward(p, obs)
    g1 = nnet.backward(p, cache, wl, wv).flat
    g3 = nnet.backward(p, cache, 3 * wl, 3 * wv).flat
    assert np.allclose(g3, 3 * g1, rtol=1e-12, atol=1e-15)
    assert np.all(nnet.backward(p, cache, 0 * wl, 0 * wv).flat == 0)


def test_nonfinite_is_fatal():
    p = AgentParams.init(4, 8, np.random.default_rng(0))
    p["W_policy"][0, 0] = np.inf
    with pytest.raises(NonFiniteError):
        nnet.forward(p, np.ones((2, 4)))


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(5)
    p = AgentParams.init(17, 9, rng)
    nnet.save_params(p, tmp_path / "a.ppck")
    q = nnet.load_params(tmp_path / "a.ppck")
    assert q.header() == p.header() and q.flat.tobytes() == p.flat.tobytes()
    obs = rng.normal(size=(4, 17))
    assert nnet.forward(p, obs)[0].tobytes() == nnet.forward(q, obs)[0].tobytes()
    (tmp_path / "bad").write_bytes(b"nope")
    with pytest.raises(ValueError):
        nnet.load_params(tmp_path / "bad")


def test_parameter_count_depends_only_on_dims():
    a = AgentParams(4, 8)
    b = AgentParams.init(4, 8, np.random.default_rng(9))
    assert a.size == b.size
    with pytest.raises(ValueError):
        AgentParams(4, 8, flat=np.zeros(3))


def test_init_forget_bias():
    p = AgentParams.init(4, 8, np.random.default_rng(0))
    H = p.hidden
    assert np.all(p["b_lstm"][H:2 * H] == 1.0) and np.all(p["b_lstm"][:H] == 0.0)
    assert np.max(np.abs(p["W_embed"])) <= 1 / np.sqrt(4)


@given(st.lists(st.floats(-30, 30), min_size=2, max_size=12), st.floats(-50, 50))
def test_softmax_properties(logits, shift):
    z = np.array(logits)
    p = nnet.softmax(z)
    assert abs(p.sum() - 1) < 1e-12 and np.all(p > 0)
    assert np.allclose(nnet.softmax(z + shift), p, atol=1e-12)
    assert np.allclose(np.exp(nnet.log_softmax(z)), p, atol=1e-12)


def test_sampling():
    rng = np.random.default_rng(0)
    counts = np.bincount([nnet.sample_action(np.zeros(8), rng) for _ in range(16_000)],
                         minlength=8)
    assert np.all(np.abs(counts - 2000) < 3 * np.sqrt(16_000 / 8 * 7 / 8))
    big = np.array([10.0, 0.0])
    assert nnet.softmax(big)[0] > 0.9999
    a = [nnet.sample_action(big, np.random.default_rng(s)) for s in range(50)]
    b = [nnet.sample_action(big, np.random.default_rng(s)) for s in range(50)]
    assert a == b
    assert nnet.greedy_action(np.array([0.0, 3.0, 1.0])) == 1
