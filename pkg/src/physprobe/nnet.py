"""Recurrent actor-critic network in plain numpy (float64).

obs -> tanh(linear) embedding -> LSTM(100) -> softmax policy logits and a
scalar value, with hand-written backpropagation through time over whole
episodes. All weights live in one flat vector; named blocks are views into
it, so serialising, clipping and optimiser updates act on a single array.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

HIDDEN = 100
EMBED = 64
CHECKPOINT_VERSION = 1
_MAGIC = b"PPCK"


class NonFiniteError(FloatingPointError):
    """NaN or inf appeared in activations or gradients."""


def _layout(obs_dim, n_actions, d_e, hidden):
    d_in = d_e if d_e else obs_dim
    shapes = []
    if d_e:
        shapes += [("W_embed", (obs_dim, d_e)), ("b_embed", (d_e,))]
    shapes += [
        ("W_lstm", (d_in + hidden, 4 * hidden)),  # rows: [input; recurrent], cols: i f g o
        ("b_lstm", (4 * hidden,)),
        ("W_policy", (hidden, n_actions)),
        ("b_policy", (n_actions,)),
        ("W_value", (hidden, 1)),
        ("b_value", (1,)),
    ]
    return shapes


class AgentParams:
    """Flat parameter store with named views.

    ``d_e=0`` drops the embedding and feeds raw observations to the LSTM.
    """

    def __init__(self, obs_dim: int, n_actions: int, d_e: int = EMBED,
                 hidden: int = HIDDEN, flat: np.ndarray | None = None):
        self.obs_dim = int(obs_dim)
        self.n_actions = int(n_actions)
        self.d_e = int(d_e)
        self.hidden = int(hidden)
        self.shapes = _layout(self.obs_dim, self.n_actions, self.d_e, self.hidden)
        size = sum(int(np.prod(s)) for _, s in self.shapes)
        if flat is None:
            flat = np.zeros(size)
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (size,):
            raise ValueError(f"expected {size} parameters, got {flat.shape}")
        self.flat = flat
        self._bind()

    def _bind(self):
        self.views = {}
        off = 0
        for name, shape in self.shapes:
            n = int(np.prod(shape))
            self.views[name] = self.flat[off:off + n].reshape(shape)
            off += n

    def __getitem__(self, name):
        return self.views[name]

    @property
    def size(self) -> int:
        return self.flat.size

    @property
    def d_in(self) -> int:
        return self.d_e if self.d_e else self.obs_dim

    def like(self, flat=None) -> "AgentParams":
        """Same architecture, different (or zero) values."""
        return AgentParams(self.obs_dim, self.n_actions, self.d_e, self.hidden,
                           np.zeros(self.size) if flat is None else flat)

    def copy(self) -> "AgentParams":
        return self.like(self.flat.copy())

    def header(self) -> dict:
        return {"obs_dim": self.obs_dim, "n_actions": self.n_actions, "d_e": self.d_e,
                "hidden": self.hidden, "version": CHECKPOINT_VERSION}

    @classmethod
    def init(cls, obs_dim, n_actions, rng: np.random.Generator, d_e: int = EMBED,
             hidden: int = HIDDEN) -> "AgentParams":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) matrices, zero biases, forget bias 1."""
        p = cls(obs_dim, n_actions, d_e, hidden)
        for name, shape in p.shapes:
            if name.startswith("W"):
                bound = 1.0 / np.sqrt(shape[0])
                p[name][...] = rng.uniform(-bound, bound, size=shape)
        p["b_lstm"][hidden:2 * hidden] = 1.0
        return p


def save_params(params: AgentParams, path) -> None:
    """Binary checkpoint: magic, header length, JSON header, little-endian f64 array."""
    head = json.dumps(params.header(), sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        fh.write(params.flat.astype("<f8").tobytes())


def load_params(path) -> AgentParams:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _MAGIC:
        raise ValueError(f"{path}: not a parameter checkpoint")
    (n,) = struct.unpack("<I", data[4:8])
    head = json.loads(data[8:8 + n])
    if head.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {head.get('version')}")
    flat = np.frombuffer(data[8 + n:], dtype="<f8").astype(np.float64)
    return AgentParams(head["obs_dim"], head["n_actions"], head["d_e"], head["hidden"], flat)


def sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def softmax(logits, axis=-1):
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits, axis=-1):
    z = logits - logits.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


@dataclass
class HiddenState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, batch: int, hidden: int = HIDDEN) -> "HiddenState":
        return cls(np.zeros((batch, hidden)), np.zeros((batch, hidden)))


def step(params: AgentParams, obs: np.ndarray, state: HiddenState):
    """One recurrent step for a batch: returns (logits, values, new_state)."""
    H = params.hidden
    x = np.tanh(obs @ params["W_embed"] + params["b_embed"]) if params.d_e else obs
    z = np.concatenate([x, state.h], axis=1) @ params["W_lstm"] + params["b_lstm"]
    i = sigmoid(z[:, :H])
    f = sigmoid(z[:, H:2 * H])
    g = np.tanh(z[:, 2 * H:3 * H])
    o = sigmoid(z[:, 3 * H:])
    c = f * state.c + i * g
    h = o * np.tanh(c)
    logits = h @ params["W_policy"] + params["b_policy"]
    values = (h @ params["W_value"])[:, 0] + params["b_value"][0]
    return logits, values, HiddenState(h, c)


@dataclass
class ForwardCache:
    obs: np.ndarray
    xs: np.ndarray
    hs: np.ndarray      # (T+1, B, H) including h_0
    cs: np.ndarray
    gates: np.ndarray   # (T, B, 4H) post-activation i f g o
    tanh_c: np.ndarray


def forward(params: AgentParams, obs_seq: np.ndarray, state: HiddenState | None = None):
    """Unroll over ``obs_seq`` of shape (T, B, obs_dim).

    Returns ``(logits (T,B,A), values (T,B), final_state, cache)``.
    """
    obs_seq = np.asarray(obs_seq, dtype=np.float64)
    if obs_seq.ndim == 2:
        obs_seq = obs_seq[:, None, :]
    T, B, _ = obs_seq.shape
    if T < 1:
        raise ValueError("need at least one observation")
    H = params.hidden
    if state is None:
        state = HiddenState.zeros(B, H)
    if params.d_e:
        xs = np.tanh(obs_seq @ params["W_embed"] + params["b_embed"])
    else:
        xs = obs_seq
    W_in = params["W_lstm"][:params.d_in]
    W_rec = params["W_lstm"][params.d_in:]
    zin = xs @ W_in + params["b_lstm"]
    hs = np.empty((T + 1, B, H))
    cs = np.empty((T + 1, B, H))
    gates = np.empty((T, B, 4 * H))
    tanh_c = np.empty((T, B, H))
    hs[0], cs[0] = state.h, state.c
    for t in range(T):
        z = zin[t] + hs[t] @ W_rec
        gt = gates[t]
        gt[:, :2 * H] = sigmoid(z[:, :2 * H])
        gt[:, 2 * H:3 * H] = np.tanh(z[:, 2 * H:3 * H])
        gt[:, 3 * H:] = sigmoid(z[:, 3 * H:])
        cs[t + 1] = gt[:, H:2 * H] * cs[t] + gt[:, :H] * gt[:, 2 * H:3 * H]
        tanh_c[t] = np.tanh(cs[t + 1])
        hs[t + 1] = gt[:, 3 * H:] * tanh_c[t]
    hout = hs[1:]
    logits = hout @ params["W_policy"] + params["b_policy"]
    values = (hout @ params["W_value"])[..., 0] + params["b_value"][0]
    if not (np.all(np.isfinite(logits)) and np.all(np.isfinite(values))):
        raise NonFiniteError("non-finite network output")
    cache = ForwardCache(obs_seq, xs, hs, cs, gates, tanh_c)
    return logits, values, HiddenState(hs[-1].copy(), cs[-1].copy()), cache


def backward(params: AgentParams, cache: ForwardCache, dlogits: np.ndarray,
             dvalues: np.ndarray) -> AgentParams:
    """Gradient of a scalar loss given its gradients w.r.t. logits and values.

    The initial hidden state is treated as a constant.
    """
    H = params.hidden
    d_in = params.d_in
    grad = params.like()
    hout = cache.hs[1:]
    T, B, _ = dlogits.shape

    grad["W_policy"][...] = np.einsum("tbh,tba->ha", hout, dlogits)
    grad["b_policy"][...] = dlogits.sum(axis=(0, 1))
    grad["W_value"][:, 0] = np.einsum("tbh,tb->h", hout, dvalues)
    grad["b_value"][0] = dvalues.sum()
    dh_out = dlogits @ params["W_policy"].T + dvalues[..., None] * params["W_value"][:, 0]

    W_rec = params["W_lstm"][d_in:]
    dz_all = np.empty((T, B, 4 * H))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        gt = cache.gates[t]
        i, f, g, o = gt[:, :H], gt[:, H:2 * H], gt[:, 2 * H:3 * H], gt[:, 3 * H:]
        dh = dh_out[t] + dh_next
        tc = cache.tanh_c[t]
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dz = dz_all[t]
        dz[:, :H] = dc * g * i * (1.0 - i)
        dz[:, H:2 * H] = dc * cache.cs[t] * f * (1.0 - f)
        dz[:, 2 * H:3 * H] = dc * i * (1.0 - g * g)
        dz[:, 3 * H:] = dh * tc * o * (1.0 - o)
        dh_next = dz @ W_rec.T
        dc_next = dc * f

    inputs = np.concatenate([cache.xs, cache.hs[:-1]], axis=2)
    grad["W_lstm"][...] = np.einsum("tbi,tbj->ij", inputs, dz_all)
    grad["b_lstm"][...] = dz_all.sum(axis=(0, 1))
    if params.d_e:
        dx = dz_all @ params["W_lstm"][:d_in].T
        dpre = dx * (1.0 - cache.xs * cache.xs)
        grad["W_embed"][...] = np.einsum("tbo,tbe->oe", cache.obs, dpre)
        grad["b_embed"][...] = dpre.sum(axis=(0, 1))
    if not np.all(np.isfinite(grad.flat)):
        raise NonFiniteError("non-finite gradient")
    return grad


def sample_action(logits: np.ndarray, rng: np.random.Generator) -> int:
    """Draw an action id from softmax(logits) with one uniform variate."""
    p = softmax(np.asarray(logits, dtype=np.float64))
    cdf = np.cumsum(p)
    u = rng.random() * cdf[-1]
    return int(min(np.searchsorted(cdf, u, side="right"), p.size - 1))


def greedy_action(logits: np.ndarray) -> int:
    return int(np.argmax(logits))
