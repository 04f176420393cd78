"""Synchronous advantage actor-critic over whole-episode unrolls.

Each update collects one complete episode from each of ``n_envs``
environments with the current parameters, backpropagates through every
episode from its first step, averages the per-episode gradients, clips the
global norm and takes one RMSProp step. Everything is seeded, so a run is a
pure function of its config.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import nnet
from .envproto import (Policy, QuestionEnv, Trajectory, derive_seed, episode_stream,
                       run_episodes)
from .nnet import AgentParams, HiddenState

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    gamma: float = 0.95
    n_envs: int = 16
    lr: float = 7e-4
    rmsprop_decay: float = 0.99
    rmsprop_eps: float = 1e-5
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    grad_clip_norm: float = 40.0
    total_episodes: int = 60_000
    seed: int = 0
    embed_dim: int = nnet.EMBED
    hidden: int = nnet.HIDDEN
    ema_smoothing: float = 0.99
    lr_schedule: str = "constant"  # or "linear": decay to zero over total_episodes

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        for name in ("lr", "rmsprop_eps", "entropy_coef", "value_coef", "grad_clip_norm"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.lr_schedule not in ("constant", "linear"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.n_envs < 1 or self.total_episodes < 1:
            raise ValueError("n_envs and total_episodes must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


class TrainingDiverged(RuntimeError):
    def __init__(self, msg, last_good: AgentParams, curve):
        super().__init__(msg)
        self.last_good = last_good
        self.curve = curve


def compute_returns(rewards, gamma: float) -> np.ndarray:
    """Discounted returns of a terminated episode (no bootstrap)."""
    rewards = np.asarray(rewards, dtype=np.float64)
    out = np.empty_like(rewards)
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


@dataclass
class LossTerms:
    loss: float
    policy: float
    value: float
    entropy: float
    advantages: np.ndarray
    dlogits: np.ndarray
    dvalues: np.ndarray


def a2c_terms(logits, values, actions, returns, value_coef, entropy_coef,
              mask=None) -> LossTerms:
    """Loss and its output gradients for arrays shaped (T, ...) with A actions last.

    loss = -sum A_t log pi(a_t) + value_coef sum (R_t - V_t)^2 - entropy_coef sum H_t,
    with the advantage A_t = R_t - V_t held constant inside the policy term.
    """
    logits = np.asarray(logits, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    returns = np.asarray(returns, dtype=np.float64)
    actions = np.asarray(actions)
    if mask is None:
        mask = np.ones(values.shape)
    logp = nnet.log_softmax(logits)
    p = np.exp(logp)
    adv = (returns - values) * mask
    logp_a = np.take_along_axis(logp, actions[..., None], axis=-1)[..., 0]
    ent = -(p * logp).sum(axis=-1)
    pol = -(adv * logp_a).sum()
    val = (adv * adv).sum()
    entropy = (ent * mask).sum()
    loss = pol + value_coef * val - entropy_coef * entropy

    onehot = np.zeros_like(logits)
    np.put_along_axis(onehot, actions[..., None], 1.0, axis=-1)
    dlogits = -adv[..., None] * (onehot - p)
    # dH/dz_k = -p_k (log p_k + H)
    dlogits += entropy_coef * (p * (logp + ent[..., None])) * mask[..., None]
    dvalues = -2.0 * value_coef * adv
    return LossTerms(float(loss), float(pol), float(val), float(entropy), adv,
                     dlogits, dvalues)


def a2c_loss(trajectory: Trajectory, returns, config: TrainConfig) -> tuple[float, np.ndarray]:
    """Scalar loss and per-step advantages of one recorded trajectory."""
    terms = a2c_terms(trajectory.logits, trajectory.values, trajectory.actions, returns,
                      config.value_coef, config.entropy_coef)
    return terms.loss, terms.advantages


def pad_batch(trajs: Sequence[Trajectory], gamma: float):
    """Stack episodes time-major with zero padding; returns obs, actions, returns, mask."""
    T = max(len(t) for t in trajs)
    B = len(trajs)
    d = trajs[0].observations.shape[1]
    obs = np.zeros((T, B, d))
    actions = np.zeros((T, B), dtype=np.int64)
    rets = np.zeros((T, B))
    mask = np.zeros((T, B))
    for b, tr in enumerate(trajs):
        n = len(tr)
        obs[:n, b] = tr.observations
        actions[:n, b] = tr.actions
        rets[:n, b] = compute_returns(tr.rewards, gamma)
        mask[:n, b] = 1.0
    return obs, actions, rets, mask


def batch_gradient(params: AgentParams, trajs: Sequence[Trajectory], config: TrainConfig):
    """Mean over episodes of the per-episode loss gradient."""
    obs, actions, rets, mask = pad_batch(trajs, config.gamma)
    logits, values, _, cache = nnet.forward(params, obs)
    terms = a2c_terms(logits, values, actions, rets, config.value_coef,
                      config.entropy_coef, mask)
    B = len(trajs)
    grad = nnet.backward(params, cache, terms.dlogits / B, terms.dvalues / B)
    return grad, terms.loss / B, terms


def clip_by_global_norm(grad: np.ndarray, max_norm: float) -> tuple[np.ndarray, float]:
    norm = float(np.sqrt(np.dot(grad, grad)))
    if max_norm > 0 and norm > max_norm:
        grad = grad * (max_norm / norm)
    return grad, norm


class RMSProp:
    def __init__(self, size, lr, decay, eps):
        self.lr, self.decay, self.eps = lr, decay, eps
        self.ms = np.zeros(size)

    def update(self, params: np.ndarray, grad: np.ndarray) -> None:
        self.ms *= self.decay
        self.ms += (1.0 - self.decay) * grad * grad
        params -= self.lr * grad / (np.sqrt(self.ms) + self.eps)


class AgentPolicy(Policy):
    """Drives a batch of episodes with the recurrent network.

    Samples from the softmax by default (also at evaluation time); ``greedy``
    takes the argmax instead.
    """

    def __init__(self, params: AgentParams, greedy: bool = False):
        self.params = params
        self.greedy = greedy

    def reset(self, envs, seeds):
        self.state = HiddenState.zeros(len(envs), self.params.hidden)
        self.rngs = [np.random.default_rng(episode_stream(s, 1)) for s in seeds]
        self.envs = list(envs)

    def act(self, obs, active):
        logits, values, self.state = nnet.step(self.params, obs, self.state)
        self.last_logits, self.last_values = logits, values
        out = []
        for k in range(len(self.envs)):
            if not active[k]:
                out.append(None)
                continue
            a = (nnet.greedy_action(logits[k]) if self.greedy
                 else nnet.sample_action(logits[k], self.rngs[k]))
            out.append(self.envs[k].decode(a))
        return out


@dataclass
class CurvePoint:
    episode_index: int
    ema_success: float
    mean_episode_length: float
    loss: float


@dataclass
class TrainResult:
    params: AgentParams
    curve: list[CurvePoint] = field(default_factory=list)
    episodes: int = 0


class SuccessEMA:
    """Bias-corrected exponential moving average of episode success."""

    def __init__(self, smoothing: float):
        self.smoothing = smoothing
        self.raw = 0.0
        self.n = 0

    def add(self, x: float) -> None:
        self.raw = self.smoothing * self.raw + (1.0 - self.smoothing) * x
        self.n += 1

    @property
    def value(self) -> float:
        if self.n == 0:
            return float("nan")
        return self.raw / (1.0 - self.smoothing ** self.n)


def train(env_factory: Callable[[], QuestionEnv], config: TrainConfig,
          threads: int = 1, on_update: Callable | None = None,
          init_params: AgentParams | None = None) -> TrainResult:
    """Train from scratch (or ``init_params``) for ``config.total_episodes`` episodes."""
    envs = [env_factory() for _ in range(config.n_envs)]
    probe = envs[0]
    if init_params is None:
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, 7919]))
        params = AgentParams.init(probe.obs_dim, probe.n_actions, rng,
                                  d_e=config.embed_dim, hidden=config.hidden)
    else:
        params = init_params.copy()
    opt = RMSProp(params.size, config.lr, config.rmsprop_decay, config.rmsprop_eps)
    ema = SuccessEMA(config.ema_smoothing)
    result = TrainResult(params)
    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    episodes = 0
    try:
        while episodes < config.total_episodes:
            seeds = [derive_seed(config.seed, episodes + k) for k in range(config.n_envs)]
            records, trajs = run_episodes(envs, AgentPolicy(params), seeds,
                                          keep_trajectories=True, pool=pool)
            last_good = params.copy()
            try:
                grad, loss, _ = batch_gradient(params, trajs, config)
            except nnet.NonFiniteError as exc:
                raise TrainingDiverged(str(exc), last_good, result.curve) from exc
            if not math.isfinite(loss):
                raise TrainingDiverged("non-finite loss", last_good, result.curve)
            g, _ = clip_by_global_norm(grad.flat, config.grad_clip_norm)
            if config.lr_schedule == "linear":
                opt.lr = config.lr * max(0.0, 1.0 - episodes / config.total_episodes)
            opt.update(params.flat, g)
            if not np.all(np.isfinite(params.flat)):
                raise TrainingDiverged("non-finite parameters", last_good, result.curve)
            for r in records:
                ema.add(1.0 if r.correct else 0.0)
            episodes += len(records)
            point = CurvePoint(episodes, ema.value,
                               float(np.mean([r.steps for r in records])), loss)
            result.curve.append(point)
            if on_update is not None:
                on_update(point, params)
    finally:
        if pool is not None:
            pool.shutdown()
    result.episodes = episodes
    return result


def write_curve(curve: Sequence[CurvePoint], fh) -> None:
    fh.write("episode_index,ema_success,mean_episode_length,loss\n")
    for p in curve:
        fh.write(f"{p.episode_index},{p.ema_success!r},{p.mean_episode_length!r},{p.loss!r}\n")
