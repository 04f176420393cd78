"""Interact-then-label episode protocol shared by both environments.

An episode is a question. At every step the agent either interacts with the
scene or commits to an answer with a label action. Labeling ends the episode
with a reward of +1/-1 for a right/wrong answer; an agent that never labels is
cut off at ``timeout_steps`` with the timeout reward. No other step is
rewarded, so the only pressure to answer early comes from discounting.

Policies are batched: :func:`run_episodes` drives several independent
environments in lockstep, which is how both evaluation and training roll out.
"""
from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field
from typing import Any, Sequence, Union

import numpy as np

from .physx import PHYSICS_DT


@dataclass(frozen=True)
class Interact:
    index: int


@dataclass(frozen=True)
class Label:
    answer: int


Action = Union[Interact, Label]


class Termination(str, enum.Enum):
    NONE = "none"
    LABELED = "labeled"
    TIMEOUT = "timeout"


class ProtocolError(RuntimeError):
    """The caller broke the episode contract (e.g. stepped a finished episode)."""


@dataclass
class EpisodeConfig:
    timeout_steps: int
    control_repeat: int = 4
    physics_dt: float = PHYSICS_DT
    reward_correct: float = 1.0
    reward_incorrect: float = -1.0
    reward_timeout: float = -1.0

    def __post_init__(self):
        if self.timeout_steps < 1:
            raise ValueError("timeout_steps must be >= 1")
        if self.control_repeat < 1:
            raise ValueError("control_repeat must be >= 1")

    @property
    def control_dt(self) -> float:
        return self.control_repeat * self.physics_dt


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool
    termination: Termination


@dataclass
class EpisodeRecord:
    seed: int
    env: str
    instance: dict
    actions: list[int]
    label: int | None
    correct: bool
    steps: int
    sim_seconds: float
    termination: str
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        extra = d.pop("extra")
        d.update(extra)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=False)

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeRecord":
        known = {k: d[k] for k in ("seed", "env", "instance", "actions", "label",
                                   "correct", "steps", "sim_seconds", "termination")}
        extra = {k: v for k, v in d.items() if k not in known}
        return cls(**known, extra=extra)


@dataclass
class Trajectory:
    """Per-step rollout data for one episode, in the order it was generated."""

    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    logits: np.ndarray | None = None
    values: np.ndarray | None = None

    def __len__(self):
        return len(self.actions)


class QuestionEnv:
    """Base class for interact-then-label environments.

    Subclasses define the instance sampler, what an interaction does to the
    world, the observation and the ground-truth answer.
    """

    name = "base"
    n_interact: int
    n_labels: int

    def __init__(self, config: EpisodeConfig):
        self.config = config
        self.steps = 0
        self.done = True
        self.seed = None
        self.rng = None

    @property
    def n_actions(self) -> int:
        return self.n_interact + self.n_labels

    @property
    def obs_dim(self) -> int:
        raise NotImplementedError

    def encode(self, action: Action) -> int:
        if isinstance(action, Interact):
            if not 0 <= action.index < self.n_interact:
                raise ValueError(f"interaction index {action.index} out of range")
            return action.index
        if not 0 <= action.answer < self.n_labels:
            raise ValueError(f"label {action.answer} out of range")
        return self.n_interact + action.answer

    def decode(self, a: int) -> Action:
        a = int(a)
        if 0 <= a < self.n_interact:
            return Interact(a)
        if a < self.n_actions:
            return Label(a - self.n_interact)
        raise ValueError(f"action id {a} out of range")

    # -- subclass hooks -------------------------------------------------
    def _sample_instance(self, rng: np.random.Generator) -> None:
        raise NotImplementedError

    def _interact(self, index: int) -> None:
        raise NotImplementedError

    def observe(self) -> np.ndarray:
        raise NotImplementedError

    def answer(self) -> int:
        raise NotImplementedError

    def instance_descriptor(self) -> dict:
        raise NotImplementedError

    # -- protocol -------------------------------------------------------
    def reset(self, seed) -> np.ndarray:
        self.seed = seed
        self.rng = np.random.default_rng(episode_stream(seed, 0))
        self._sample_instance(self.rng)
        self.steps = 0
        self.done = False
        return self.observe()

    def step(self, action: Action) -> StepResult:
        if self.done:
            raise ProtocolError("episode already finished; call reset()")
        self.steps += 1
        cfg = self.config
        if isinstance(action, Label):
            self.encode(action)
            self.done = True
            reward = cfg.reward_correct if action.answer == self.answer() else cfg.reward_incorrect
            return StepResult(self.observe(), reward, True, Termination.LABELED)
        self._interact(self.encode(action))
        if self.steps >= cfg.timeout_steps:
            self.done = True
            return StepResult(self.observe(), cfg.reward_timeout, True, Termination.TIMEOUT)
        return StepResult(self.observe(), 0.0, False, Termination.NONE)


def episode_stream(seed, stream: int) -> np.random.SeedSequence:
    """Independent RNG stream ``stream`` for the episode with ``seed``.

    Stream 0 drives the environment, 1 the policy and 2 the randomizing wrapper.
    """
    return np.random.SeedSequence([int(seed), int(stream)])


def derive_seed(base_seed: int, index: int) -> int:
    """Deterministic 63-bit episode seed for the ``index``-th episode of a run."""
    hi, lo = np.random.SeedSequence([int(base_seed), int(index)]).generate_state(2, np.uint32)
    return int((int(hi) << 31) ^ int(lo))


class Policy:
    """Batched policy interface.

    ``reset`` starts ``len(envs)`` episodes; ``act`` receives the stacked
    observations plus a mask of still-running episodes and returns one action
    per episode (ignored where inactive). Learned policies also leave their
    per-row ``last_logits``/``last_values`` from the most recent ``act`` call.
    """

    last_logits: np.ndarray | None = None
    last_values: np.ndarray | None = None

    def reset(self, envs: Sequence[QuestionEnv], seeds: Sequence[int]) -> None:
        raise NotImplementedError

    def act(self, obs: np.ndarray, active: np.ndarray) -> list[Action]:
        raise NotImplementedError


class EpisodicPolicy(Policy):
    """Adapter for policies written one episode at a time."""

    def reset(self, envs, seeds):
        self.envs = list(envs)
        self.states = [self.begin(env, np.random.default_rng(episode_stream(s, 1)))
                       for env, s in zip(envs, seeds)]

    def act(self, obs, active):
        return [self.decide(self.states[k], self.envs[k], obs[k]) if active[k] else None
                for k in range(len(self.envs))]

    def begin(self, env: QuestionEnv, rng: np.random.Generator) -> Any:
        return {"rng": rng}

    def decide(self, state, env: QuestionEnv, obs: np.ndarray) -> Action:
        raise NotImplementedError


class FixedLabelPolicy(EpisodicPolicy):
    """Labels ``answer`` after ``wait`` interactions with ``interact_with``."""

    def __init__(self, answer: int = 0, wait: int = 0, interact_with: int = 0):
        self.answer = answer
        self.wait = wait
        self.interact_with = interact_with

    def begin(self, env, rng):
        return {"t": 0}

    def decide(self, state, env, obs):
        state["t"] += 1
        if state["t"] > self.wait:
            return Label(self.answer)
        return Interact(self.interact_with)


class NeverLabelPolicy(EpisodicPolicy):
    def decide(self, state, env, obs):
        return Interact(0)


class RandomizedInteractions(Policy):
    """Keep the inner policy's labels, replace its interactions with uniform ones.

    Each episode draws replacements from its own seeded stream, so the
    wrapper never perturbs the inner policy's own random numbers.
    """

    def __init__(self, inner: Policy):
        self.inner = inner

    def reset(self, envs, seeds):
        self.envs = list(envs)
        self.rngs = [np.random.default_rng(episode_stream(s, 2)) for s in seeds]
        self.inner.reset(envs, seeds)

    def act(self, obs, active):
        actions = self.inner.act(obs, active)
        self.last_logits = self.inner.last_logits
        self.last_values = self.inner.last_values
        out = []
        for k, a in enumerate(actions):
            if active[k] and isinstance(a, Interact):
                a = Interact(int(self.rngs[k].integers(self.envs[k].n_interact)))
            out.append(a)
        return out


def randomize_interactions(inner_policy: Policy) -> Policy:
    return RandomizedInteractions(inner_policy)


def _record(env: QuestionEnv, seed, actions, label, correct, termination) -> EpisodeRecord:
    cfg = env.config
    return EpisodeRecord(
        seed=int(seed), env=env.name, instance=env.instance_descriptor(),
        actions=list(actions), label=label, correct=bool(correct), steps=env.steps,
        sim_seconds=env.steps * cfg.control_repeat * cfg.physics_dt,
        termination=termination.value)


def run_episodes(envs: Sequence[QuestionEnv], policy: Policy, seeds: Sequence[int],
                 keep_trajectories: bool = False, pool=None):
    """Run one episode per environment in lockstep until all have terminated.

    Returns ``(records, trajectories)``; trajectories is ``None`` unless
    requested. ``pool`` (a ``concurrent.futures`` executor) steps the
    environments concurrently; results do not depend on it.
    """
    n = len(envs)
    obs = np.stack([env.reset(s) for env, s in zip(envs, seeds)])
    policy.reset(envs, seeds)
    active = np.ones(n, dtype=bool)
    acts = [[] for _ in range(n)]
    records: list[EpisodeRecord | None] = [None] * n
    if keep_trajectories:
        t_obs = [[] for _ in range(n)]
        t_rew = [[] for _ in range(n)]
        t_logit = [[] for _ in range(n)]
        t_val = [[] for _ in range(n)]

    while active.any():
        actions = policy.act(obs, active)
        idx = np.flatnonzero(active)
        if keep_trajectories:
            for k in idx:
                t_obs[k].append(obs[k].copy())
                if policy.last_logits is not None:
                    t_logit[k].append(policy.last_logits[k].copy())
                    t_val[k].append(float(policy.last_values[k]))

        def _step(k):
            return envs[k].step(actions[k])

        results = list(pool.map(_step, idx)) if pool is not None else [_step(k) for k in idx]
        for k, res in zip(idx, results):
            a = actions[k]
            acts[k].append(envs[k].encode(a))
            obs[k] = res.observation
            if keep_trajectories:
                t_rew[k].append(res.reward)
            if res.done:
                active[k] = False
                label = a.answer if isinstance(a, Label) else None
                correct = label is not None and label == envs[k].answer()
                records[k] = _record(envs[k], seeds[k], acts[k], label, correct,
                                     res.termination)

    trajectories = None
    if keep_trajectories:
        trajectories = []
        for k in range(n):
            trajectories.append(Trajectory(
                observations=np.array(t_obs[k]), actions=np.array(acts[k]),
                rewards=np.array(t_rew[k], dtype=np.float64),
                logits=np.array(t_logit[k]) if t_logit[k] else None,
                values=np.array(t_val[k]) if t_val[k] else None))
    return records, trajectories


def run_episode(env: QuestionEnv, policy: Policy, seed: int, keep_trajectory: bool = True):
    records, trajs = run_episodes([env], policy, [seed], keep_trajectories=keep_trajectory)
    return records[0], (trajs[0] if trajs else None)


def write_records(records: Sequence[EpisodeRecord], fh) -> None:
    for r in records:
        fh.write(r.to_json() + "\n")


def read_records(fh) -> list[EpisodeRecord]:
    return [EpisodeRecord.from_dict(json.loads(line)) for line in fh if line.strip()]
