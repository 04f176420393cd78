"""Scripted baselines that see Which is Heavier as a latent bandit.

Each block is an arm. Poking a block at rest and reading its height one
control step later yields a noisy, monotone-decreasing function of its mass
(the implied ballistic apex), so the heaviest block is the arm with the
lowest mean apex.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .envproto import EpisodicPolicy, Interact, Label
from .heavier import (FORCE_NEWTONS, N_BLOCKS, POKE_NOISE_CLIP, POKE_NOISE_SIGMA,
                      HeavierEnv, apex_after_push, expected_apex, sample_gap, u_to_mass)
from .physx import VerticalWorld, step_vertical

# Pooled apex noise of pokes on blocks with u ~ U(0.5, 1), the range where
# the two heaviest blocks compete. Regenerate with calibrate_apex_sigma().
APEX_SIGMA = 0.005880946787355949


@dataclass
class GapDistribution:
    beta: float
    gaps: np.ndarray  # sorted

    def cdf(self, x) -> np.ndarray:
        return np.searchsorted(self.gaps, np.asarray(x, dtype=np.float64),
                               side="right") / self.gaps.size

    def table(self, xs) -> list[tuple[float, float]]:
        return [(float(x), float(c)) for x, c in zip(xs, self.cdf(xs))]


def gap_cdf(beta: float, n_samples: int, rng: np.random.Generator) -> GapDistribution:
    """Empirical distribution of the top-two gap of ``n_samples`` instances."""
    if n_samples < 10_000:
        raise ValueError("n_samples must be at least 1e4")
    return GapDistribution(float(beta), np.sort(sample_gap(beta, rng, n_samples)))


def write_gap_csv(dists, fh, xs=None) -> None:
    xs = np.linspace(0.0, 1.0, 101) if xs is None else xs
    fh.write("beta,x,cdf\n")
    for d in dists:
        for x, c in d.table(xs):
            fh.write(f"{d.beta!r},{x!r},{c!r}\n")


def calibrate_apex_sigma(n: int = 10_000, seed: int = 0, repeat: int = 4,
                         sigma: float = POKE_NOISE_SIGMA) -> float:
    """Std of the simulated apex around its noise-free value over ``n`` pokes."""
    rng = np.random.default_rng(seed)
    lo, hi = POKE_NOISE_CLIP
    resid = np.empty(n)
    for k in range(n):
        m = float(u_to_mass(rng.uniform(0.5, 1.0)))
        gain = float(np.clip(rng.normal(1.0, sigma), lo, hi))
        w = VerticalWorld.at_rest([m])
        step_vertical(w, [FORCE_NEWTONS * gain], n_sub=repeat)
        resid[k] = apex_after_push(float(w.z[0]), repeat, w.physics_dt) - expected_apex(m, repeat=repeat)
    return float(resid.std())


@dataclass
class ArmEstimate:
    block: int
    pokes: int
    mean_apex: float
    radius: float


class _ApexReader(EpisodicPolicy):
    """Bookkeeping shared by the scripted policies: which block was just poked
    from rest, and what apex the current observation implies for it."""

    def begin(self, env: HeavierEnv, rng):
        return {"pending": None, "t": 0, "samples": [[] for _ in range(N_BLOCKS)],
                "repeat": env.config.control_repeat, "dt": env.config.physics_dt}

    def _collect(self, state, obs):
        if state["pending"] is not None:
            block, from_rest = state["pending"]
            if from_rest:
                state["samples"][block].append(
                    apex_after_push(float(obs[block]), state["repeat"], state["dt"]))
            state["pending"] = None
        state["t"] += 1

    def _poke(self, state, obs, block):
        state["pending"] = (block, obs[block] == 0.0)
        return Interact(block)


class ScanPolicy(_ApexReader):
    """Poke blocks in index order and answer as soon as one looks heavy.

    A block looks heavy when its apex is below ``threshold`` (default: the
    noise-free apex of a u = 0.5 block). If three blocks look light the fourth
    is named without poking it. With ``early_stop=False`` every block is
    poked once and the lowest apex is named.
    """

    def __init__(self, threshold: float | None = None, early_stop: bool = True):
        self.threshold = expected_apex(float(u_to_mass(0.5))) if threshold is None else threshold
        self.early_stop = early_stop

    def decide(self, state, env, obs):
        self._collect(state, obs)
        samples = state["samples"]
        tested = [b for b in range(N_BLOCKS) if samples[b]]
        if self.early_stop:
            for b in tested:
                if samples[b][-1] < self.threshold:
                    return Label(b)
            if len(tested) == N_BLOCKS - 1:
                return Label(N_BLOCKS - 1)
        elif len(tested) == N_BLOCKS:
            return Label(min(range(N_BLOCKS), key=lambda b: samples[b][-1]))
        nxt = len(tested) if state["pending"] is None else len(tested) + 1
        return self._poke(state, obs, min(nxt, N_BLOCKS - 1))


def scan_policy(**kw) -> ScanPolicy:
    return ScanPolicy(**kw)


class SuccessiveElimination(_ApexReader):
    """Round-robin pokes over surviving blocks with confidence-interval elimination.

    radius(n) = c * sigma * sqrt(ln(1/delta) / n); a block is dropped once its
    apex lower bound exceeds another block's upper bound (it is surely
    lighter). Labels when one block survives, or names the current best one
    step before the timeout.
    """

    def __init__(self, delta: float = 0.05, c: float = 1.0, sigma: float = APEX_SIGMA):
        if not 0.0 < delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        self.delta = delta
        self.c = c
        self.sigma = sigma

    def radius(self, n: int) -> float:
        if n == 0:
            return math.inf
        return self.c * self.sigma * math.sqrt(math.log(1.0 / self.delta) / n)

    def estimates(self, state) -> list[ArmEstimate]:
        out = []
        for b, s in enumerate(state["samples"]):
            mean = float(np.mean(s)) if s else 0.0
            out.append(ArmEstimate(b, len(s), mean, self.radius(len(s))))
        return out

    def begin(self, env, rng):
        state = super().begin(env, rng)
        state["alive"] = list(range(N_BLOCKS))
        state["last_poked"] = N_BLOCKS - 1
        state["timeout"] = env.config.timeout_steps
        return state

    def decide(self, state, env, obs):
        self._collect(state, obs)
        est = self.estimates(state)
        alive = state["alive"]
        lower = {b: est[b].mean_apex - est[b].radius for b in alive}
        upper = {b: est[b].mean_apex + est[b].radius for b in alive}
        best_upper = min(upper.values())
        alive[:] = [b for b in alive if not lower[b] > best_upper]
        if len(alive) == 1:
            return Label(alive[0])
        if state["t"] >= state["timeout"]:
            sampled = [b for b in alive if est[b].pokes] or alive
            return Label(min(sampled, key=lambda b: (est[b].mean_apex, b)))
        # round-robin over survivors, starting after the last block poked, preferring
        # blocks at rest (a block still in the air gives no clean apex reading)
        last = state["last_poked"]
        order = sorted(alive, key=lambda b: (b - last - 1) % N_BLOCKS)
        for b in order:
            if obs[b] == 0.0:
                state["last_poked"] = b
                return self._poke(state, obs, b)
        resting = [b for b in range(N_BLOCKS) if obs[b] == 0.0 and b not in alive]
        if resting:
            state["pending"] = None
            return Interact(resting[0])
        b = order[0]
        state["last_poked"] = b
        return self._poke(state, obs, b)


def successive_elimination_policy(delta: float = 0.05, **kw) -> SuccessiveElimination:
    return SuccessiveElimination(delta, **kw)
