"""Towers: count the hidden rigid bodies in a five-block tower.

Blocks are bolted into contiguous segments that look identical to a loose
stack until something knocks them over. Two actuators are available: direct
horizontal forces on a chosen block, or a kinematic fist whose planar velocity
the agent sets.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envproto import EpisodeConfig, QuestionEnv
from .physx import (BLOCK_EDGE, PHYSICS_DT, Fist, TowerWorld, set_fist_velocity,
                    step_tower)

N_BLOCKS = 5
FORCE_NEWTONS = 30.0
FIST_SPEED = 2.0
TIMEOUT_STEPS = 26
CONTROL_DT = 0.1
# fist hovers at mid-tower height, offset sideways so a pass fans the blocks out
FIST_START = (-2.0, 0.5, 2.5)
DIRECTIONS = np.array([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0],
                       [0.0, 1.0, 0.0], [0.0, -1.0, 0.0]])


def canonical_tower() -> np.ndarray:
    z = 0.5 * BLOCK_EDGE + BLOCK_EDGE * np.arange(N_BLOCKS)
    return np.column_stack([np.zeros(N_BLOCKS), np.zeros(N_BLOCKS), z])


@dataclass(frozen=True)
class TowerPartition:
    segments: tuple[tuple[int, ...], ...]

    @property
    def k(self) -> int:
        return len(self.segments)

    @classmethod
    def from_cuts(cls, cuts, n: int = N_BLOCKS) -> "TowerPartition":
        """Cut after each block index in ``cuts`` (0-based, < n-1)."""
        segs, start = [], 0
        for c in sorted(cuts):
            segs.append(tuple(range(start, c + 1)))
            start = c + 1
        segs.append(tuple(range(start, n)))
        return cls(tuple(segs))


def sample_partition(rng: np.random.Generator) -> TowerPartition:
    """Uniform body count, then a uniform contiguous composition with that count."""
    k = int(rng.integers(1, N_BLOCKS + 1))
    cuts = rng.choice(N_BLOCKS - 1, size=k - 1, replace=False)
    return TowerPartition.from_cuts(cuts)


def control_schedule(control_dt: float, physics_dt: float = PHYSICS_DT) -> tuple[int, float]:
    """Substep count and substep length realising one control step.

    Control steps that are not a multiple of the physics step are split evenly;
    a control step shorter than the physics step becomes one shorter substep.
    """
    repeat = max(1, int(round(control_dt / physics_dt)))
    return repeat, control_dt / repeat


@dataclass
class TowersConfig:
    actuator: str = "direct"
    control_dt: float = CONTROL_DT
    physics_dt: float = PHYSICS_DT
    timeout_steps: int = TIMEOUT_STEPS
    force_newtons: float = FORCE_NEWTONS
    fist_speed: float = FIST_SPEED
    fist_start: tuple[float, float, float] = FIST_START

    def __post_init__(self):
        if self.actuator not in ("direct", "fist"):
            raise ValueError(f"unknown actuator {self.actuator!r}")


class TowersEnv(QuestionEnv):
    """Direct: 20 pushes (block * 4 + direction) + 5 labels. Fist: 4 velocities + 5 labels.

    ``Label(j)`` answers ``j + 1`` bodies.
    """

    n_labels = N_BLOCKS

    def __init__(self, config: TowersConfig | None = None, **overrides):
        self.tconfig = config or TowersConfig(**overrides)
        repeat, sub_dt = control_schedule(self.tconfig.control_dt, self.tconfig.physics_dt)
        super().__init__(EpisodeConfig(timeout_steps=self.tconfig.timeout_steps,
                                       control_repeat=repeat, physics_dt=sub_dt))
        self.fist_mode = self.tconfig.actuator == "fist"
        self.n_interact = 4 if self.fist_mode else 4 * N_BLOCKS
        self.name = f"towers-{self.tconfig.actuator}"
        self.partition: TowerPartition | None = None
        self.world: TowerWorld | None = None
        self._forced: TowerPartition | None = None

    @property
    def obs_dim(self) -> int:
        return 3 * N_BLOCKS + (2 if self.fist_mode else 0)

    def force_instance(self, partition: TowerPartition | None) -> None:
        self._forced = partition

    def _sample_instance(self, rng):
        part = sample_partition(rng)
        if self._forced is not None:
            part = self._forced
        self.partition = part
        fist = Fist(np.array(self.tconfig.fist_start, dtype=np.float64)) if self.fist_mode else None
        self.world = TowerWorld.from_blocks(canonical_tower(), part.segments, fist=fist,
                                            physics_dt=self.config.physics_dt)

    def _interact(self, index):
        w = self.world
        n_sub = self.config.control_repeat
        if self.fist_mode:
            set_fist_velocity(w, self.tconfig.fist_speed * DIRECTIONS[index])
            step_tower(w, None, n_sub=n_sub)
        else:
            block, direction = divmod(index, 4)
            body = int(w.block_body[block])
            step_tower(w, {body: self.tconfig.force_newtons * DIRECTIONS[direction]},
                       n_sub=n_sub)

    def observe(self):
        obs = self.world.block_positions().ravel()
        if self.fist_mode:
            obs = np.concatenate([obs, self.world.fist.position[:2]])
        return obs

    def answer(self):
        return self.partition.k - 1

    def body_count(self) -> int:
        return self.partition.k

    def instance_descriptor(self):
        return {"k": self.partition.k,
                "segments": [list(s) for s in self.partition.segments],
                "control_dt": self.tconfig.control_dt}


def cluster_count(positions, threshold: float = 1.05 * BLOCK_EDGE) -> int:
    """Single-linkage cluster count of block centers at ``threshold``."""
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    n = pos.shape[0]
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    d = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
    for i in range(n):
        for j in range(i + 1, n):
            if d[i, j] <= threshold:
                parent[find(i)] = find(j)
    return len({find(i) for i in range(n)})


def scripted_fist_sweep(env: TowersEnv, seed, drive_steps: int = 10,
                        wait_steps: int = 16) -> int:
    """Drive the fist +x, stop it, let things settle; return the cluster count."""
    env.reset(seed)
    w = env.world
    n_sub = env.config.control_repeat
    set_fist_velocity(w, env.tconfig.fist_speed * DIRECTIONS[0])
    step_tower(w, None, n_sub=n_sub * drive_steps)
    set_fist_velocity(w, np.zeros(3))
    step_tower(w, None, n_sub=n_sub * wait_steps)
    return cluster_count(w.block_positions())
