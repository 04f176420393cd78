"""Which is Heavier: four vertically constrained blocks, find the heaviest.

Masses are redrawn every episode and have nothing to do with appearance, so
the only way to learn them is to poke the blocks and watch them rise.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envproto import EpisodeConfig, QuestionEnv
from .physx import GRAVITY, PHYSICS_DT, VerticalWorld, step_vertical

N_BLOCKS = 4
MASS_MIN = 0.5
MASS_SPAN = 1.5
FORCE_NEWTONS = 20.0
POKE_NOISE_SIGMA = 0.05
POKE_NOISE_CLIP = (0.8, 1.2)
TIMEOUT_STEPS = 100


@dataclass
class MassAssignment:
    masses: np.ndarray
    heavy_index_sampled: int
    u_values: np.ndarray
    beta: float

    @property
    def mass_gap(self) -> float:
        u = np.sort(self.u_values)
        return float(u[-1] - u[-2])

    @property
    def answer(self) -> int:
        return heaviest(self.masses)


def heaviest(masses) -> int:
    """Index of the heaviest block; exact ties go to the lowest index."""
    return int(np.argmax(masses))


def u_to_mass(u):
    return MASS_MIN + MASS_SPAN * np.asarray(u, dtype=np.float64)


def masses_from_uniforms(beta: float, heavy_index: int, uniforms) -> MassAssignment:
    """Inverse-CDF transform: U**(1/b) ~ Beta(b, 1) for the heavy block and
    1 - U**(1/b) ~ Beta(1, b) for the light ones."""
    if beta < 1:
        raise ValueError("beta must be >= 1")
    uni = np.asarray(uniforms, dtype=np.float64)
    root = uni ** (1.0 / beta)
    u = 1.0 - root
    u[heavy_index] = root[heavy_index]
    return MassAssignment(u_to_mass(u), int(heavy_index), u, float(beta))


def sample_masses(beta: float, rng: np.random.Generator) -> MassAssignment:
    heavy = int(rng.integers(N_BLOCKS))
    return masses_from_uniforms(beta, heavy, rng.random(N_BLOCKS))


def sample_gap(beta: float, rng: np.random.Generator, size: int) -> np.ndarray:
    """Vectorised mass gaps of ``size`` independent instances."""
    heavy = rng.integers(N_BLOCKS, size=size)
    root = rng.random((size, N_BLOCKS)) ** (1.0 / beta)
    u = 1.0 - root
    rows = np.arange(size)
    u[rows, heavy] = root[rows, heavy]
    u.sort(axis=1)
    return u[:, -1] - u[:, -2]


@dataclass
class HeavierConfig:
    beta: float = 10.0
    force_newtons: float = FORCE_NEWTONS
    poke_noise_sigma: float = POKE_NOISE_SIGMA
    timeout_steps: int = TIMEOUT_STEPS
    control_repeat: int = 4


class HeavierEnv(QuestionEnv):
    """Eight actions: poke block 0..3, or label block 0..3 as the heaviest."""

    name = "heavier"
    n_interact = N_BLOCKS
    n_labels = N_BLOCKS

    def __init__(self, config: HeavierConfig | None = None, **overrides):
        self.hconfig = config or HeavierConfig(**overrides)
        super().__init__(EpisodeConfig(timeout_steps=self.hconfig.timeout_steps,
                                       control_repeat=self.hconfig.control_repeat,
                                       physics_dt=PHYSICS_DT))
        self.instance: MassAssignment | None = None
        self.world: VerticalWorld | None = None
        self._forced: MassAssignment | None = None
        self.last_poke_gain = None

    @property
    def obs_dim(self) -> int:
        return N_BLOCKS

    def force_instance(self, instance: MassAssignment | None) -> None:
        """Use ``instance`` for every following reset instead of sampling."""
        self._forced = instance

    def _sample_instance(self, rng):
        inst = sample_masses(self.hconfig.beta, rng)
        if self._forced is not None:
            inst = self._forced
        self.instance = inst
        self.world = VerticalWorld.at_rest(inst.masses, physics_dt=self.config.physics_dt)

    def poke_gain(self) -> float:
        sigma = self.hconfig.poke_noise_sigma
        if sigma <= 0:
            return 1.0
        lo, hi = POKE_NOISE_CLIP
        return float(np.clip(self.rng.normal(1.0, sigma), lo, hi))

    def _interact(self, index):
        gain = self.poke_gain()
        self.last_poke_gain = gain
        force = np.zeros(N_BLOCKS)
        force[index] = self.hconfig.force_newtons * gain
        step_vertical(self.world, force, n_sub=self.config.control_repeat)

    def observe(self):
        return self.world.z.copy()

    def answer(self):
        return heaviest(self.instance.masses)

    def instance_descriptor(self):
        inst = self.instance
        return {"beta": inst.beta, "masses": inst.masses.tolist(),
                "u": inst.u_values.tolist(), "heavy_index": inst.heavy_index_sampled,
                "mass_gap": inst.mass_gap}


def apex_after_push(z_after: float, repeat: int, dt: float = PHYSICS_DT,
                    gravity: float = GRAVITY) -> float:
    """Ballistic apex implied by a block's height after one push from rest.

    A push of constant net acceleration ``a`` held for ``repeat`` semi-implicit
    substeps leaves the block at ``a dt^2 r(r+1)/2`` moving at ``a r dt``.
    """
    if z_after <= 0.0:
        return 0.0
    a = z_after / (dt * dt * repeat * (repeat + 1) / 2.0)
    v = a * repeat * dt
    return z_after + v * v / (2.0 * gravity)


def expected_apex(mass: float, force: float = FORCE_NEWTONS, repeat: int = 4,
                  dt: float = PHYSICS_DT, gravity: float = GRAVITY) -> float:
    """Noise-free ``apex_after_push`` for a block of ``mass`` poked with ``force``."""
    a = force / mass - gravity
    if a <= 0:
        return 0.0
    z = a * dt * dt * repeat * (repeat + 1) / 2.0
    return apex_after_push(z, repeat, dt, gravity)
