"""Deterministic toy physics for the two environments.

Two world variants share this module:

* :class:`VerticalWorld` holds point masses that only move along z above a
  ground plane at z = 0 (Which is Heavier).
* :class:`TowerWorld` holds translation-only rigid bodies assembled from unit
  cube "primitive blocks" (Towers). Blocks collide as spheres of radius half an
  edge, bodies never rotate, and an optional kinematic fist sphere pushes them.

The substep loops run in a compiled kernel when available (see ``_core``).
Worlds are stepped in place; every step function also returns the world.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ._core import get_kernels

GRAVITY = 10.0
PHYSICS_DT = 0.025
BLOCK_EDGE = 1.0
BLOCK_RADIUS = 0.5 * BLOCK_EDGE
BLOCK_MASS = 1.0
DAMPING = 0.5
FIST_RADIUS = 1.0
CONTACT_ITERS = 4


class CorruptWorldError(FloatingPointError):
    """Raised when a force or the world state stops being finite."""


@dataclass
class VerticalBlock:
    mass: float
    z: float = 0.0
    vz: float = 0.0


@dataclass
class Body3D:
    """One rigid body: a set of primitive blocks bolted at fixed offsets."""

    id: int
    position: np.ndarray
    velocity: np.ndarray
    mass: float
    member_blocks: tuple[int, ...]
    offsets: np.ndarray


@dataclass
class Fist:
    position: np.ndarray
    commanded_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    radius: float = FIST_RADIUS


@dataclass
class VerticalWorld:
    mass: np.ndarray
    z: np.ndarray
    vz: np.ndarray
    physics_dt: float = PHYSICS_DT
    gravity: float = GRAVITY
    substeps: int = 0

    @classmethod
    def at_rest(cls, masses: Sequence[float], **kw) -> "VerticalWorld":
        m = np.array(masses, dtype=np.float64)
        if np.any(m <= 0):
            raise ValueError("block masses must be positive")
        return cls(mass=m, z=np.zeros_like(m), vz=np.zeros_like(m), **kw)

    @property
    def sim_time(self) -> float:
        return self.substeps * self.physics_dt

    @property
    def blocks(self) -> list[VerticalBlock]:
        return [VerticalBlock(float(m), float(z), float(v))
                for m, z, v in zip(self.mass, self.z, self.vz)]

    def copy(self) -> "VerticalWorld":
        return VerticalWorld(self.mass.copy(), self.z.copy(), self.vz.copy(),
                             self.physics_dt, self.gravity, self.substeps)


@dataclass
class TowerWorld:
    """Compound bodies in structure-of-arrays form.

    ``pos``/``vel`` are per body (center of mass); ``block_body`` maps each
    primitive block to its body and ``block_offset`` holds its fixed offset
    from that body's center of mass.
    """

    pos: np.ndarray
    vel: np.ndarray
    mass: np.ndarray
    block_body: np.ndarray
    block_offset: np.ndarray
    fist: Fist | None = None
    physics_dt: float = PHYSICS_DT
    gravity: float = GRAVITY
    damping: float = DAMPING
    block_radius: float = BLOCK_RADIUS
    contact_iters: int = CONTACT_ITERS
    substeps: int = 0
    _fist_buf: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.inv_mass = 1.0 / self.mass
        if self._fist_buf is None:
            self._fist_buf = np.zeros(6)
            if self.fist is not None:
                self._fist_buf[:3] = self.fist.position
                self._fist_buf[3:] = self.fist.commanded_velocity
        if self.fist is not None:
            # the Fist object shares storage with the kernel buffer
            self.fist.position = self._fist_buf[:3]
            self.fist.commanded_velocity = self._fist_buf[3:]

    @classmethod
    def from_blocks(cls, block_centers, groups: Sequence[Sequence[int]],
                    block_mass: float = BLOCK_MASS, fist: Fist | None = None,
                    **kw) -> "TowerWorld":
        """Bolt ``block_centers`` into one body per entry of ``groups``."""
        centers = np.asarray(block_centers, dtype=np.float64)
        n = centers.shape[0]
        members = sorted(i for g in groups for i in g)
        if members != list(range(n)) or any(len(g) == 0 for g in groups):
            raise ValueError("groups must partition the blocks into non-empty sets")
        nb = len(groups)
        pos = np.zeros((nb, 3))
        mass = np.zeros(nb)
        block_body = np.zeros(n, dtype=np.int_)
        offset = np.zeros((n, 3))
        for b, g in enumerate(groups):
            idx = list(g)
            pos[b] = centers[idx].mean(axis=0)
            mass[b] = block_mass * len(idx)
            block_body[idx] = b
            offset[idx] = centers[idx] - pos[b]
        return cls(pos=pos, vel=np.zeros((nb, 3)), mass=mass, block_body=block_body,
                   block_offset=offset, fist=fist, **kw)

    @property
    def n_bodies(self) -> int:
        return self.pos.shape[0]

    @property
    def sim_time(self) -> float:
        return self.substeps * self.physics_dt

    @property
    def fist_radius(self) -> float:
        return self.fist.radius if self.fist is not None else 0.0

    def block_positions(self) -> np.ndarray:
        return self.pos[self.block_body] + self.block_offset

    @property
    def bodies(self) -> list[Body3D]:
        out = []
        for b in range(self.n_bodies):
            members = tuple(int(i) for i in np.flatnonzero(self.block_body == b))
            out.append(Body3D(b, self.pos[b].copy(), self.vel[b].copy(),
                              float(self.mass[b]), members,
                              self.block_offset[list(members)].copy()))
        return out

    def copy(self) -> "TowerWorld":
        fist = None
        if self.fist is not None:
            fist = Fist(self.fist.position.copy(), self.fist.commanded_velocity.copy(),
                        self.fist.radius)
        return TowerWorld(self.pos.copy(), self.vel.copy(), self.mass.copy(),
                          self.block_body.copy(), self.block_offset.copy(), fist,
                          self.physics_dt, self.gravity, self.damping,
                          self.block_radius, self.contact_iters, self.substeps)


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise CorruptWorldError("non-finite value in world state or forces")


def step_vertical(world: VerticalWorld, applied_force, dt: float | None = None,
                  n_sub: int = 1, backend: str | None = None) -> VerticalWorld:
    """Semi-implicit Euler for vertical blocks with a hard ground clamp.

    ``applied_force`` holds one upward force per block (N, >= 0) and is held
    constant over the ``n_sub`` substeps.
    """
    dt = world.physics_dt if dt is None else dt
    force = np.ascontiguousarray(applied_force, dtype=np.float64)
    _check_finite(force, world.z, world.vz)
    if force.shape != world.z.shape:
        raise ValueError("need one force per block")
    if np.any(force < 0):
        raise ValueError("vertical forces must be non-negative")
    if dt <= 0:
        raise ValueError("dt must be positive")
    get_kernels(backend).vertical_substeps(world.z, world.vz, world.mass, force,
                                           float(dt), int(n_sub), world.gravity)
    world.substeps += n_sub
    _check_finite(world.z, world.vz)
    return world


def _force_array(world: TowerWorld, external_forces) -> np.ndarray:
    force = np.zeros((world.n_bodies, 3))
    if external_forces is None:
        return force
    if isinstance(external_forces, Mapping):
        for b, f in external_forces.items():
            force[b] += f
    else:
        force[:] = external_forces
    return force


def step_tower(world: TowerWorld, external_forces=None, dt: float | None = None,
               n_sub: int = 1, backend: str | None = None) -> TowerWorld:
    """Advance the tower world; ``external_forces`` maps body id to a force vector.

    Each substep damps and integrates body velocities under gravity and the
    external forces, moves the fist kinematically, then resolves contacts.
    """
    dt = world.physics_dt if dt is None else dt
    force = _force_array(world, external_forces)
    _check_finite(force, world.pos, world.vel)
    get_kernels(backend).tower_substeps(
        world.pos, world.vel, world.inv_mass, world.block_body, world.block_offset,
        force, world._fist_buf, world.fist_radius, float(dt), int(n_sub),
        world.gravity, world.damping, world.block_radius, world.contact_iters)
    world.substeps += n_sub
    _check_finite(world.pos, world.vel)
    return world


def resolve_contacts(world: TowerWorld, backend: str | None = None) -> TowerWorld:
    """Sphere-approximated contact resolution without integrating.

    A few mass-weighted relaxation passes are followed by one pass where the
    lower block of every pair acts as immovable, which lets resting stacks
    settle exactly. The fist is always immovable; restitution is zero.
    """
    get_kernels(backend).resolve_contacts(
        world.pos, world.vel, world.inv_mass, world.block_body, world.block_offset,
        world._fist_buf, world.fist_radius, world.block_radius, world.contact_iters)
    return world


def set_fist_velocity(world: TowerWorld, v) -> TowerWorld:
    if world.fist is None:
        raise ValueError("world has no fist")
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (3,) or v[2] != 0.0:
        raise ValueError("fist velocity must be a planar 3-vector with z == 0")
    world.fist.commanded_velocity[:] = v
    return world


def trajectory_frame(world: TowerWorld) -> list[dict]:
    """One NDJSON-ready record per body at the current time."""
    t = world.sim_time
    return [{"t": t, "body_id": b, "x": float(p[0]), "y": float(p[1]), "z": float(p[2])}
            for b, p in enumerate(world.pos)]


def write_trajectory(frames, fh) -> None:
    for frame in frames:
        for rec in frame:
            fh.write(json.dumps(rec) + "\n")
