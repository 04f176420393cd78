import numpy as np
import pytest
from hypothesis import given, strategies as st

from physprobe.envproto import Interact
from physprobe.physx import step_vertical
from physprobe.heavier import (N_BLOCKS, HeavierEnv, MassAssignment, apex_after_push, expected_apex, heaviest,
                               masses_from_uniforms, sample_gap, sample_masses, u_to_mass)


def test_inverse_cdf_examples():
    m = masses_from_uniforms(3.0, 0, [0.5, 0.5, 0.5, 0.5])
    assert m.u_values[0] == pytest.approx(0.7937005259840998, abs=1e-12)
    assert m.u_values[1] == pytest.approx(0.2062994740159002, abs=1e-12)
    assert np.allclose(m.masses, 0.5 + 1.5 * m.u_values)


def test_beta_heavy_mean():
    beta, n = 10.0, 100_000
    rng = np.random.default_rng(0)
    heavy = rng.random(n) ** (1.0 / beta)
    mean = beta / (beta + 1)
    sd = np.sqrt(beta / ((beta + 1) ** 2 * (beta + 2)))
    assert abs(heavy.mean() - mean) < 3 * sd / np.sqrt(n)
    # and through the sampler itself
    draws = np.array([sample_masses(beta, rng) for _ in range(20_000)], dtype=object)
    u_heavy = np.array([d.u_values[d.heavy_index_sampled] for d in draws])
    assert abs(u_heavy.mean() - mean) < 3 * sd / np.sqrt(u_heavy.size)


def test_heavy_index_uniform():
    rng = np.random.default_rng(1)
    idx = np.array([sample_masses(5.0, rng).heavy_index_sampled for _ in range(8000)])
    counts = np.bincount(idx, minlength=4)
    assert np.all(np.abs(counts - 2000) < 3 * np.sqrt(8000 * 0.25 * 0.75))


def test_answer_is_realized_argmax():
    assert heaviest([0.6, 1.9, 0.7, 0.8]) == 1
    assert heaviest([1.0, 1.5, 1.5, 0.7]) == 1
    m = masses_from_uniforms(1.0, 0, [0.55, 1 - 0.60, 0.9, 0.9])
    assert m.u_values[0] == pytest.approx(0.55) and m.u_values[1] == pytest.approx(0.60)
    assert m.answer == 1


@given(st.floats(1.0, 20.0), st.integers(0, 2**32))
def test_gap_definition(beta, seed):
    m = sample_masses(beta, np.random.default_rng(seed))
    u = np.sort(m.u_values)
    assert m.mass_gap == u[3] - u[2] >= 0.0
    assert np.all((m.masses >= 0.5) & (m.masses <= 2.0))


def test_gap_cdf_ordering():
    rng = np.random.default_rng(2)
    cdfs = {b: np.mean(sample_gap(b, rng, 20_000) < x) for b in (3.0, 5.0, 10.0)
            for x in [0.1]}
    assert cdfs[3.0] > cdfs[5.0] > cdfs[10.0]


def test_eight_actions_and_blank_start():
    env = HeavierEnv()
    assert env.n_actions == 8
    obs = [env.reset(s) for s in range(20)]
    assert all(np.array_equal(o, np.zeros(N_BLOCKS)) for o in obs)


def test_max_mass_does_not_lift():
    env = HeavierEnv(poke_noise_sigma=0.0)
    env.reset(0)
    env.force_instance(masses_from_uniforms(10.0, 2, [0.5, 0.5, 1.0, 0.5]))
    env.reset(0)
    assert env.instance.masses[2] == pytest.approx(2.0)
    assert env.step(Interact(2)).observation[2] == 0.0


def test_light_block_rises_higher():
    env = HeavierEnv(poke_noise_sigma=0.0)
    u = np.array([0.2, 0.8, 0.5, 0.5])
    inst = MassAssignment(u_to_mass(u), 1, u, 1.0)
    env.force_instance(inst)
    env.reset(0)
    z_light = env.step(Interact(0)).observation[0]
    env.reset(0)
    z_heavy = env.step(Interact(1)).observation[1]
    assert apex_after_push(z_light, 4) > apex_after_push(z_heavy, 4)
    assert apex_after_push(z_light, 4) == pytest.approx(expected_apex(float(inst.masses[0])))


def test_idle_world_stays_at_rest():
    env = HeavierEnv()
    env.reset(0)
    env.world.vz[:] = 0.0
    for _ in range(10):
        step_vertical(env.world, np.zeros(4), n_sub=4)
    assert np.array_equal(env.observe(), np.zeros(4))


def test_poke_noise_clipped():
    env = HeavierEnv(poke_noise_sigma=0.5)
    env.reset(3)
    gains = [env.poke_gain() for _ in range(2000)]
    assert min(gains) >= 0.8 and max(gains) <= 1.2
    assert HeavierEnv(poke_noise_sigma=0.0).poke_gain() == 1.0


def test_forced_instance_keeps_rng_stream():
    a, b = HeavierEnv(), HeavierEnv()
    a.reset(9)
    b.force_instance(masses_from_uniforms(3.0, 1, [0.1, 0.2, 0.3, 0.4]))
    b.reset(9)
    assert a.poke_gain() == b.poke_gain()


def test_beta_below_one_rejected():
    with pytest.raises(ValueError):
        masses_from_uniforms(0.5, 0, [0.1] * 4)
