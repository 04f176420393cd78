import io

import numpy as np
import pytest
from hypothesis import given, strategies as st

from physprobe.envproto import (EpisodeConfig, EpisodicPolicy, FixedLabelPolicy, Interact,
                                Label, NeverLabelPolicy, ProtocolError, Termination,
                                derive_seed, randomize_interactions, read_records,
                                run_episode, run_episodes, write_records)
from physprobe.heavier import HeavierEnv
from physprobe.towers import TowersEnv, canonical_tower


class ScriptPolicy(EpisodicPolicy):
    """Plays a fixed list of action ids."""

    def __init__(self, ids):
        self.ids = list(ids)

    def begin(self, env, rng):
        return {"t": 0}

    def decide(self, state, env, obs):
        a = env.decode(self.ids[state["t"]])
        state["t"] += 1
        return a


def test_config_validation():
    with pytest.raises(ValueError):
        EpisodeConfig(timeout_steps=0)
    with pytest.raises(ValueError):
        EpisodeConfig(timeout_steps=5, control_repeat=0)
    assert EpisodeConfig(26).control_dt == pytest.approx(0.1)


def test_reset_observations():
    env = HeavierEnv()
    assert np.array_equal(env.reset(1), np.zeros(4))
    t = TowersEnv()
    assert np.array_equal(t.reset(1).reshape(5, 3), canonical_tower())


def test_same_seed_same_instance():
    a, b = HeavierEnv(beta=3), HeavierEnv(beta=3)
    a.reset(99)
    b.reset(99)
    assert a.instance_descriptor() == b.instance_descriptor()


def test_label_rewards():
    env = HeavierEnv()
    env.reset(5)
    res = env.step(Label(env.answer()))
    assert (res.reward, res.done, res.termination) == (1.0, True, Termination.LABELED)
    env.reset(5)
    res = env.step(Label((env.answer() + 1) % 4))
    assert res.reward == -1.0 and res.done
    with pytest.raises(ProtocolError):
        env.step(Label(0))


def test_heavier_timeout_at_100():
    env = HeavierEnv()
    env.reset(0)
    for t in range(99):
        res = env.step(Interact(t % 4))
        assert not res.done and res.reward == 0.0
    res = env.step(Interact(0))
    assert res.done and res.reward == -1.0 and res.termination == Termination.TIMEOUT


def test_encode_decode_roundtrip():
    for env in (HeavierEnv(), TowersEnv(actuator="direct"), TowersEnv(actuator="fist")):
        for a in range(env.n_actions):
            assert env.encode(env.decode(a)) == a
        with pytest.raises(ValueError):
            env.decode(env.n_actions)
        with pytest.raises(ValueError):
            env.encode(Interact(env.n_interact))


@given(st.integers(0, 2), st.lists(st.integers(0, 24), min_size=1, max_size=40),
       st.integers(0, 2**32))
def test_single_terminal_transition(which, ids, seed):
    env = [HeavierEnv(), TowersEnv(actuator="direct"), TowersEnv(actuator="fist")][which]
    ids = [i % env.n_actions for i in ids]
    env.reset(seed)
    dones = 0
    for a in ids:
        res = env.step(env.decode(a))
        assert (res.reward != 0.0) == res.done
        assert res.done == (res.termination != Termination.NONE)
        if res.done:
            dones += 1
            assert res.reward in (1.0, -1.0)
            break
    assert dones <= 1
    assert 1 <= env.steps <= env.config.timeout_steps


def test_run_episode_examples():
    env = HeavierEnv()
    rec, traj = run_episode(env, FixedLabelPolicy(0), 3)
    assert rec.steps == 1 and len(traj) == 1 and traj.rewards[0] in (1.0, -1.0)
    rec, traj = run_episode(env, NeverLabelPolicy(), 3)
    assert rec.steps == 100 and rec.termination == "timeout" and traj.rewards[-1] == -1.0
    assert rec.label is None and not rec.correct
    assert rec.sim_seconds == pytest.approx(100 * 4 * 0.025)


def test_sim_seconds_invariant():
    env = TowersEnv(actuator="fist")
    rec, _ = run_episode(env, FixedLabelPolicy(2, wait=7), 11)
    assert rec.steps == 8
    assert rec.sim_seconds == pytest.approx(rec.steps * env.config.control_repeat * 0.025)


def test_seeded_replay_identical_records():
    pol = ScriptPolicy([0, 1, 2, 3, 0, 5])
    a = run_episode(HeavierEnv(beta=3), pol, 42)[0]
    b = run_episode(HeavierEnv(beta=3), pol, 42)[0]
    assert a.to_json() == b.to_json()


def test_batched_matches_single():
    seeds = [derive_seed(7, i) for i in range(6)]
    envs = [HeavierEnv() for _ in seeds]
    pol = FixedLabelPolicy(1, wait=3, interact_with=2)
    recs, _ = run_episodes(envs, pol, seeds)
    for s, r in zip(seeds, recs):
        assert run_episode(HeavierEnv(), pol, s)[0].to_json() == r.to_json()


def test_record_roundtrip_and_fields():
    recs, _ = run_episodes([HeavierEnv(), HeavierEnv()], FixedLabelPolicy(2, wait=2), [1, 2])
    recs[0].extra["randomized"] = True
    buf = io.StringIO()
    write_records(recs, buf)
    first = buf.getvalue().splitlines()[0]
    for key in ("seed", "env", "instance", "actions", "label", "correct", "steps",
                "sim_seconds", "termination"):
        assert f'"{key}"' in first
    back = read_records(io.StringIO(buf.getvalue()))
    assert [r.to_json() for r in back] == [r.to_json() for r in recs]


def test_derive_seed_is_stable_and_distinct():
    seeds = {derive_seed(0, i) for i in range(1000)}
    assert len(seeds) == 1000
    assert derive_seed(3, 4) == derive_seed(3, 4) != derive_seed(4, 3)


# -- randomized wrapper ---------------------------------------------------

@given(st.lists(st.integers(0, 7), min_size=1, max_size=30), st.integers(0, 2**31))
def test_wrapper_passes_labels_and_keeps_termination(ids, seed):
    env = HeavierEnv()
    inner = ScriptPolicy(ids + [4] * 100)
    plain = run_episode(HeavierEnv(), ScriptPolicy(ids + [4] * 100), seed)[0]
    wrapped = run_episode(env, randomize_interactions(inner), seed)[0]
    assert wrapped.steps == plain.steps
    assert wrapped.label == plain.label
    assert wrapped.actions[-1] == plain.actions[-1]


def test_wrapper_label_passthrough():
    w = randomize_interactions(FixedLabelPolicy(2))
    env = HeavierEnv()
    w.reset([env], [0])
    assert w.act(np.zeros((1, 4)), np.array([True])) == [Label(2)]


def test_wrapper_interaction_uniformity():
    n_eps, per = 100, 99
    counts = np.zeros(4)
    envs = [HeavierEnv() for _ in range(n_eps)]
    recs, _ = run_episodes(envs, randomize_interactions(NeverLabelPolicy()),
                           [derive_seed(1, i) for i in range(n_eps)])
    for r in recs:
        counts += np.bincount(r.actions[:per], minlength=4)
    n = counts.sum()
    assert n >= 9_900
    sigma = np.sqrt(n * 0.25 * 0.75)
    assert np.all(np.abs(counts - n / 4) < 3 * sigma)
