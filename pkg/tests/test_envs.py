import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from umbrl.envs import (
    MASS_TASKS,
    REACH_HOME_Q,
    REACH_TARGETS,
    REACH_TASKS,
    MassEnv,
    PerturbationConfig,
    PerturbedEnv,
    ReachEnv,
    domain_of,
    dump_trajectory_csv,
    env_spec,
    make_env,
    make_sparsity_variant,
    random_policy_return,
    wrap_perturbed,
)


def _actions(n, seed=0, act_dim=2):
    return np.random.default_rng(seed).uniform(-1, 1, size=(n, act_dim))


def _rollout(env, actions):
    obs = [env.reset()]
    rewards = []
    for a in actions:
        res = env.step(a)
        obs.append(res.observation)
        rewards.append(res.reward)
    return np.array(obs), np.array(rewards)


# -- hand-integrated oracles ----------------------------------------------------------


def mass_oracle(pos, actions, morph=1.0):
    x, y = float(pos[0]), float(pos[1])
    vx = vy = 0.0
    out = []
    for ax, ay in actions:
        vx = vx + 0.1 * (float(ax) / morph - vx)
        vy = vy + 0.1 * (float(ay) / morph - vy)
        x = math.fmod(x + 0.1 * vx + 1.0, 2.0)
        x = (x + 2.0 if x < 0 else x) - 1.0
        y = math.fmod(y + 0.1 * vy + 1.0, 2.0)
        y = (y + 2.0 if y < 0 else y) - 1.0
        out.append([math.sin(math.pi * x), math.cos(math.pi * x), math.sin(math.pi * y), math.cos(math.pi * y), vx, vy])
    return np.array(out)


def reach_oracle(q, actions):
    q1, q2 = float(q[0]), float(q[1])
    out = []
    for a1, a2 in actions:
        q1 += 0.1 * float(a1)
        q2 += 0.1 * float(a2)
        tx = 0.6 * math.cos(q1) + 0.5 * math.cos(q1 + q2)
        ty = 0.6 * math.sin(q1) + 0.5 * math.sin(q1 + q2)
        out.append([math.cos(q1), math.sin(q1), math.cos(q2), math.sin(q2), tx, ty])
    return np.array(out)


def test_mass_matches_hand_integration():
    probe = MassEnv("run_right", seed=3)
    probe.reset()
    acts = _actions(200, seed=1)
    obs, _ = _rollout(MassEnv("run_right", seed=3), acts)
    np.testing.assert_allclose(obs[1:], mass_oracle(probe.pos, acts), atol=1e-10, rtol=0)


def test_mass_wraps_around_arena():
    env = MassEnv("run_right", seed=0)
    env.reset()
    for _ in range(200):
        env.step([1.0, 0.0])
    assert np.all(env.pos >= -1.0) and np.all(env.pos < 1.0)
    # velocity saturates at gain/friction
    assert env.vel[0] == pytest.approx(1.0, abs=1e-8)


def test_reach_matches_hand_integration():
    env = ReachEnv("reach_top_left", seed=5)
    env.reset()
    q0 = env.q.copy()
    acts = _actions(150, seed=2)
    obs, _ = _rollout(ReachEnv("reach_top_left", seed=5), acts)
    np.testing.assert_allclose(obs[1:], reach_oracle(q0, acts), atol=1e-10, rtol=0)


def test_zero_action_from_rest_gives_zero_velocity_reward():
    for task in ("run_right", "run_left"):
        env = MassEnv(task, seed=0)
        env.reset()
        for _ in range(20):
            assert env.step([0.0, 0.0]).reward == 0.0


def test_reach_inside_target_pays_one():
    for task, target in REACH_TARGETS.items():
        env = ReachEnv(task, seed=0)
        env.reset()
        assert env.task_reward() == 0.0
        # place the arm so the tip sits on the target through inverse kinematics
        tx, ty = target
        c2 = (tx * tx + ty * ty - 0.6**2 - 0.5**2) / (2 * 0.6 * 0.5)
        q2 = math.acos(c2)
        q1 = math.atan2(ty, tx) - math.atan2(0.5 * math.sin(q2), 0.6 + 0.5 * math.cos(q2))
        env.q = np.array([q1, q2])
        np.testing.assert_allclose(env.tip(), target, atol=1e-12)
        assert env.task_reward() == 1.0


def test_rewards_are_bounded():
    for task in list(MASS_TASKS) + list(REACH_TASKS):
        env = make_env(task, seed=1, episode_length=100)
        _, rewards = _rollout(env, _actions(100, seed=4))
        assert np.all(rewards >= -1.0) and np.all(rewards <= 1.0)
        if task in REACH_TASKS:
            assert set(np.unique(rewards)) <= {0.0, 1.0}


def test_spin_and_flip_are_opposite():
    a = MassEnv("spin", seed=2)
    b = MassEnv("flip_velocity", seed=2)
    acts = _actions(50, seed=9)
    _, ra = _rollout(a, acts)
    _, rb = _rollout(b, acts)
    np.testing.assert_array_equal(ra, -rb)


def test_out_of_range_actions_are_clamped_and_counted():
    a = MassEnv("run_right", seed=0)
    b = MassEnv("run_right", seed=0)
    a.reset()
    b.reset()
    ra = a.step([3.0, -0.5])
    rb = b.step([1.0, -0.5])
    np.testing.assert_array_equal(ra.observation, rb.observation)
    assert a.clamped_actions == 1 and b.clamped_actions == 0
    a.step([0.2, 0.2])
    assert a.clamped_actions == 1


def test_episode_ends_at_length():
    env = make_env("spin", episode_length=7)
    env.reset()
    dones = [env.step([0.1, 0.1]).done for _ in range(7)]
    assert dones == [False] * 6 + [True]


def test_construction_errors():
    with pytest.raises(ValueError):
        MassEnv("reach_top_left")
    with pytest.raises(ValueError):
        MassEnv("spin", mode="eval")
    with pytest.raises(ValueError):
        env_spec("walker")
    with pytest.raises(ValueError):
        domain_of("stand")


def test_spec_fields():
    s = env_spec("reach", 200)
    assert (s.obs_dim, s.act_dim, s.episode_length) == (6, 2, 200)
    assert all(s.density(t) == "sparse" for t in REACH_TASKS)
    assert all(env_spec("mass").density(t) == "dense" for t in MASS_TASKS)
    assert s.obs_dim <= 8


# -- PT / FT and task agnosticism -----------------------------------------------------


@pytest.mark.parametrize("task", ["run_left", "reach_bottom_right"])
def test_pt_and_ft_share_observations(task):
    acts = _actions(200, seed=11)
    ft = make_env(task, mode="ft", seed=4)
    pt = make_env(task, mode="pt", seed=4)
    obs_ft, _ = _rollout(ft, acts)
    obs_pt = [pt.reset()]
    for a in acts:
        obs_pt.append(pt.step(a).observation)
    np.testing.assert_array_equal(obs_ft, np.array(obs_pt))
    assert pt.reward_reads == 0


def test_pt_reward_is_zero():
    env = make_env("run_right", mode="pt", seed=0)
    env.reset()
    rewards = [env.step([1.0, 0.0]).reward for _ in range(30)]
    assert rewards == [0.0] * 30
    assert env.reward_reads == 30


@pytest.mark.parametrize("tasks", [list(MASS_TASKS), list(REACH_TASKS)])
def test_tasks_differ_only_in_reward(tasks):
    acts = _actions(200, seed=6)
    runs = [_rollout(make_env(t, seed=8), acts) for t in tasks]
    for obs, _ in runs[1:]:
        np.testing.assert_array_equal(obs, runs[0][0])
    rewards = [r for _, r in runs]
    assert any(not np.array_equal(rewards[0], r) for r in rewards[1:])


# -- perturbations --------------------------------------------------------------------


class Recorder:
    """Wraps an env and records every action that reaches its step."""

    def __init__(self, env):
        self.inner = env
        self.seen = []
        inner_step = env.step

        def step(a):
            self.seen.append(np.array(a, dtype=np.float64))
            return inner_step(a)

        env.step = step


def test_delay_queue_zero_fills():
    env = MassEnv("run_right", seed=0)
    rec = Recorder(env)
    wrapped = wrap_perturbed(env, PerturbationConfig(delay=3))
    wrapped.reset()
    issued = [np.array([0.9, -0.4]), np.array([0.3, 0.7]), np.array([-0.8, 0.1]), np.array([0.5, 0.5]), np.array([0.2, -0.9])]
    for a in issued:
        wrapped.step(a)
    for applied in rec.seen[:3]:
        np.testing.assert_array_equal(applied, np.zeros(2))
    np.testing.assert_array_equal(rec.seen[3], issued[0])
    np.testing.assert_array_equal(rec.seen[4], issued[1])


def test_null_perturbation_is_identity():
    acts = _actions(200, seed=3)
    for task in ("spin", "reach_top_right"):
        plain = make_env(task, seed=2)
        wrapped = wrap_perturbed(make_env(task, seed=2), PerturbationConfig(), seed=99)
        obs_a, r_a = _rollout(plain, acts)
        obs_b, r_b = _rollout(wrapped, acts)
        np.testing.assert_array_equal(obs_a, obs_b)
        np.testing.assert_array_equal(r_a, r_b)


def test_repeat_sends_each_action_twice():
    env = ReachEnv("reach_top_left", seed=0)
    rec = Recorder(env)
    wrapped = wrap_perturbed(env, PerturbationConfig(repeat=2))
    wrapped.reset()
    issued = _actions(10, seed=1)
    for a in issued:
        wrapped.step(a)
    assert len(rec.seen) == 20
    for i, a in enumerate(issued):
        np.testing.assert_array_equal(rec.seen[2 * i], a)
        np.testing.assert_array_equal(rec.seen[2 * i + 1], a)
    assert env.low_level_steps == 20


def test_repeat_sums_rewards():
    env = make_env("run_right", seed=0)
    wrapped = wrap_perturbed(make_env("run_right", seed=0), PerturbationConfig(repeat=3))
    env.reset()
    wrapped.reset()
    for _ in range(5):
        expected = sum(env.step([1.0, 0.0]).reward for _ in range(3))
        assert wrapped.step([1.0, 0.0]).reward == pytest.approx(expected, abs=1e-15)


def test_noise_is_clamped():
    env = MassEnv("run_right", seed=0)
    rec = Recorder(env)
    wrapped = wrap_perturbed(env, PerturbationConfig(noise_std=5.0), seed=1)
    wrapped.reset()
    for _ in range(50):
        wrapped.step([0.9, 0.9])
    seen = np.array(rec.seen)
    assert np.all(np.abs(seen) <= 1.0)
    assert not np.all(seen == 0.9)
    assert env.clamped_actions == 0


def test_morphology_drawn_per_episode_and_jittered():
    env = MassEnv("run_right", seed=0)
    morphs = []
    inner_step = env.step

    def step(a):
        morphs.append(env.morphology)
        return inner_step(a)

    env.step = step
    cfg = PerturbationConfig(morphology_range=(1.0, 3.0), morphology_std=0.1)
    wrapped = wrap_perturbed(env, cfg, seed=4)
    episodes = []
    for _ in range(3):
        wrapped.reset()
        episodes.append(wrapped.episode_morphology)
        for _ in range(10):
            wrapped.step([0.0, 0.0])
    assert all(1.0 <= m <= 3.0 for m in episodes)
    assert len(set(episodes)) == 3
    assert len(set(morphs)) == 30


@pytest.mark.parametrize("name, delay, repeat, noise", [("easy", 3, 1, 0.1), ("medium", 6, 2, 0.3), ("hard", 9, 3, 1.0)])
def test_presets(name, delay, repeat, noise):
    for domain in ("mass", "reach"):
        cfg = PerturbationConfig.preset(name, domain)
        assert (cfg.delay, cfg.repeat, cfg.noise_std, cfg.preset) == (delay, repeat, noise, name)
        lo, hi = cfg.morphology_range
        assert 0 < lo <= hi


def test_invalid_perturbations():
    with pytest.raises(ValueError):
        PerturbationConfig(delay=-1)
    with pytest.raises(ValueError):
        PerturbationConfig(repeat=0)
    with pytest.raises(ValueError):
        PerturbationConfig(morphology_range=(2.0, 1.0))
    with pytest.raises(ValueError):
        PerturbationConfig.preset("extreme")


@pytest.mark.parametrize("task", ["run_right", "reach_bottom_left"])
def test_easy_preset_changes_trajectories(task):
    acts = _actions(200, seed=12)
    gaps = []
    for seed in range(5):
        plain = make_env(task, seed=seed)
        pert = make_env(task, seed=seed, perturbation="easy")
        assert isinstance(pert, PerturbedEnv)
        obs_a, _ = _rollout(plain, acts)
        obs_b, _ = _rollout(pert, acts)
        assert obs_a.shape == obs_b.shape
        assert pert.spec.act_dim == plain.spec.act_dim
        gaps.append(np.abs(obs_a - obs_b).mean())
    assert min(gaps) > 1e-3


# -- sparsity variants ----------------------------------------------------------------


def test_sparsity_scale_one_is_identity():
    acts = _actions(200, seed=5)
    _, r_a = _rollout(make_env("reach_top_left", seed=1), acts)
    _, r_b = _rollout(make_env("reach_top_left", seed=1, radius_scale=1.0), acts)
    env = make_sparsity_variant(make_env("reach_top_left", seed=1), 1.0)
    _, r_c = _rollout(env, acts)
    np.testing.assert_array_equal(r_a, r_b)
    np.testing.assert_array_equal(r_a, r_c)


@settings(max_examples=300, deadline=None)
@given(
    st.floats(0.05, 1.0),
    st.floats(-3.2, 3.2),
    st.floats(0.0, 3.1),
)
def test_sparser_region_is_contained(scale, q1, q2):
    sparse = make_sparsity_variant(ReachEnv("reach_top_right"), scale)
    default = ReachEnv("reach_top_right")
    sparse.q = default.q = np.array([q1, q2])
    if sparse.task_reward() == 1.0:
        assert default.task_reward() == 1.0


def test_boundary_trajectory_separates_scales():
    # sweep straight-line joint motions from home and keep one whose closest
    # approach to the target grazes the default radius
    target = np.asarray(REACH_TARGETS["reach_bottom_right"])
    chosen = None
    for angle in np.linspace(0, 2 * np.pi, 721):
        a = np.array([math.cos(angle), math.sin(angle)])
        q = np.array(REACH_HOME_Q)
        dists = []
        for _ in range(40):
            q = q + 0.1 * a
            tip = np.array(
                [0.6 * math.cos(q[0]) + 0.5 * math.cos(q[0] + q[1]), 0.6 * math.sin(q[0]) + 0.5 * math.sin(q[0] + q[1])]
            )
            dists.append(np.linalg.norm(tip - target))
        if 0.09 < min(dists) < 0.11:
            chosen = a
            break
    assert chosen is not None

    def episode_return(scale):
        env = make_env("reach_bottom_right", seed=0, episode_length=40, radius_scale=scale)
        env.reset()
        env.q = np.array(REACH_HOME_Q)
        return sum(env.step(chosen).reward for _ in range(40))

    assert episode_return(2.0) > 0
    assert episode_return(0.5) == 0


def test_sparsity_variant_errors():
    with pytest.raises(ValueError):
        make_sparsity_variant(MassEnv("spin"), 0.5)
    with pytest.raises(ValueError):
        make_sparsity_variant(ReachEnv("reach_top_left"), 0.0)


# -- helpers --------------------------------------------------------------------------


def test_random_policy_return_is_seeded():
    a = random_policy_return(make_env("run_right", episode_length=50), 3, np.random.default_rng(0))
    b = random_policy_return(make_env("run_right", episode_length=50), 3, np.random.default_rng(0))
    assert a == b


def test_trajectory_csv_round_trip(tmp_path):
    env = make_env("reach_top_left", seed=2, episode_length=30)
    acts = _actions(30, seed=1)
    obs, rewards = _rollout(env, acts)
    path = tmp_path / "traj.csv"
    dump_trajectory_csv(path, obs, acts, rewards)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:2] == ["t", "obs_0"] and rows[0][-1] == "reward"
    assert len(rows) == 31
    back = np.array([[float(v) for v in row[1:7]] for row in rows[1:]])
    np.testing.assert_array_equal(back, obs[:30])
    probe = ReachEnv("reach_top_left", seed=2)
    probe.reset()
    np.testing.assert_allclose(back[1:], reach_oracle(probe.q, acts)[:-1], atol=1e-10)
