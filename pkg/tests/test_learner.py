import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from metatrust.envs import CorruptionScheme, Env, get_spec
from metatrust.errors import ConfigError, PreconditionError
from metatrust.learner import (
    Learner,
    ParamLayout,
    Policy,
    PPOConfig,
    RolloutState,
    Trajectory,
    collect_rollout,
    compute_gae,
    forward_policy_value,
    make_batch,
    ppo_loss_and_grad,
    ppo_update,
    td_variance_weights,
)

from oracles import finite_difference_grad, grad_mismatch, random_problem, return_to_go


def bare_trajectory(rewards, values, dones):
    n = len(rewards)
    r = np.asarray(rewards, dtype=float)
    return Trajectory(
        obs=np.zeros((n, 1)), actions=np.zeros((n, 1)), clean_rewards=r, rewards=r,
        dones=np.asarray(dones, dtype=float), values=np.asarray(values, dtype=float), logp=np.zeros(n),
    )


# ---------------------------------------------------------------- forward


def test_zero_network_outputs_zero():
    layout = ParamLayout(2, (3,), 1)
    pol = Policy(layout, np.zeros(layout.size))
    mean, log_std, value = forward_policy_value(pol, [0.3, -2.0])
    assert mean.tolist() == [0.0] and value == 0.0 and log_std.tolist() == [0.0]


def test_hand_computed_forward():
    # one hidden unit: h = tanh(1*s0 + 0*s1 + 0), mean = 2h + 0.5, value = -h + 1
    layout = ParamLayout(2, (1,), 1)
    flat = np.zeros(layout.size)
    s = layout.slices
    flat[s["W0"]] = [1.0, 0.0]
    flat[s["Wm"]] = [2.0]
    flat[s["bm"]] = [0.5]
    flat[s["wv"]] = [-1.0]
    flat[s["bv"]] = [1.0]
    flat[s["log_std"]] = [-0.7]
    mean, log_std, value = forward_policy_value(Policy(layout, flat), [1.0, 0.0])
    h = math.tanh(1.0)
    assert mean[0] == pytest.approx(2 * h + 0.5, abs=1e-14)
    assert value == pytest.approx(1 - h, abs=1e-14)
    assert log_std[0] == -0.7


def test_value_independent_of_log_std(rng):
    pol = Policy.create(2, 1, rng=rng)
    v1 = forward_policy_value(pol, [0.1, 0.2])[2]
    pol.flat[pol.layout.slices["log_std"]] = 1.7
    assert forward_policy_value(pol, [0.1, 0.2])[2] == v1


def test_dimension_mismatch():
    pol = Policy.create(2, 1)
    with pytest.raises(ConfigError):
        forward_policy_value(pol, [1.0, 2.0, 3.0])


def test_random_params_finite(rng):
    for _ in range(20):
        pol = Policy.create(3, 2, hidden=(32, 32), rng=rng)
        out = forward_policy_value(pol, rng.normal(size=3) * 100)
        assert np.all(np.isfinite(out[0])) and math.isfinite(out[2])


# ---------------------------------------------------------------- rollout


def test_single_deterministic_step():
    spec = get_spec("collapse_valley")
    layout = ParamLayout(1, (2,), 1)
    flat = np.zeros(layout.size)
    flat[layout.slices["bm"]] = [0.5]
    pol = Policy(layout, flat)
    rs = RolloutState(Env(spec, np.random.default_rng(0)))
    traj = collect_rollout(rs, pol, 1, CorruptionScheme.off(), np.random.default_rng(1), np.random.default_rng(2),
                           deterministic=True)
    z = (0.0 - 0.8) / 0.05
    expected = 3 * math.exp(-z * z) - 0.1 * 0.8 - 0.01 * 0.25
    assert traj.clean_rewards[0] == pytest.approx(expected, abs=1e-14)
    assert traj.actions[0, 0] == 0.5
    assert rs.env.state[0] == pytest.approx(0.015)


def test_rollout_length_and_no_corruption(rng):
    spec = get_spec("pointmass1d")
    pol = Policy.create(2, 1, rng=rng)
    rs = RolloutState(Env(spec, np.random.default_rng(3)))
    scheme = CorruptionScheme.stationary(0.0, 10.0)
    traj = collect_rollout(rs, pol, 130, scheme, np.random.default_rng(4), np.random.default_rng(5))
    assert len(traj) == 130 and traj.values.shape == (131,)
    assert np.array_equal(traj.rewards, traj.clean_rewards)
    # horizon 50 -> episodes end at steps 50, 100
    assert np.flatnonzero(traj.dones).tolist() == [49, 99]
    assert len(traj.episode_returns) == 2


def test_rollout_records_corruption(rng):
    spec = get_spec("pointmass1d")
    pol = Policy.create(2, 1, rng=rng)
    rs = RolloutState(Env(spec, np.random.default_rng(3)))
    traj = collect_rollout(rs, pol, 200, CorruptionScheme.stationary(1.0, 10.0), rng, np.random.default_rng(9))
    off = traj.rewards - traj.clean_rewards
    assert np.all(np.abs(off) <= 10.0) and np.any(off != 0)
    np.testing.assert_allclose(off, traj.offsets, atol=1e-12)


# ---------------------------------------------------------------- GAE


def test_gae_degenerate_single_step():
    t = compute_gae(bare_trajectory([1.0], [0.0, 0.0], [1.0]))
    assert t.deltas.tolist() == [1.0] and t.advantages.tolist() == [1.0]


def test_terminal_mask_drops_bootstrap():
    t = compute_gae(bare_trajectory([1.0, 2.0], [0.5, 0.25, 9.0], [1.0, 0.0]), gamma=0.9, lam=0.5)
    assert t.deltas[0] == pytest.approx(1.0 - 0.5)
    assert t.deltas[1] == pytest.approx(2.0 + 0.9 * 9.0 - 0.25)


def test_gae_requires_bootstrap_value():
    with pytest.raises(PreconditionError):
        compute_gae(bare_trajectory([1.0, 2.0], [0.0, 0.0], [0, 0]))


@given(st.integers(1, 40), st.floats(0.5, 1.0), st.integers(0, 2**31))
def test_lambda_zero_gives_deltas(n, gamma, seed):
    r = np.random.default_rng(seed)
    t = compute_gae(bare_trajectory(r.normal(size=n), r.normal(size=n + 1), r.random(n) < 0.2), gamma, 0.0)
    np.testing.assert_allclose(t.advantages, t.deltas, rtol=0, atol=1e-9)
    np.testing.assert_allclose(t.returns, t.advantages + t.values[:-1], atol=1e-12)


@given(st.integers(1, 40), st.integers(0, 2**31))
def test_lambda_one_is_return_to_go(n, seed):
    r = np.random.default_rng(seed)
    rewards = r.normal(size=n)
    t = compute_gae(bare_trajectory(rewards, np.zeros(n + 1), np.zeros(n)), 1.0, 1.0)
    np.testing.assert_allclose(t.advantages, return_to_go(rewards), rtol=0, atol=1e-9)


# ---------------------------------------------------------------- weights


def test_equal_deltas_unit_weights():
    assert td_variance_weights([2.0] * 7).tolist() == [1.0] * 7


def test_outlier_weights_oracle():
    d = np.array([0.0, 0.0, 10.0])
    m = 10.0 / 3
    raw = 1.0 / (1.0 + np.abs(d - m))
    expected = raw * 3 / raw.sum()
    w = td_variance_weights(d, 1.0)
    np.testing.assert_allclose(w, expected, rtol=1e-12)
    assert w[2] < w[0]


def test_infinite_sigma_disables():
    assert td_variance_weights([0.0, 5.0, -3.0], math.inf).tolist() == [1.0, 1.0, 1.0]
    w = td_variance_weights([0.0, 5.0, -3.0], 1e12)
    np.testing.assert_allclose(w, 1.0, atol=1e-9)


def test_weights_reject_empty():
    with pytest.raises(PreconditionError):
        td_variance_weights([])


@given(st.lists(st.floats(-1e4, 1e4), min_size=1, max_size=100), st.floats(0.01, 100))
def test_weights_normalized_and_ordered(deltas, sigma):
    d = np.asarray(deltas)
    w = td_variance_weights(d, sigma)
    assert np.all(w >= 0)
    assert w.mean() == pytest.approx(1.0, abs=1e-9)
    dev = np.abs(d - d.mean())
    order = np.argsort(dev, kind="stable")
    assert np.all(np.diff(w[order]) <= 1e-12)


# ---------------------------------------------------------------- PPO


def test_gradient_check_small_nets(rng):
    for clip_value in (False, True):
        for _ in range(10):
            layout, flat, batch, cfg = random_problem(rng, clip_value=clip_value)
            _, g, _ = ppo_loss_and_grad(layout, flat, batch, cfg)
            assert grad_mismatch(g, finite_difference_grad(layout, flat, batch, cfg)) <= 1.0


def test_smallest_net_gradient(rng):
    # one input, one hidden unit, one action: 7 parameters, the smallest shared-trunk layout
    layout, flat, batch, cfg = random_problem(rng, max_params=7)
    _, g, _ = ppo_loss_and_grad(layout, flat, batch, cfg)
    assert layout.size <= 7
    assert grad_mismatch(g, finite_difference_grad(layout, flat, batch, cfg)) <= 1.0


def test_clipped_surrogate_uses_clipped_ratio():
    # ratio 1.5, advantage > 0, clip 0.2: surrogate is 1.2 * A and the policy gradient vanishes
    layout = ParamLayout(1, (1,), 1)
    flat = np.zeros(layout.size)
    from metatrust.learner import Batch

    batch = Batch(
        obs=np.zeros((1, 1)), actions=np.zeros((1, 1)), logp_old=np.array([-0.5 * math.log(2 * math.pi) - math.log(1.5)]),
        advantages=np.array([2.0]), returns=np.array([0.0]), values_old=np.array([0.0]), weights=np.array([1.0]),
    )
    cfg = PPOConfig(ent_coef=0.0)
    loss, grad, stats = ppo_loss_and_grad(layout, flat, batch, cfg)
    assert stats["policy_loss"] == pytest.approx(-1.2 * 2.0)
    assert np.allclose(grad[layout.slices["bm"]], 0.0)
    assert stats["clip_frac"] == 1.0


def _trained_setup(seed=0):
    rng = np.random.default_rng(seed)
    spec = get_spec("pointmass1d")
    pol = Policy.create(2, 1, hidden=(8, 8), rng=rng)
    rs = RolloutState(Env(spec, np.random.default_rng(seed + 1)))
    traj = collect_rollout(rs, pol, 128, CorruptionScheme.stationary(0.5, 10.0), np.random.default_rng(seed + 2),
                           np.random.default_rng(seed + 3))
    compute_gae(traj)
    return pol, traj


def test_zero_lr_is_identity():
    pol, traj = _trained_setup()
    before = pol.flat.copy()
    learner = Learner(pol, PPOConfig(minibatch=32))
    stats = ppo_update(learner, traj, td_variance_weights(traj.deltas), 0.0, np.random.default_rng(0))
    assert np.array_equal(before, pol.flat)
    assert stats["skipped"] == 0 and math.isfinite(stats["grad_norm"])


def test_update_changes_params_and_tracks_norms():
    pol, traj = _trained_setup()
    before = pol.flat.copy()
    learner = Learner(pol, PPOConfig(minibatch=32))
    stats = ppo_update(learner, traj, np.ones(len(traj)), 0.01, np.random.default_rng(0))
    assert not np.array_equal(before, pol.flat)
    assert len(learner.grad_norms) == 10  # 4 epochs x 4 minibatches, last 10 kept
    assert stats["grad_norm_var"] >= 0
    assert np.all(np.isfinite(pol.flat))


def test_update_is_deterministic():
    results = []
    for _ in range(2):
        pol, traj = _trained_setup(5)
        ppo_update(Learner(pol, PPOConfig(minibatch=32)), traj, td_variance_weights(traj.deltas), 0.05,
                   np.random.default_rng(11))
        results.append(pol.flat.tobytes())
    assert results[0] == results[1]


def test_log_std_clamped():
    pol, traj = _trained_setup()
    learner = Learner(pol, PPOConfig(minibatch=32, ent_coef=1e6))
    ppo_update(learner, traj, np.ones(len(traj)), 1.0, np.random.default_rng(0))
    ls = pol.flat[pol.layout.slices["log_std"]]
    assert np.all(ls <= 2.0) and np.all(ls >= -5.0)


def test_nonfinite_loss_skipped():
    pol, traj = _trained_setup()
    traj.returns = traj.returns.copy()
    traj.returns[:] = np.inf
    learner = Learner(pol, PPOConfig(minibatch=32))
    before = pol.flat.copy()
    stats = ppo_update(learner, traj, np.ones(len(traj)), 0.01, np.random.default_rng(0))
    assert stats["skipped"] == 16 and learner.incidents == 16
    assert np.array_equal(before, pol.flat)


def test_advantages_normalized_in_batch():
    _, traj = _trained_setup()
    b = make_batch(traj, np.ones(len(traj)))
    assert b.advantages.mean() == pytest.approx(0.0, abs=1e-12)
    assert b.advantages.std() == pytest.approx(1.0, abs=1e-9)


def test_make_batch_needs_gae():
    pol, traj = _trained_setup()
    traj.advantages = None
    with pytest.raises(PreconditionError):
        make_batch(traj, np.ones(len(traj)))


@pytest.mark.parametrize("kw", [{"gamma": 0.0}, {"lam": 1.5}, {"clip_eps": 1.0}, {"epochs": 0}, {"sigma_ref": 0}])
def test_ppo_config_validation(kw):
    with pytest.raises(ConfigError):
        PPOConfig(**kw).validate()
