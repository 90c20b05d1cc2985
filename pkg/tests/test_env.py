import logging

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dimm.agent import (BankConfig, BatchEnv, EnvState, FusionEnv, features, make_track,
                        rollout, simple_reward, state_dim, step_reward, uniform_policy)
from dimm.agent.env import measurement_window, signed_log
from dimm.datagen import GenConfig, gen_multi_model
from dimm.fusion import fuse_with_weights, importance_weights

L = 10
BANK = BankConfig()
vec3 = st.lists(st.floats(-1e4, 1e4), min_size=3, max_size=3).map(np.array)


@pytest.fixture(scope="module")
def traj():
    return gen_multi_model(GenConfig(length=120), 4)


def test_reward_examples():
    truth = np.zeros(3)
    fused = np.array([1.0, 0.0, 0.0])
    imm = np.array([0.0, 3.0, 0.0])
    assert step_reward(truth, fused, imm, "hierarchical") == 2.0
    assert step_reward(truth, fused, imm, "simple") == -1.0
    assert step_reward(truth, imm, imm, "hierarchical") == 0.0
    with pytest.raises(ValueError):
        step_reward(truth, fused, imm, "other")


@given(vec3, vec3, vec3)
def test_reward_identity(p, f, m):
    assert step_reward(p, f, m, "hierarchical") == simple_reward(p, f) - simple_reward(p, m)


def test_state_dim_and_flat_round_trip():
    assert state_dim(10) == 45
    rng = np.random.default_rng(0)
    v = rng.normal(size=45)
    s = EnvState.from_flat(v, 10, 2)
    assert s.L == 10 and s.n_pad == 2 and np.array_equal(s.flat(), v)
    with pytest.raises(ValueError):
        EnvState.from_flat(v[:-1], 10)


def test_window_padding_at_step_zero():
    zs = np.arange(60.0).reshape(20, 3) + 1
    w, n_pad = measurement_window(zs, 0, L)
    assert n_pad == L and not w[:L].any() and np.array_equal(w[L], zs[0])
    w, n_pad = measurement_window(zs, 3, L)
    assert n_pad == L - 3 and np.array_equal(w[L - 3:], zs[:4])
    w, n_pad = measurement_window(zs, 15, L)
    assert n_pad == 0 and np.array_equal(w, zs[5:16])


def test_reset_state(traj):
    env = FusionEnv(BANK, L)
    s = env.reset(traj)
    assert s.flat().shape == (45,)
    assert np.array_equal(s.fused_prev, traj.measurements[0])
    assert np.array_equal(s.bank_positions, np.tile(traj.measurements[0], (3, 1)))
    s2 = FusionEnv(BANK, L).reset(traj)
    assert np.array_equal(s.flat(), s2.flat())


def test_short_trajectory_rejected():
    short = gen_multi_model(GenConfig(length=L), 0)
    with pytest.raises(ValueError):
        FusionEnv(BANK, L).reset(short)
    with pytest.raises(ValueError):
        make_track(short, BANK, L)


def test_out_of_bound_action_rejected(traj):
    env = FusionEnv(BANK, L, action_bound=2.0)
    env.reset(traj)
    with pytest.raises(ValueError):
        env.step(np.full(9, 2.5))
    with pytest.raises(ValueError):
        env.step(np.full(8, 0.0))
    env2 = BatchEnv([make_track(traj, BANK, L)], L, 2.0, "hierarchical")
    idx, _, _ = env2.states()
    with pytest.raises(ValueError):
        env2.step(idx, np.full((1, 9), np.nan))


def test_step_before_reset():
    with pytest.raises(RuntimeError):
        FusionEnv(BANK, L).step(np.zeros(9))


def test_live_and_batched_envs_agree(traj):
    rng = np.random.default_rng(1)
    actions = rng.uniform(-5, 5, (len(traj), 9))
    live = FusionEnv(BANK, L)
    s = live.reset(traj)
    batch = BatchEnv([make_track(traj, BANK, L)], L, 5.0, "hierarchical")
    for k in range(len(traj)):
        idx, flat, npad = batch.states()
        assert np.allclose(flat[0], s.flat(), rtol=1e-9, atol=1e-7)
        assert npad[0] == s.n_pad
        s, r, done, info = live.step(actions[k])
        fused, rb, _, _, doneb, W = batch.step(idx, actions[k:k + 1])
        assert np.allclose(fused[0], info["fused"], rtol=1e-9, atol=1e-7)
        assert rb[0] == pytest.approx(r, abs=1e-6)
        assert done == doneb[0]
    assert done and not batch.active.any()


def test_uniform_actor_gives_mean_of_bank(traj):
    tracks = [make_track(traj, BANK, L), make_track(gen_multi_model(GenConfig(length=80), 9), BANK, L)]
    ro = rollout(uniform_policy, tracks, L, 5.0)
    for t, f, W in zip(tracks, ro.fused, ro.weights):
        assert np.allclose(f, t.bank.mean(axis=1), rtol=1e-13, atol=1e-10)
        assert np.abs(W.sum(-1) - 1).max() <= 1e-9


def test_filter_failure_ends_episode(traj, caplog, monkeypatch):
    import dimm.agent.env as env_mod
    from dimm.errors import IllConditionedError

    def broken(bank, z):
        raise IllConditionedError("singular S", model="CJ")

    env = FusionEnv(BANK, L)
    env.reset(traj)
    monkeypatch.setattr(env_mod, "bank_step", broken)
    with caplog.at_level(logging.WARNING):
        _, r, done, info = env.step(np.zeros(9))
    assert done and r == 0.0 and "failure" in info
    assert "filter failure" in caplog.text


def test_hierarchical_reward_matches_simple_difference_on_rollout(traj):
    track = make_track(traj, BANK, L)
    rng = np.random.default_rng(2)
    pol = lambda flat, npad: rng.uniform(-5, 5, (len(flat), 9))  # noqa: E731
    ro_h = rollout(pol, [track], L, 5.0, "hierarchical")
    W = ro_h.weights[0]
    fused = fuse_with_weights(W, track.bank)
    expect = simple_reward(track.truth, fused) - simple_reward(track.truth, track.imm)
    assert np.array_equal(ro_h.rewards[0], expect)


def test_features_shape_and_padding():
    rng = np.random.default_rng(3)
    zs = np.cumsum(rng.normal(0, 5, (30, 3)), axis=0) + 1000.0
    flat = np.zeros((2, 45))
    w0, p0 = measurement_window(zs, 2, L)
    w1, p1 = measurement_window(zs, 20, L)
    for i, w in enumerate((w0, w1)):
        flat[i, :33] = w.ravel()
        flat[i, 33:42] = np.tile(zs[2 if i == 0 else 20], 3)
        flat[i, 42:] = zs[0]
    f = features(flat, np.array([p0, p1]), L, 5.0)
    assert f.shape == (2, 3, L + 5)
    # padded rows repeat the first real measurement rather than the origin
    assert np.allclose(f[0, :, :p0], f[0, :, p0:p0 + 1])
    assert np.abs(f).max() < 10
    assert np.array_equal(signed_log(np.array([-np.e + 1, 0.0])), [-1.0, 0.0])


def test_bank_config_round_trip_and_ct_group():
    cfg = BankConfig(imm_group="cv_ca_ct")
    assert BankConfig.from_dict(cfg.to_dict()) == cfg
    assert [str(m.kind) for m in cfg.imm_specs(0.1)] == ["CV", "CA", "CT(0.3)"]
    with pytest.raises(ValueError):
        BankConfig.from_dict({"bogus": 1})
    with pytest.raises(ValueError):
        BankConfig(imm_group="cv")


def test_weights_in_batch_env_are_softmax_of_action(traj):
    env = BatchEnv([make_track(traj, BANK, L)], L, 5.0, "simple")
    idx, _, _ = env.states()
    a = np.linspace(-5, 5, 9)[None]
    *_, W = env.step(idx, a)
    assert np.array_equal(W, importance_weights(a))
