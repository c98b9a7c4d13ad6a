import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from reachguard import diffcore as dc
from reachguard.envs import CartpoleMove, DoubleIntegrator
from reachguard.errors import DataError, UsageError
from reachguard.worldmodel import (MODEL_LOG_STD_MAX, MODEL_LOG_STD_MIN, AnalyticModel,
                                   EnsembleModel, ReplayBuffer, branched_rollout, member_nll)


def collect(env, n, rng, policy=None):
    buf = ReplayBuffer(n, env.spec.obs_dim, env.spec.action_dim)
    state, obs = env.reset(rng)
    while len(buf) < n:
        a = rng.uniform(-1, 1, env.spec.action_dim) if policy is None else policy(obs)
        res = env.step(state, a, rng)
        buf.add(obs, a, res.reward, res.observation, res.h_scalar, res.violated, res.violated)
        state, obs = res.next_state, res.observation
        if res.done:
            state, obs = env.reset(rng)
    return buf


def test_buffer_fifo_and_sampling(rng):
    buf = ReplayBuffer(5, 1, 1)
    for i in range(8):
        buf.add([i], [0], i, [i + 1], -1, 0, False)
    assert len(buf) == 5
    assert sorted(buf.all()["rew"]) == [3, 4, 5, 6, 7]
    idx = buf.sample_indices(5, rng)
    assert len(set(idx.tolist())) == 5
    with pytest.raises(DataError):
        ReplayBuffer(3, 1, 1).sample(2, rng)
    big = ReplayBuffer(4, 1, 1)
    big.add_batch(np.arange(10)[:, None], np.zeros((10, 1)), np.arange(10), np.zeros((10, 1)),
                  np.zeros(10), np.zeros(10), np.zeros(10, dtype=bool))
    assert sorted(big.all()["rew"]) == [6, 7, 8, 9]


def _flat_ensemble(rng, obs_dim=2, act_dim=1):
    m = EnsembleModel(obs_dim, act_dim, rng, n_members=3, hidden=(8,))
    w, b = m.params.layers[-1]
    w[...] = 0.0
    b[...] = 0.0
    return m


def test_nll_at_mean_unit_std(rng):
    m = _flat_ensemble(rng)
    d = m.out_dim
    x = rng.normal(size=(3, 10, 3))
    y = np.zeros((3, 10, d))
    np.testing.assert_allclose(m.nll(x, y), d / 2 * math.log(2 * math.pi), atol=1e-12)
    # doubling the std with a perfect mean strictly increases the NLL
    base = m.nll(x, y)
    m.params.layers[-1][1][:, d:2 * d] = math.log(2.0)
    assert np.all(m.nll(x, y) > base)


def test_nll_matches_density_product(rng):
    m = EnsembleModel(2, 1, rng, n_members=3, hidden=(16, 16))
    x = rng.normal(size=(3, 25, 3))
    y = rng.normal(size=(3, 25, 3))
    out = dc.mlp_forward(m.params, x)
    d = m.out_dim
    mean = out[..., :d]
    log_std = np.clip(out[..., d:2 * d], MODEL_LOG_STD_MIN, MODEL_LOG_STD_MAX)
    std = np.exp(log_std)
    dens = np.prod(np.exp(-0.5 * ((y - mean) / std) ** 2) / (std * math.sqrt(2 * math.pi)), axis=-1)
    expected = np.mean(-np.log(dens), axis=-1)
    np.testing.assert_allclose(m.nll(x, y), expected, atol=1e-10)


def test_member_nll_rejects_nan(rng):
    m = EnsembleModel(2, 1, rng, n_members=2, hidden=(8,))
    batch = {"obs": np.array([[np.nan, 0.0]]), "act": np.zeros((1, 1)), "rew": np.zeros(1),
             "obs2": np.zeros((1, 2))}
    with pytest.raises(DataError):
        member_nll(m.members[0], m, batch)


def test_members_distinct_and_seed_determinism():
    a = EnsembleModel(2, 1, np.random.default_rng(3), n_members=4, hidden=(8,))
    b = EnsembleModel(2, 1, np.random.default_rng(3), n_members=4, hidden=(8,))
    w0 = a.params.layers[0][0]
    for i in range(1, 4):
        assert not np.allclose(w0[0], w0[i])
    buf = collect(DoubleIntegrator(), 300, np.random.default_rng(0))
    a.train(buf, 20, batch_size=32)
    b.train(buf, 20, batch_size=32)
    for (wa, ba), (wb, bb) in zip(a.params.layers, b.params.layers):
        np.testing.assert_array_equal(wa, wb)
        np.testing.assert_array_equal(ba, bb)
    with pytest.raises(UsageError):
        EnsembleModel(2, 1, np.random.default_rng(0), n_members=1)


def test_train_refuses_below_warmup(rng):
    m = EnsembleModel(2, 1, rng, n_members=2, hidden=(8,))
    buf = collect(DoubleIntegrator(), 50, rng)
    with pytest.raises(UsageError, match="warm-up"):
        m.train(buf, 5, warmup=100)


def test_normalized_targets_are_standardized(rng):
    m = EnsembleModel(4, 1, rng, n_members=2, hidden=(8,))
    buf = collect(CartpoleMove(), 2000, rng)
    m.refresh_normalization(buf)
    y = m.out_norm(m._targets(buf.all()))
    np.testing.assert_allclose(y.mean(axis=0), 0, atol=0.05)
    np.testing.assert_allclose(y.std(axis=0), 1, atol=0.05)
    assert np.all(m.in_norm.std >= 1e-8)


def test_linear_system_fit_error_decreases(rng):
    A = np.array([[0.9, 0.2], [-0.1, 0.8]])
    B = np.array([[0.5], [0.3]])
    obs = rng.normal(size=(2000, 2))
    act = rng.uniform(-1, 1, (2000, 1))
    buf = ReplayBuffer(2000, 2, 1)
    buf.add_batch(obs, act, obs[:, 0], obs @ A.T + act @ B.T, np.zeros(2000), np.zeros(2000),
                  np.zeros(2000, dtype=bool))
    m = EnsembleModel(2, 1, rng, n_members=3, hidden=(32, 32))
    errs = []
    probe_o, probe_a = rng.normal(size=(200, 2)), rng.uniform(-1, 1, (200, 1))
    truth = probe_o @ A.T + probe_a @ B.T
    m.refresh_normalization(buf)
    for _ in range(20):
        m.train(buf, 5, batch_size=128)
        errs.append(np.mean(np.abs(m.member_means(probe_o, probe_a) - truth), axis=(1, 2)))
    errs = np.array(errs)
    for i in range(3):
        assert np.mean(np.diff(errs[:, i]) < 0) > 0.5
        assert errs[-1, i] < errs[0, i]


@pytest.mark.slow
def test_holdout_beats_untrained_member_on_cartpole():
    rng = np.random.default_rng(0)
    buf = collect(CartpoleMove(), 10_000, rng)
    m = EnsembleModel(4, 1, rng, n_members=5)
    untrained = EnsembleModel(4, 1, np.random.default_rng(1), n_members=5)
    res = m.train(buf, 1000)
    untrained.in_norm, untrained.out_norm = m.in_norm, m.out_norm
    hold = buf.sample(1000, rng)
    x = m.in_norm(np.concatenate([hold["obs"], hold["act"]], axis=1))
    y = m.out_norm(m._targets(hold))
    base = untrained.nll(np.broadcast_to(x, (5,) + x.shape), np.broadcast_to(y, (5,) + y.shape))
    assert np.all(res["holdout"] <= base)


def test_predict_requires_training_and_samples_members_uniformly(rng):
    m = EnsembleModel(2, 1, rng, n_members=5, hidden=(8,))
    with pytest.raises(UsageError):
        m.predict(np.zeros((1, 2)), np.zeros((1, 1)), rng)
    m.trained = True
    _, _, _, member = m.predict(np.zeros((10_000, 2)), np.zeros((10_000, 1)), rng)
    counts = np.bincount(member, minlength=5)
    sigma = math.sqrt(10_000 * 0.2 * 0.8)
    assert np.all(np.abs(counts - 2000) <= 3 * sigma)


def test_predict_deterministic_at_std_floor(rng):
    m = _flat_ensemble(rng)
    m.params.layers[-1][1][:, :m.out_dim] = 0.3
    m.params.layers[-1][1][:, m.out_dim:] = -100.0
    m.trained = True
    obs = rng.normal(size=(20, 2))
    act = rng.uniform(-1, 1, (20, 1))
    a = m.predict(obs, act, np.random.default_rng(1))
    b = m.predict(obs, act, np.random.default_rng(2))
    np.testing.assert_allclose(a[0], b[0], atol=1e-3)
    np.testing.assert_allclose(a[0], obs + 0.3, atol=1e-3)


def test_double_integrator_one_step_accuracy_and_disagreement():
    rng = np.random.default_rng(0)
    env = DoubleIntegrator(terminate_on_violation=False)
    obs = np.column_stack([rng.uniform(-1, 1, 3000), rng.uniform(-1, 1, 3000)])
    act = rng.uniform(-1, 1, (3000, 1))
    nxt, rew = env.model_step(obs, act)
    buf = ReplayBuffer(3000, 2, 1)
    buf.add_batch(obs, act, rew, nxt, env.h_from_obs(nxt), np.zeros(3000), np.zeros(3000, dtype=bool))
    m = EnsembleModel(2, 1, rng, n_members=5, hidden=(64, 64))
    m.train(buf, 1500, batch_size=256)
    po = np.column_stack([rng.uniform(-0.9, 0.9, 500), rng.uniform(-0.9, 0.9, 500)])
    pa = rng.uniform(-1, 1, (500, 1))
    truth, _ = env.model_step(po, pa)
    pred = m.member_means(po, pa).mean(axis=0)
    rel = np.linalg.norm(pred - truth, axis=1).mean() / np.linalg.norm(truth - po, axis=1).mean()
    assert rel < 0.10
    far = po * 8.0
    inside = m.member_means(po, pa).std(axis=0).mean()
    outside = m.member_means(far, pa).std(axis=0).mean()
    assert outside > inside


def test_branched_rollout_horizon_one_and_no_truncation():
    env = DoubleIntegrator()
    model = AnalyticModel(env)
    start = np.column_stack([np.linspace(-0.5, 0.0, 7), np.zeros(7)])
    zero = lambda o: np.zeros((len(o), 1))
    cols, dropped = branched_rollout(model, zero, start, 1, None, env.h_from_obs)
    assert len(cols["obs"]) == 7 and dropped == 0
    cols, _ = branched_rollout(model, zero, start, 10, None, env.h_from_obs)
    assert len(cols["obs"]) == 70
    assert np.all(cols["violated"] == (cols["h"] > 0))


def test_branched_rollout_truncates_on_violation():
    env = DoubleIntegrator()
    start = np.array([[0.95, 1.0], [-0.5, 0.0]])
    cols, _ = branched_rollout(AnalyticModel(env), lambda o: np.ones((len(o), 1)), start, 10,
                               None, env.h_from_obs)
    assert cols["violated"].sum() == 1
    assert len(cols["obs"]) == 1 + 10
    np.testing.assert_array_equal(cols["done"] > 0, cols["violated"])


def test_analytic_rollout_matches_environment():
    env = CartpoleMove(terminate_on_violation=False)
    rng = np.random.default_rng(0)
    state, obs = env.reset(rng)
    acts = rng.uniform(-1, 1, (10, 1))
    it = iter(acts)
    cols, _ = branched_rollout(AnalyticModel(env), lambda o: next(it)[None], obs[None], 10, None,
                               env.h_from_obs, terminate_on_violation=False)
    for t in range(10):
        res = env.step(state, acts[t])
        np.testing.assert_allclose(cols["obs2"][t], res.observation, atol=1e-6)
        assert cols["rew"][t] == pytest.approx(res.reward, abs=1e-6)
        assert cols["h"][t] == pytest.approx(res.h_scalar, abs=1e-6)
        state = res.next_state


def test_non_finite_branches_dropped():
    class Exploding:
        trained = True

        def predict(self, obs, act, rng=None):
            nxt = obs + 0.01
            nxt[0] = np.inf
            return nxt, np.zeros(len(obs)), None, np.zeros(len(obs), dtype=int)

    env = DoubleIntegrator()
    start = np.zeros((4, 2))
    cols, dropped = branched_rollout(Exploding(), lambda o: np.zeros((len(o), 1)), start, 3, None,
                                     env.h_from_obs)
    assert dropped >= 1
    assert np.isfinite(cols["obs2"]).all()
    with pytest.raises(UsageError):
        branched_rollout(Exploding(), None, start, 0, None, env.h_from_obs)


@given(st.integers(1, 12), st.integers(0, 1000))
def test_rollout_flags_consistent(horizon, seed):
    env = DoubleIntegrator()
    rng = np.random.default_rng(seed)
    start = np.column_stack([rng.uniform(-1, 1, 5), rng.uniform(-1, 1, 5)])
    cols, _ = branched_rollout(AnalyticModel(env), lambda o: rng.uniform(-1, 1, (len(o), 1)), start,
                               horizon, rng, env.h_from_obs)
    assert np.all(cols["violated"] == (cols["h"] > 0))
    assert len(cols["obs"]) <= 5 * horizon
