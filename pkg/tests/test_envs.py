import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from reachguard.envs import (CartpoleMove, DoubleIntegrator, EnvState, PointNav, Quadrotor2D,
                             analytic_feasible, analytic_feasible_grid, make_env, rotate_layout)
from reachguard.errors import ConfigurationError, EnvError, NumericalError, UsageError

ALL = ["cartpole_move", "quadrotor2d", "pointnav", "double_integrator"]


def test_spec_lengths():
    assert make_env("cartpole_move").spec.T_ep == 1000
    assert make_env("quadrotor2d").spec.T_ep == 360
    assert make_env("pointnav").spec.T_ep == 1000
    assert make_env("cartpole_move", T_ep=200).spec.T_ep == 200
    with pytest.raises(ConfigurationError):
        make_env("mountain_car")


def test_cartpole_reset_without_noise():
    state, obs = CartpoleMove(reset_noise=0.0).reset(np.random.default_rng(0))
    np.testing.assert_array_equal(state.vector, [0, 0, 0, 0])
    np.testing.assert_array_equal(obs, [0, 0, 0, 0])


def test_cartpole_reset_noise_bounds():
    env = CartpoleMove()
    for s in range(20):
        state, _ = env.reset(np.random.default_rng(s))
        assert np.all(np.abs(state.vector) <= 0.01)


def test_cartpole_reward_is_x_squared():
    env = CartpoleMove()
    res = env.step(EnvState(np.array([0.5, 0, 0, 0])), np.zeros(1))
    assert res.reward == pytest.approx(0.25, abs=1e-15)


def test_cartpole_constraint_components():
    comps, h = CartpoleMove().constraint(EnvState(np.array([0.95, 0, 0, 0])))
    np.testing.assert_allclose(comps, [0.05, -1.85, -0.2, -0.2], atol=1e-12)
    assert h == pytest.approx(0.05)


def test_quadrotor_constraint_components():
    comps, h = Quadrotor2D().constraint(EnvState(np.array([0, 0, 1.0, 0, 0, 0])))
    np.testing.assert_allclose(comps, [-0.5, -0.5])
    assert h == -0.5


def test_pointnav_hazard_center_violates():
    env = PointNav()
    state, _ = env.reset(np.random.default_rng(0))
    c = state.layout["hazards"][0]
    inside = EnvState(np.array([c[0], c[1], 0, 0]), 0, state.layout)
    comps, h = env.constraint(inside)
    assert comps[0] == pytest.approx(0.2)
    assert h == pytest.approx(0.2)


def test_double_integrator_semi_implicit_step():
    env = DoubleIntegrator()
    res = env.step(EnvState(np.array([0.0, 1.0])), np.array([1.0]))
    np.testing.assert_allclose(res.next_state.vector, [0.11, 1.1], atol=1e-15)


def test_pointnav_reward_positive_toward_goal():
    env = PointNav()
    state, _ = env.reset(np.random.default_rng(3))
    goal = state.layout["goal"]
    direction = goal - state.vector[:2]
    world = direction / np.linalg.norm(direction)
    # actions are in the ego frame; rotate the world direction into it
    c, s = math.cos(state.layout["heading"]), math.sin(state.layout["heading"])
    ego = np.array([[c, s], [-s, c]]) @ world
    res = env.step(state, ego, np.random.default_rng(0))
    assert res.reward > 0


def test_pointnav_layout_clearances():
    env = PointNav()
    for seed in range(30):
        state, _ = env.reset(np.random.default_rng(seed))
        lay = state.layout
        pts = [(c, env.hazard_radius) for c in lay["hazards"]] + [(lay["goal"], env.goal_radius),
                                                                  (state.vector[:2], 0.0)]
        for i in range(len(pts)):
            for j in range(i + 1, len(pts)):
                gap = np.linalg.norm(pts[i][0] - pts[j][0]) - pts[i][1] - pts[j][1]
                assert gap >= env.clearance - 1e-12


def test_pointnav_crowded_arena_raises():
    env = PointNav(clearance=5.0)
    with pytest.raises(EnvError):
        env.reset(np.random.default_rng(0))


@pytest.mark.parametrize("name", ALL)
def test_reset_determinism(name):
    env = make_env(name)
    a, oa = env.reset(np.random.default_rng(9))
    b, ob = env.reset(np.random.default_rng(9))
    np.testing.assert_array_equal(a.vector, b.vector)
    np.testing.assert_array_equal(oa, ob)
    if name == "pointnav":
        np.testing.assert_array_equal(a.layout["hazards"], b.layout["hazards"])
        np.testing.assert_array_equal(a.layout["goal"], b.layout["goal"])


@pytest.mark.parametrize("name", ALL)
def test_step_invariants_under_random_actions(name):
    env = make_env(name, T_ep=300, terminate_on_violation=False)
    rng = np.random.default_rng(1)
    state, obs = env.reset(rng)
    for t in range(env.spec.T_ep):
        res = env.step(state, rng.uniform(-1, 1, env.spec.action_dim), rng)
        assert res.violated == (res.h_scalar > 0)
        assert res.h_scalar == np.max(res.h_components)
        assert np.isfinite(res.next_state.vector).all()
        assert res.observation.shape == (env.spec.obs_dim,)
        assert 0 <= res.next_state.time_index <= env.spec.T_ep
        state = res.next_state
        if res.done:
            break
    assert state.time_index == env.spec.T_ep


def test_step_is_pure():
    env = CartpoleMove()
    state, _ = env.reset(np.random.default_rng(0))
    before = state.vector.copy()
    env.step(state, np.array([1.0]))
    np.testing.assert_array_equal(state.vector, before)
    assert state.time_index == 0


def test_termination_on_violation():
    env = DoubleIntegrator()
    res = env.step(EnvState(np.array([0.99, 1.0])), np.array([1.0]))
    assert res.violated and res.done
    env2 = DoubleIntegrator(terminate_on_violation=False)
    res2 = env2.step(EnvState(np.array([0.99, 1.0])), np.array([1.0]))
    assert res2.violated and not res2.done


def test_actions_are_clipped():
    env = DoubleIntegrator()
    a = env.step(EnvState(np.array([0.0, 0.0])), np.array([5.0]))
    b = env.step(EnvState(np.array([0.0, 0.0])), np.array([1.0]))
    np.testing.assert_array_equal(a.next_state.vector, b.next_state.vector)


def test_non_finite_state_component_named():
    env = DoubleIntegrator()
    with pytest.raises(NumericalError):
        env.step(EnvState(np.array([np.nan, 0.0])), np.array([0.0]))
    env.a_max = np.inf
    with pytest.raises(NumericalError) as exc:
        env.step(EnvState(np.array([0.0, 0.0])), np.array([1.0]))
    assert exc.value.where in ("x", "v")


def test_cartpole_finite_for_full_random_episodes():
    env = CartpoleMove(terminate_on_violation=False)
    rng = np.random.default_rng(4)
    for _ in range(3):
        state, _ = env.reset(rng)
        for _ in range(env.spec.T_ep):
            res = env.step(state, rng.uniform(-1, 1, 1))
            state = res.next_state
        assert np.isfinite(state.vector).all()


def test_quadrotor_hover_holds_height():
    env = Quadrotor2D()
    state = EnvState(np.array([0.0, 0.0, 1.0, 0.0, 0.0, 0.0]))
    for _ in range(30):
        state = env.step(state, np.zeros(2)).next_state
    assert abs(state.vector[2] - 1.0) < 1e-9


def test_quadrotor_reference_periodic():
    env = Quadrotor2D()
    for t in np.linspace(0, 3, 11):
        a = env.reference(t)
        b = env.reference(t + env.period)
        assert np.allclose(a, b, atol=1e-12)


def test_quadrotor_model_step_matches_env():
    env = Quadrotor2D()
    rng = np.random.default_rng(0)
    state, obs = env.reset(rng)
    for _ in range(20):
        a = rng.uniform(-1, 1, 2)
        res = env.step(state, a)
        nxt, r = env.model_step(obs[None], a[None])
        np.testing.assert_allclose(nxt[0], res.observation, atol=1e-12)
        assert r[0] == pytest.approx(res.reward, abs=1e-12)
        state, obs = res.next_state, res.observation


@given(st.floats(-math.pi, math.pi), st.integers(0, 10_000))
def test_pointnav_lidar_rotation_invariant(angle, seed):
    env = PointNav()
    state, obs = env.reset(np.random.default_rng(seed))
    rotated = rotate_layout(state, angle)
    np.testing.assert_allclose(env.lidar(rotated), env.lidar(state), atol=1e-9)
    np.testing.assert_allclose(env.observe(rotated), obs, atol=1e-9)


def test_pointnav_lidar_range():
    env = PointNav()
    rng = np.random.default_rng(2)
    state, obs = env.reset(rng)
    for _ in range(200):
        res = env.step(state, rng.uniform(-1, 1, 2), rng)
        lid = res.observation[5:]
        assert np.all((lid >= 0) & (lid <= 1))
        state = res.next_state


def test_pointnav_goal_resampled_on_reach():
    env = PointNav()
    state, _ = env.reset(np.random.default_rng(5))
    goal = state.layout["goal"]
    near = EnvState(np.array([goal[0] + 0.05, goal[1], 0, 0]), 0, state.layout)
    res = env.step(near, np.zeros(2), np.random.default_rng(1))
    assert res.info["goal_reached"]
    assert not np.allclose(res.next_state.layout["goal"], goal)
    np.testing.assert_array_equal(res.next_state.layout["hazards"], state.layout["hazards"])
    with pytest.raises(UsageError):
        env.step(near, np.zeros(2))


def test_analytic_feasible_examples():
    env = DoubleIntegrator()
    assert analytic_feasible(env, np.array([0.0, 0.0]))
    assert analytic_feasible(env, np.array([0.5, 1.0]))  # stops exactly at the wall
    assert not analytic_feasible(env, np.array([0.9, 0.5]))  # 1.025 > 1
    with pytest.raises(UsageError):
        analytic_feasible(CartpoleMove(), np.zeros(4))


def _braking_feasible(env, x, v, steps=4000):
    xs, vs = x.copy(), v.copy()
    ok = xs <= env.x_max
    for _ in range(steps):
        vs = np.maximum(vs - env.dt * env.a_max, np.minimum(vs, 0.0))
        xs = xs + env.dt * vs
        ok &= xs <= env.x_max
    return ok


def test_analytic_matches_braking_simulation_on_grid():
    env = DoubleIntegrator(dt=0.001)
    xs = np.linspace(-1.5, 1.5, 100)
    vs = np.linspace(-1.5, 1.5, 100)
    X, V = np.meshgrid(xs, vs, indexing="ij")
    ana = analytic_feasible_grid(env, X, V)
    sim = _braking_feasible(env, X.ravel(), V.ravel()).reshape(X.shape)
    boundary = np.zeros_like(ana)
    for ax in (0, 1):
        for sh in (1, -1):
            boundary |= ana != np.roll(ana, sh, axis=ax)
    assert np.sum((ana != sim) & ~boundary) == 0
