"""Analytic benchmark tasks with a shared reset/step/constraint interface.

All environments are plain-value state machines: :meth:`Env.step` returns a
new :class:`EnvState` and never mutates its argument.  Actions live in
``[-1, 1]^action_dim`` and are scaled internally.

Constraint convention: ``StepResult.h_scalar`` is the constraint value of the
state *reached* by the step, so a transition ``(s, a, s')`` carries ``h(s')``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError, EnvError, NumericalError, UsageError


@dataclass(frozen=True)
class EnvSpec:
    name: str
    obs_dim: int
    action_dim: int
    T_ep: int
    dt: float


@dataclass
class EnvState:
    vector: np.ndarray
    time_index: int = 0
    layout: dict = field(default_factory=dict)


@dataclass
class StepResult:
    next_state: EnvState
    observation: np.ndarray
    reward: float
    h_components: np.ndarray
    h_scalar: float
    violated: bool
    done: bool
    info: dict


class Env:
    """Base class; subclasses define dynamics, reward, constraint and observation."""

    name = ""
    state_names: tuple = ()
    known_constraint = True

    def __init__(self, T_ep=None, terminate_on_violation=True):
        self.terminate_on_violation = terminate_on_violation
        self.spec = EnvSpec(self.name, self._obs_dim(), self.action_dim,
                            int(T_ep or self.default_T_ep), self.dt)

    # subclass hooks ---------------------------------------------------------
    def _obs_dim(self):
        return len(self.state_names)

    def _initial_vector(self, rng):
        raise NotImplementedError

    def constraint(self, state: EnvState):
        """Returns ``(h_components, h_scalar)`` for ``state``."""
        comps = self.h_components(state)
        return comps, float(np.max(comps))

    def h_components(self, state):
        raise NotImplementedError

    def observe(self, state: EnvState) -> np.ndarray:
        return state.vector.copy()

    # shared logic -----------------------------------------------------------
    def reset(self, rng):
        state = EnvState(self._initial_vector(rng), 0, self._initial_layout(rng))
        return state, self.observe(state)

    def _initial_layout(self, rng):
        return {}

    def step(self, state: EnvState, action, rng=None) -> StepResult:
        action = np.clip(np.asarray(action, dtype=np.float64).reshape(self.action_dim), -1.0, 1.0)
        if not np.isfinite(state.vector).all():
            raise NumericalError(f"{self.name}: non-finite state passed to step")
        vec, reward, layout, info = self._advance(state, action, rng)
        bad = ~np.isfinite(vec)
        if bad.any():
            idx = int(np.flatnonzero(bad)[0])
            comp = self.state_names[idx] if idx < len(self.state_names) else str(idx)
            raise NumericalError(f"{self.name}: non-finite next state component {comp!r}",
                                 where=comp)
        nxt = EnvState(vec, state.time_index + 1, layout)
        comps, h = self.constraint(nxt)
        violated = bool(h > 0.0)
        done = nxt.time_index >= self.spec.T_ep or (violated and self.terminate_on_violation)
        return StepResult(nxt, self.observe(nxt), float(reward), comps, h, violated, done, info)

    def _advance(self, state, action, rng):
        nxt, r = self.batch_dynamics(state.vector[None, :], action[None, :], state.time_index)
        return nxt[0], float(r[0]), state.layout, {"goal_reached": False}

    # vectorized model interface (used by the analytic "perfect" world model)
    def batch_dynamics(self, states, actions, t=0):
        raise NotImplementedError

    def h_from_obs(self, obs):
        """Constraint scalar for a batch of observations (known-constraint envs)."""
        raise UsageError(f"{self.name} has no analytic constraint on observations")

    def model_step(self, obs, actions):
        """Analytic ``(next_obs, reward)`` for a batch of observations."""
        nxt, r = self.batch_dynamics(obs, actions)
        return nxt, r


# ---------------------------------------------------------------------------


class CartpoleMove(Env):
    """Cart-pole where reward grows with |x| but |x| <= 0.9 and |theta| <= 0.2."""

    name = "cartpole_move"
    state_names = ("x", "x_dot", "theta", "theta_dot")
    action_dim = 1
    default_T_ep = 1000
    dt = 0.02
    gravity = 9.8
    mass_cart = 1.0
    mass_pole = 0.1
    half_length = 0.5
    force_scale = 10.0
    x_limit = 0.9
    theta_limit = 0.2

    def __init__(self, T_ep=None, terminate_on_violation=True, reset_noise=0.01):
        self.reset_noise = reset_noise
        super().__init__(T_ep, terminate_on_violation)

    def _initial_vector(self, rng):
        if self.reset_noise <= 0:
            return np.zeros(4)
        return rng.uniform(-self.reset_noise, self.reset_noise, size=4)

    def batch_dynamics(self, states, actions, t=0):
        x, xd, th, thd = states.T
        force = self.force_scale * np.clip(actions[:, 0], -1.0, 1.0)
        total = self.mass_cart + self.mass_pole
        pml = self.mass_pole * self.half_length
        cos, sin = np.cos(th), np.sin(th)
        tmp = (force + pml * thd ** 2 * sin) / total
        thacc = (self.gravity * sin - cos * tmp) / (
            self.half_length * (4.0 / 3.0 - self.mass_pole * cos ** 2 / total))
        xacc = tmp - pml * thacc * cos / total
        xd2 = xd + self.dt * xacc
        thd2 = thd + self.dt * thacc
        nxt = np.stack([x + self.dt * xd2, xd2, th + self.dt * thd2, thd2], axis=1)
        return nxt, x ** 2

    def h_components(self, state):
        x, th = state.vector[0], state.vector[2]
        return np.array([x - self.x_limit, -self.x_limit - x,
                         th - self.theta_limit, -self.theta_limit - th])

    def h_from_obs(self, obs):
        x, th = obs[..., 0], obs[..., 2]
        return np.maximum(np.abs(x) - self.x_limit, np.abs(th) - self.theta_limit)


class Quadrotor2D(Env):
    """Planar two-rotor body tracking a vertical circle inside a height band.

    Observation is the rigid-body state followed by ``(sin, cos)`` of the
    reference phase so that the tracking task stays Markov.
    """

    name = "quadrotor2d"
    state_names = ("x", "x_dot", "z", "z_dot", "pitch", "pitch_rate")
    action_dim = 2
    default_T_ep = 360
    dt = 1.0 / 60.0
    mass = 0.027
    arm = 0.03
    inertia = 1.4e-5
    gravity = 9.81
    radius = 0.5
    center_z = 1.0
    z_low = 0.5
    z_high = 1.5
    substeps = 10

    def __init__(self, T_ep=None, terminate_on_violation=True, period=None):
        super().__init__(T_ep, terminate_on_violation)
        self.period = float(period if period is not None else self.spec.T_ep * self.dt)
        self.omega = 2.0 * math.pi / self.period
        self.hover_thrust = self.mass * self.gravity / 2.0

    def _obs_dim(self):
        return 8

    def reference(self, t):
        """Reference position ``(x_ref, z_ref)`` at time ``t`` seconds."""
        ph = self.omega * np.asarray(t, dtype=np.float64)
        return self.radius * np.cos(ph), self.center_z + self.radius * np.sin(ph)

    def _initial_vector(self, rng):
        xr, zr = self.reference(0.0)
        return np.array([float(xr), 0.0, float(zr), 0.0, 0.0, 0.0])

    def observe(self, state):
        ph = self.omega * state.time_index * self.dt
        return np.concatenate([state.vector, [math.sin(ph), math.cos(ph)]])

    def _rigid_body(self, s, actions):
        thrust = (np.clip(actions, -1.0, 1.0) + 1.0) * self.hover_thrust
        h = self.dt / self.substeps
        x, xd, z, zd, th, thd = (s[:, k].copy() for k in range(6))
        total = thrust[:, 0] + thrust[:, 1]
        torque = (thrust[:, 1] - thrust[:, 0]) * self.arm
        for _ in range(self.substeps):
            xd += h * total * np.sin(th) / self.mass
            zd += h * (total * np.cos(th) / self.mass - self.gravity)
            thd += h * torque / self.inertia
            x += h * xd
            z += h * zd
            th += h * thd
        return np.stack([x, xd, z, zd, th, thd], axis=1)

    def _tracking_reward(self, x, z, t):
        xr, zr = self.reference(t)
        return -((x - xr) ** 2 + (z - zr) ** 2)

    def batch_dynamics(self, states, actions, t=0):
        nxt = self._rigid_body(states[:, :6], actions)
        r = self._tracking_reward(states[:, 0], states[:, 2], t * self.dt)
        return nxt, r

    def model_step(self, obs, actions):
        nxt = self._rigid_body(obs[:, :6], actions)
        sn, cs = obs[:, 6], obs[:, 7]
        d = self.omega * self.dt
        sn2 = sn * math.cos(d) + cs * math.sin(d)
        cs2 = cs * math.cos(d) - sn * math.sin(d)
        xr = self.radius * cs
        zr = self.center_z + self.radius * sn
        r = -((obs[:, 0] - xr) ** 2 + (obs[:, 2] - zr) ** 2)
        return np.concatenate([nxt, sn2[:, None], cs2[:, None]], axis=1), r

    def h_components(self, state):
        z = state.vector[2]
        return np.array([z - self.z_high, self.z_low - z])

    def h_from_obs(self, obs):
        z = obs[..., 2]
        return np.maximum(z - self.z_high, self.z_low - z)


class PointNav(Env):
    """Point mass in a walled square reaching goals among circular hazards.

    Only lidar readings of the hazards are observed, never their positions, so
    the constraint has to be learned from data.
    """

    name = "pointnav"
    known_constraint = False
    state_names = ("px", "py", "vx", "vy")
    action_dim = 2
    default_T_ep = 1000
    dt = 0.05
    half_size = 2.0
    damping = 0.95
    accel = 2.0
    n_hazards = 5
    hazard_radius = 0.2
    goal_radius = 0.3
    n_beams = 16
    lidar_range = 3.0

    def __init__(self, T_ep=None, terminate_on_violation=True, clearance=0.2):
        self.clearance = clearance
        super().__init__(T_ep, terminate_on_violation)

    def _obs_dim(self):
        return 5 + self.n_beams

    def _initial_vector(self, rng):
        return np.zeros(4)  # replaced by the layout sampler

    def reset(self, rng):
        layout, robot = self._sample_layout(rng)
        state = EnvState(np.array([robot[0], robot[1], 0.0, 0.0]), 0, layout)
        return state, self.observe(state)

    def _sample_point(self, rng, placed, radius):
        lim = self.half_size - radius
        for _ in range(1000):
            p = rng.uniform(-lim, lim, size=2)
            if all(np.hypot(*(p - q)) - radius - rq >= self.clearance for q, rq in placed):
                return p
        raise EnvError("pointnav: layout sampling failed after 1000 attempts (arena too crowded)")

    def _sample_layout(self, rng):
        placed = []
        hazards = []
        for _ in range(self.n_hazards):
            c = self._sample_point(rng, placed, self.hazard_radius)
            placed.append((c, self.hazard_radius))
            hazards.append(c)
        goal = self._sample_point(rng, placed, self.goal_radius)
        placed.append((goal, self.goal_radius))
        robot = self._sample_point(rng, placed, 0.0)
        layout = {"hazards": np.array(hazards), "goal": goal,
                  "heading": float(rng.uniform(-math.pi, math.pi))}
        return layout, robot

    def _resample_goal(self, rng, layout, robot):
        placed = [(c, self.hazard_radius) for c in layout["hazards"]] + [(robot, 0.0)]
        return self._sample_point(rng, placed, self.goal_radius)

    def _rot(self, heading):
        c, s = math.cos(heading), math.sin(heading)
        return np.array([[c, -s], [s, c]])

    def _advance(self, state, action, rng):
        p, v = state.vector[:2], state.vector[2:]
        layout = state.layout
        force = self._rot(layout["heading"]) @ action
        v2 = self.damping * v + self.accel * self.dt * force
        p2 = p + self.dt * v2
        for k in range(2):
            if abs(p2[k]) > self.half_size:
                p2[k] = math.copysign(self.half_size, p2[k])
                v2[k] = 0.0
        d_old = float(np.hypot(*(p - layout["goal"])))
        d_new = float(np.hypot(*(p2 - layout["goal"])))
        reward = d_old - d_new
        reached = d_new <= self.goal_radius
        if reached:
            if rng is None:
                raise UsageError("pointnav step needs an rng to resample the goal")
            layout = dict(layout)
            layout["goal"] = self._resample_goal(rng, layout, p2)
        return np.concatenate([p2, v2]), reward, layout, {"goal_reached": bool(reached)}

    def hazard_distances(self, state):
        c = state.layout["hazards"]
        return np.hypot(c[:, 0] - state.vector[0], c[:, 1] - state.vector[1]) - self.hazard_radius

    def h_components(self, state):
        return -self.hazard_distances(state)

    def lidar(self, state):
        p = state.vector[:2]
        angles = state.layout["heading"] + 2.0 * math.pi * np.arange(self.n_beams) / self.n_beams
        dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)
        rel = state.layout["hazards"] - p  # (H, 2)
        proj = dirs @ rel.T  # (beams, H)
        perp2 = np.sum(rel ** 2, axis=1)[None, :] - proj ** 2
        r2 = self.hazard_radius ** 2
        inside = np.sum(rel ** 2, axis=1) <= r2
        half = np.sqrt(np.maximum(r2 - perp2, 0.0))
        hit = (perp2 <= r2) & (proj + half >= 0.0)
        dist = np.where(hit, np.maximum(proj - half, 0.0), np.inf)
        dist = np.where(inside[None, :], 0.0, dist)
        d = dist.min(axis=1)
        return np.maximum(0.0, 1.0 - d / self.lidar_range)

    def observe(self, state):
        rot_t = self._rot(state.layout["heading"]).T
        v_ego = rot_t @ state.vector[2:]
        g = rot_t @ (state.layout["goal"] - state.vector[:2])
        dist = float(np.hypot(*g))
        gdir = g / dist if dist > 0 else np.zeros(2)
        return np.concatenate([v_ego, gdir, [dist], self.lidar(state)])

    def batch_dynamics(self, states, actions, t=0):
        raise UsageError("pointnav has no closed-form observation dynamics")

    def model_step(self, obs, actions):
        raise UsageError("pointnav has no closed-form observation dynamics")


class DoubleIntegrator(Env):
    """1-D point mass with bounded acceleration and a wall at ``x_max``.

    Reward ``-|x_max - x|`` pulls the mass toward the wall, so reward and
    safety conflict near the braking boundary.
    """

    name = "double_integrator"
    state_names = ("x", "v")
    action_dim = 1
    default_T_ep = 100
    dt = 0.1

    def __init__(self, T_ep=None, terminate_on_violation=True, dt=None, a_max=1.0, x_max=1.0,
                 reset_box=((-1.0, 0.0), (-0.5, 0.5))):
        if dt is not None:
            self.dt = float(dt)
        self.a_max = float(a_max)
        self.x_max = float(x_max)
        self.reset_box = np.asarray(reset_box, dtype=np.float64)
        if self.a_max <= 0:
            raise ConfigurationError("a_max must be positive")
        super().__init__(T_ep, terminate_on_violation)

    def _initial_vector(self, rng):
        lo, hi = self.reset_box[:, 0], self.reset_box[:, 1]
        return rng.uniform(lo, hi)

    def batch_dynamics(self, states, actions, t=0):
        x, v = states[:, 0], states[:, 1]
        v2 = v + self.dt * self.a_max * np.clip(actions[:, 0], -1.0, 1.0)
        x2 = x + self.dt * v2
        return np.stack([x2, v2], axis=1), -np.abs(self.x_max - x)

    def h_components(self, state):
        return np.array([state.vector[0] - self.x_max])

    def h_from_obs(self, obs):
        return obs[..., 0] - self.x_max


ENVIRONMENTS = {cls.name: cls for cls in (CartpoleMove, Quadrotor2D, PointNav, DoubleIntegrator)}


def make_env(name, **kwargs) -> Env:
    try:
        cls = ENVIRONMENTS[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}") from None
    return cls(**kwargs)


def analytic_feasible(env, state) -> bool:
    """Bang-bang braking test: can full deceleration stop the mass before the wall?"""
    if not isinstance(env, DoubleIntegrator):
        raise UsageError("analytic_feasible is defined only for the double integrator")
    vec = state.vector if isinstance(state, EnvState) else np.asarray(state, dtype=np.float64)
    x, v = float(vec[0]), float(vec[1])
    return x + max(v, 0.0) ** 2 / (2.0 * env.a_max) <= env.x_max


def analytic_feasible_grid(env, xs, vs):
    """Vectorized :func:`analytic_feasible` over broadcastable arrays."""
    if not isinstance(env, DoubleIntegrator):
        raise UsageError("analytic_feasible is defined only for the double integrator")
    return xs + np.maximum(vs, 0.0) ** 2 / (2.0 * env.a_max) <= env.x_max


def rotate_layout(state: EnvState, angle: float) -> EnvState:
    """Rotate robot, velocity, hazards, goal and heading about the origin."""
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -s], [s, c]])
    vec = np.concatenate([rot @ state.vector[:2], rot @ state.vector[2:]])
    lay = dict(state.layout)
    lay["hazards"] = state.layout["hazards"] @ rot.T
    lay["goal"] = rot @ state.layout["goal"]
    lay["heading"] = state.layout["heading"] + angle
    return replace(state, vector=vec, layout=lay)
