"""Distributional reachability certificate, its quantile, the shield objective
and a grid value-iteration oracle for exact certificates.

The certificate network maps ``(obs, action)`` to a Gaussian over the
discounted worst-case future constraint value.  Training targets come from
the reachability Bellman operator

    T Q(s, a) = (1 - gamma) * h + gamma * max(h, Q(s', a')),   a' ~ pi_h(s')

where ``h`` is the constraint value carried by the transition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import diffcore as dc
from .distributions import LOG_STD_MAX, LOG_STD_MIN, gaussian_nll, squashed_gaussian
from .errors import ConvergenceError, NumericalError, UsageError

STD_FLOOR = 1e-6
STD_CAP = math.exp(LOG_STD_MAX)


@dataclass
class GaussianScalar:
    mean: np.ndarray
    std: np.ndarray


def init_drc(obs_dim, action_dim, hidden, rng, activation="relu", name="drc"):
    return dc.init_mlp([obs_dim + action_dim] + list(hidden) + [2], activation, rng,
                       head_count=2, name=name)


def init_shield(obs_dim, action_dim, hidden, rng, activation="relu", name="shield"):
    return dc.init_mlp([obs_dim] + list(hidden) + [2 * action_dim], activation, rng,
                       head_count=2, name=name)


def drc_head(psi, obs, act, tape=None, log_std_min=LOG_STD_MIN):
    """Differentiable ``(mean, std)`` of the certificate; shapes (n,)."""
    out = dc.mlp_forward(psi, dc.concat([obs, act], axis=-1), tape)
    mean = dc.take(out, (Ellipsis, 0))
    log_std = dc.clip(dc.take(out, (Ellipsis, 1)), log_std_min, LOG_STD_MAX)
    std = dc.clip(dc.exp(log_std), STD_FLOOR, STD_CAP)
    return mean, std


def drc_forward(psi, obs, act, log_std_min=LOG_STD_MIN) -> GaussianScalar:
    mean, std = drc_head(psi, np.asarray(obs, dtype=np.float64),
                         np.asarray(act, dtype=np.float64), log_std_min=log_std_min)
    if not (np.isfinite(mean).all() and np.isfinite(std).all()):
        raise NumericalError("certificate network produced a non-finite output")
    return GaussianScalar(mean, std)


def quantile(dist: GaussianScalar, k: float):
    """``mean + k * std``: the Gaussian beta-quantile with k = Phi^-1(beta)."""
    return dist.mean + k * dist.std


def z_beta(psi, obs, act, k, log_std_min=LOG_STD_MIN):
    return quantile(drc_forward(psi, obs, act, log_std_min), k)


def bellman_operator(h, q_next, gamma):
    """Scalar/array reachability operator ``(1-g) h + g max(h, q_next)``."""
    return (1.0 - gamma) * h + gamma * np.maximum(h, q_next)


def drc_target(h, next_obs, policy, psi_target, gamma, rng, terminal=None,
               log_std_min=LOG_STD_MIN):
    """One sampled distributional target per transition.

    ``policy`` produces ``a'`` at ``next_obs`` (the shield, or the main policy
    for a policy-tied certificate).  Violation-terminal transitions return
    ``h`` without bootstrapping.
    """
    h = np.asarray(h, dtype=np.float64)
    a2, _ = squashed_gaussian(policy, next_obs, rng)
    nxt = drc_forward(psi_target, next_obs, a2, log_std_min)
    q_next = nxt.mean + nxt.std * rng.standard_normal(nxt.mean.shape)
    target = bellman_operator(h, q_next, gamma)
    if terminal is not None:
        target = np.where(terminal, h, target)
    return target


def drc_loss(psi, obs, act, targets, tape, log_std_min=LOG_STD_MIN):
    """Mean Gaussian NLL of the targets under the online certificate."""
    mean, std = drc_head(psi, obs, act, tape, log_std_min)
    return dc.mean(gaussian_nll(np.asarray(targets, dtype=np.float64), mean, std))


def shield_loss(nu, psi, obs, k, rng, tape, alpha=0.0, log_std_min=LOG_STD_MIN):
    """Mean beta-quantile of the certificate at shield actions, plus entropy term.

    The certificate is evaluated with constant weights so only ``nu`` (present
    on ``tape``) receives gradient.  Returns ``(loss, log_prob array)``.
    """
    act, logp = squashed_gaussian(nu, obs, rng, tape=tape)
    mean, std = drc_head(psi, obs, act, log_std_min=log_std_min)
    z = dc.add(mean, dc.mul(k, std))
    loss = dc.mean(z)
    if alpha:
        loss = dc.add(loss, dc.mul(alpha, dc.mean(logp)))
    return loss, dc.value(logp)


# ---------------------------------------------------------------------------
# grid oracle


@dataclass
class GridCertificate:
    """Value-iteration certificate on a 2-D state grid.

    ``q[i, j, m]`` is the certificate at ``(xs[i], vs[j])`` taking
    ``actions[m]`` and following the greedy (or fixed) policy afterwards, with
    the constraint evaluated at the state itself.
    """

    xs: np.ndarray
    vs: np.ndarray
    actions: np.ndarray
    q: np.ndarray
    h: np.ndarray
    gamma: float
    residual: float
    iterations: int
    residuals: list

    def value(self):
        return self.q.min(axis=-1)

    def feasible(self):
        return self.value() <= 0.0

    def interpolate(self, grid_values, x, v):
        """Bilinear interpolation of a (nx, nv) array at points (clamped)."""
        m = _interp_matrix(self.xs, self.vs, np.ravel(x), np.ravel(v))
        return (m @ grid_values.ravel()).reshape(np.shape(x))


def _interp_matrix(xs, vs, px, pv):
    nx, nv = len(xs), len(vs)
    px = np.clip(px, xs[0], xs[-1])
    pv = np.clip(pv, vs[0], vs[-1])
    fx = (px - xs[0]) / (xs[1] - xs[0])
    fv = (pv - vs[0]) / (vs[1] - vs[0])
    ix = np.clip(np.floor(fx).astype(np.int64), 0, nx - 2)
    iv = np.clip(np.floor(fv).astype(np.int64), 0, nv - 2)
    tx = fx - ix
    tv = fv - iv
    rows = np.tile(np.arange(px.size), 4)
    cols = np.concatenate([ix * nv + iv, (ix + 1) * nv + iv, ix * nv + iv + 1, (ix + 1) * nv + iv + 1])
    w = np.concatenate([(1 - tx) * (1 - tv), tx * (1 - tv), (1 - tx) * tv, tx * tv])
    return sp.csr_matrix((w, (rows, cols)), shape=(px.size, nx * nv))


def default_grid(n=201, x_range=(-1.5, 1.5), v_range=(-1.5, 1.5)):
    return np.linspace(*x_range, n), np.linspace(*v_range, n)


def tabular_reachability(env, gamma=0.999, grid=None, action_set=None, tol=1e-6, policy=None,
                         max_iter=100000, min_iter=0, h_fn=None):
    """Jacobi value iteration of the reachability operator on a state grid.

    ``policy`` is ``None`` for the greedy-min certificate, otherwise an integer
    array of shape (nx, nv) giving the action index used at each node.
    ``h_fn`` overrides the environment's constraint (maps (N, 2) states to h).
    Starting from ``Q = h`` the iterates increase monotonically.
    """
    xs, vs = grid if grid is not None else default_grid()
    xs = np.asarray(xs, dtype=np.float64)
    vs = np.asarray(vs, dtype=np.float64)
    actions = np.asarray(action_set if action_set is not None else np.linspace(-1, 1, 5),
                         dtype=np.float64)
    nx, nv, na = len(xs), len(vs), len(actions)
    X, V = np.meshgrid(xs, vs, indexing="ij")
    states = np.stack([X.ravel(), V.ravel()], axis=1)
    h = (h_fn or env.h_from_obs)(states)
    mats = []
    for a in actions:
        nxt, _ = env.batch_dynamics(states, np.full((len(states), 1), a))
        mats.append(_interp_matrix(xs, vs, nxt[:, 0], nxt[:, 1]))
    trans = sp.vstack(mats).tocsr()
    if policy is not None:
        pol = np.asarray(policy, dtype=np.int64).ravel()
        if pol.shape != (nx * nv,) or pol.min() < 0 or pol.max() >= na:
            raise UsageError("policy must give a valid action index per grid node")
    q = np.repeat(h[None, :], na, axis=0)
    residuals = []
    res = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        vals = q.min(axis=0) if policy is None else q[pol, np.arange(nx * nv)]
        nxt_v = (trans @ vals).reshape(na, -1)
        q_new = (1.0 - gamma) * h + gamma * np.maximum(h, nxt_v)
        res = float(np.abs(q_new - q).max())
        residuals.append(res)
        q = q_new
        if res < tol and it >= min_iter:
            break
    else:
        raise ConvergenceError(f"value iteration did not reach tol {tol} "
                               f"after {max_iter} sweeps (residual {res:.3e})", res)
    return GridCertificate(xs, vs, actions, q.T.reshape(nx, nv, na), h.reshape(nx, nv),
                           gamma, res, it, residuals)


def reachability_operator_grid(env, q, gamma, grid, action_set, h_fn=None):
    """Apply the greedy operator once to an arbitrary (nx, nv, na) array."""
    xs, vs = grid
    X, V = np.meshgrid(xs, vs, indexing="ij")
    states = np.stack([X.ravel(), V.ravel()], axis=1)
    h = (h_fn or env.h_from_obs)(states)
    vals = q.reshape(-1, len(action_set)).min(axis=1)
    out = []
    for a in action_set:
        nxt, _ = env.batch_dynamics(states, np.full((len(states), 1), a))
        out.append(bellman_operator(h, _interp_matrix(xs, vs, nxt[:, 0], nxt[:, 1]) @ vals, gamma))
    return np.stack(out, axis=1).reshape(q.shape)
