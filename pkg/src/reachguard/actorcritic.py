"""Main policy, reward critic, statewise multiplier and entropy temperature.

These implement the reward-seeking side of the surrogate Lagrangian

    min_pi max_lambda  E[ -Q(s, a) + lambda(s) * Z_beta(s, a; pi_h) ]

with soft actor-critic entropy regularization.
"""

from __future__ import annotations

import numpy as np

from . import diffcore as dc
from .distributions import squashed_gaussian
from .reachability import drc_head

LAMBDA_MAX = 100.0


def init_policy(obs_dim, action_dim, hidden, rng, activation="relu", name="policy"):
    return dc.init_mlp([obs_dim] + list(hidden) + [2 * action_dim], activation, rng,
                       head_count=2, name=name)


def init_critic(obs_dim, action_dim, hidden, rng, activation="relu", name="critic"):
    return dc.init_mlp([obs_dim + action_dim] + list(hidden) + [1], activation, rng, name=name)


def init_multiplier(obs_dim, hidden, rng, activation="relu", name="multiplier"):
    return dc.init_mlp([obs_dim] + list(hidden) + [1], activation, rng, name=name)


def sample_action(policy, obs, deterministic=False, rng=None):
    """``(action, log_prob)`` as plain arrays; ``deterministic`` returns tanh(mean)."""
    a, logp = squashed_gaussian(policy, np.asarray(obs, dtype=np.float64), rng, deterministic)
    return a, logp


def q_value(omega, obs, act, tape=None):
    return dc.take(dc.mlp_forward(omega, dc.concat([obs, act], axis=-1), tape), (Ellipsis, 0))


def multiplier_value(xi, obs, tape=None, lam_max=LAMBDA_MAX):
    """lambda(s) = clip(softplus(net(s)), 0, lam_max)."""
    out = dc.take(dc.mlp_forward(xi, obs, tape), (Ellipsis, 0))
    return dc.clip(dc.softplus(out), 0.0, lam_max)


def q_target(omega_targets, theta, alpha, batch, gamma, rng, entropy_in_target=True):
    """Soft TD target; violation-terminal transitions use ``r`` alone.

    ``omega_targets`` is one target network or a sequence (twin: min is used).
    """
    a2, logp2 = squashed_gaussian(theta, batch["obs2"], rng)
    if isinstance(omega_targets, dc.NetworkParams):
        omega_targets = (omega_targets,)
    q2 = np.min([q_value(w, batch["obs2"], a2) for w in omega_targets], axis=0)
    if entropy_in_target:
        q2 = q2 - alpha * logp2
    return batch["rew"] + gamma * (1.0 - batch["done"]) * q2


def q_loss(omega, targets, batch, tape):
    q = q_value(omega, batch["obs"], batch["act"], tape)
    return dc.mean(dc.square(dc.sub(q, targets)))


def policy_loss(theta, omegas, xi, psi, alpha, k, obs, rng, tape, lam_max=LAMBDA_MAX,
                constrained=True, drc_log_std_min=-20.0):
    """Mean of ``alpha*log pi - Q + lambda(s) * Z_beta``; gradient reaches ``theta`` only.

    Returns ``(loss, log_prob array, z_beta array)``.
    """
    a, logp = squashed_gaussian(theta, obs, rng, tape=tape)
    if isinstance(omegas, dc.NetworkParams):
        omegas = (omegas,)
    qs = [q_value(w, obs, a) for w in omegas]
    q = qs[0]
    for other in qs[1:]:
        q = dc.add(dc.mul(0.5, dc.add(q, other)), dc.mul(-0.5, _abs(dc.sub(q, other))))
    loss = dc.sub(dc.mul(alpha, logp), q)
    z = None
    if constrained:
        lam = multiplier_value(xi, obs, lam_max=lam_max)
        mean, std = drc_head(psi, obs, a, log_std_min=drc_log_std_min)
        zv = dc.add(mean, dc.mul(k, std))
        loss = dc.add(loss, dc.mul(lam, zv))
        z = dc.value(zv)
    return dc.mean(loss), dc.value(logp), z


def _abs(x):
    return dc.sub(dc.mul(2.0, dc.relu(x)), x)


def multiplier_loss(xi, z_values, obs, tape, lam_max=LAMBDA_MAX):
    """``-mean(lambda(s) * Z_beta)``; descending it performs dual ascent.

    ``z_values`` are the certificate quantiles at main-policy actions (frozen).
    """
    lam = multiplier_value(xi, obs, tape, lam_max)
    return dc.mul(-1.0, dc.mean(dc.mul(lam, np.asarray(z_values, dtype=np.float64))))


def multiplier_z(theta, psi, k, obs, rng, drc_log_std_min=-20.0):
    """Z_beta(s, a) with ``a ~ pi_theta(s)``, all networks frozen."""
    a, _ = squashed_gaussian(theta, obs, rng)
    mean, std = drc_head(psi, obs, a, log_std_min=drc_log_std_min)
    return mean + k * std


def temperature_loss(log_alpha, log_probs, target_entropy, tape):
    """``-alpha * mean(log pi + target_entropy)`` with alpha = exp(log_alpha)."""
    (la,) = tape.watch(log_alpha)
    alpha = dc.exp(la)
    return dc.mul(-1.0, dc.sum(dc.mul(alpha, float(np.mean(log_probs) + target_entropy))))
