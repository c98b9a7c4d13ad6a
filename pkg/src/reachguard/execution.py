"""Runtime safety gate: action switch for training, line search for evaluation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distributions import squashed_gaussian
from .reachability import drc_forward, quantile


@dataclass
class GateDecision:
    chosen_action: np.ndarray
    mode: str  # "main" | "shield" | "mixed"
    z_value: float
    k_star: float | None


def certificate_quantile_fn(psi, k, log_std_min=-20.0):
    """Closure ``(obs, actions) -> Z_beta`` over a frozen certificate network."""

    def z_of(obs, actions):
        actions = np.atleast_2d(actions)
        obs = np.broadcast_to(obs, (actions.shape[0], np.shape(obs)[-1]))
        return quantile(drc_forward(psi, obs, actions, log_std_min), k)

    return z_of


def switch(z_of, obs, a_main, a_shield):
    """Execute ``a_main`` when its quantile is <= 0, otherwise ``a_shield``."""
    z = float(z_of(obs, a_main[None, :])[0])
    if z <= 0.0:
        return GateDecision(a_main, "main", z, 1.0)
    return GateDecision(a_shield, "shield", z, 0.0)


def line_search(z_of, obs, a_main, a_shield, n=10):
    """Certified mixture ``k*a + (1-k)*a_h`` nearest the main action.

    Grid k in {(n-1)/n, ..., 1/n}; the largest k whose quantile is <= 0 wins,
    falling back to the shield action (k = 0) when none passes.
    """
    a_main = np.asarray(a_main, dtype=np.float64)
    a_shield = np.asarray(a_shield, dtype=np.float64)
    ks = np.arange(n, 0, -1) / n  # 1, (n-1)/n, ..., 1/n
    cands = ks[:, None] * a_main[None, :] + (1.0 - ks[:, None]) * a_shield[None, :]
    z = np.asarray(z_of(obs, cands), dtype=np.float64)
    z_main = float(z[0])
    if z_main <= 0.0:
        return GateDecision(a_main, "main", z_main, 1.0)
    ok = np.flatnonzero(z <= 0.0)
    if ok.size == 0:
        return GateDecision(a_shield, "shield", z_main, 0.0)
    i = int(ok[0])
    return GateDecision(cands[i], "mixed", z_main, float(ks[i]))


def safe_act_train(obs, theta, nu, psi, k, rng, log_std_min=-20.0):
    """Stochastic main action, overridden by the deterministic shield mode when unsafe."""
    obs = np.asarray(obs, dtype=np.float64)
    a, _ = squashed_gaussian(theta, obs[None, :], rng)
    a_h, _ = squashed_gaussian(nu, obs[None, :], deterministic=True)
    return switch(certificate_quantile_fn(psi, k, log_std_min), obs, a[0], a_h[0])


def safe_act_eval(obs, theta, nu, psi, k, n=10, line_search_on=True, log_std_min=-20.0):
    """Deterministic action through the line-search gate (or the hard switch)."""
    obs = np.asarray(obs, dtype=np.float64)
    a, _ = squashed_gaussian(theta, obs[None, :], deterministic=True)
    a_h, _ = squashed_gaussian(nu, obs[None, :], deterministic=True)
    z_of = certificate_quantile_fn(psi, k, log_std_min)
    if line_search_on:
        return line_search(z_of, obs, a[0], a_h[0], n)
    return switch(z_of, obs, a[0], a_h[0])


def switch_batch(z_main, a_main, a_shield):
    """Vectorized switch for model rollouts; returns ``(actions, overridden mask)``."""
    over = np.asarray(z_main) > 0.0
    return np.where(over[:, None], a_shield, a_main), over
