"""Tanh-squashed diagonal Gaussian policies and Gaussian network heads."""

from __future__ import annotations

import math

import numpy as np

from . import diffcore as dc

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
LOG_2 = math.log(2.0)


def split_gaussian_head(out, dim, lo=LOG_STD_MIN, hi=LOG_STD_MAX):
    """Split an MLP output into ``(mean, clamped log_std)``."""
    return dc.take(out, (Ellipsis, slice(0, dim))), dc.clip(dc.take(out, (Ellipsis, slice(dim, 2 * dim))), lo, hi)


def squashed_gaussian(params, obs, rng=None, deterministic=False, tape=None, noise=None):
    """Sample ``a = tanh(mean + std * eps)`` and its log-density.

    With ``tape`` the sample is reparameterized so gradients reach ``params``.
    ``deterministic`` uses eps = 0 (the mode); the returned log-prob is then
    the density at the mode.
    """
    dim = params.out_dim // 2
    out = dc.mlp_forward(params, obs, tape)
    mean, log_std = split_gaussian_head(out, dim)
    if deterministic:
        eps = np.zeros(np.shape(dc.value(mean)))
    elif noise is not None:
        eps = noise
    else:
        eps = rng.standard_normal(np.shape(dc.value(mean)))
    u = dc.add(mean, dc.mul(dc.exp(log_std), eps))
    action = dc.tanh(u)
    gauss = dc.sub(-0.5 * eps ** 2 - HALF_LOG_2PI, log_std)
    # log(1 - tanh(u)^2) written stably
    log_det = dc.mul(2.0, dc.sub(dc.sub(LOG_2, u), dc.softplus(dc.mul(-2.0, u))))
    log_prob = dc.sum(dc.sub(gauss, log_det), axis=-1)
    return action, log_prob


def gaussian_nll(y, mean, std):
    """Per-element Gaussian negative log-likelihood (Var-aware)."""
    z = dc.div(dc.sub(y, mean), std)
    return dc.add(dc.add(dc.mul(0.5, dc.square(z)), dc.log(std)), HALF_LOG_2PI)
