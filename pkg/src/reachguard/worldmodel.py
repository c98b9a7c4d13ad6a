"""Ensemble of diagonal-Gaussian one-step models, replay buffers and branched rollouts."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .distributions import HALF_LOG_2PI
from .errors import DataError, NumericalError, UsageError

log = logging.getLogger(__name__)

MODEL_LOG_STD_MIN = -10.0
MODEL_VAR_CAP = 4.0
MODEL_LOG_STD_MAX = 0.5 * math.log(MODEL_VAR_CAP)
NORM_STD_FLOOR = 1e-8


@dataclass
class Transition:
    obs: np.ndarray
    act: np.ndarray
    rew: float
    obs2: np.ndarray
    h: float
    done: bool
    violated: bool


class ReplayBuffer:
    """FIFO ring buffer of transitions stored column-wise.

    ``done`` marks true termination (a violation with termination enabled);
    time-limit truncation is not stored as done.
    """

    def __init__(self, capacity, obs_dim, act_dim):
        self.capacity = int(capacity)
        self.obs = np.zeros((self.capacity, obs_dim))
        self.act = np.zeros((self.capacity, act_dim))
        self.rew = np.zeros(self.capacity)
        self.obs2 = np.zeros((self.capacity, obs_dim))
        self.h = np.zeros(self.capacity)
        self.done = np.zeros(self.capacity)
        self.violated = np.zeros(self.capacity, dtype=bool)
        self.size = 0
        self.ptr = 0

    def __len__(self):
        return self.size

    def add(self, obs, act, rew, obs2, h, done, violated):
        self.add_batch(np.atleast_2d(obs), np.atleast_2d(act), np.atleast_1d(rew),
                       np.atleast_2d(obs2), np.atleast_1d(h), np.atleast_1d(done),
                       np.atleast_1d(violated))

    def add_batch(self, obs, act, rew, obs2, h, done, violated):
        n = len(obs)
        if n == 0:
            return
        if n > self.capacity:
            obs, act, rew, obs2, h, done, violated = (
                x[-self.capacity:] for x in (obs, act, rew, obs2, h, done, violated))
            n = self.capacity
        idx = (self.ptr + np.arange(n)) % self.capacity
        self.obs[idx] = obs
        self.act[idx] = act
        self.rew[idx] = rew
        self.obs2[idx] = obs2
        self.h[idx] = h
        self.done[idx] = done
        self.violated[idx] = violated
        self.ptr = int((self.ptr + n) % self.capacity)
        self.size = min(self.size + n, self.capacity)

    def sample_indices(self, n, rng):
        if self.size == 0:
            raise DataError("cannot sample from an empty buffer")
        return rng.choice(self.size, size=min(n, self.size), replace=False)

    def batch(self, idx):
        return {"obs": self.obs[idx], "act": self.act[idx], "rew": self.rew[idx],
                "obs2": self.obs2[idx], "h": self.h[idx], "done": self.done[idx],
                "violated": self.violated[idx]}

    def sample(self, n, rng):
        return self.batch(self.sample_indices(n, rng))

    def all(self):
        return self.batch(np.arange(self.size))

    def transition(self, i):
        return Transition(self.obs[i].copy(), self.act[i].copy(), float(self.rew[i]),
                          self.obs2[i].copy(), float(self.h[i]), bool(self.done[i]),
                          bool(self.violated[i]))


@dataclass
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x):
        return cls(x.mean(axis=0), np.maximum(x.std(axis=0), NORM_STD_FLOOR))

    @classmethod
    def identity(cls, dim):
        return cls(np.zeros(dim), np.ones(dim))

    def __call__(self, x):
        return (x - self.mean) / self.std

    def inverse(self, z):
        return z * self.std + self.mean


class EnsembleModel:
    """B members predicting ``(delta obs, reward)`` as diagonal Gaussians.

    Member weights are stacked along a leading axis and trained in one batched
    pass; ``members`` exposes per-member views.  With ``learn_h`` each member
    also regresses the next-state constraint value.
    """

    def __init__(self, obs_dim, act_dim, rng, n_members=5, hidden=(200, 200),
                 activation="swish", learn_h=False, lr=1e-3):
        if n_members < 2:
            raise UsageError("an ensemble needs at least two members")
        self.obs_dim, self.act_dim = obs_dim, act_dim
        self.n_members = n_members
        self.learn_h = learn_h
        self.out_dim = obs_dim + 1
        n_out = 2 * self.out_dim + (1 if learn_h else 0)
        self.params = dc.init_mlp([obs_dim + act_dim] + list(hidden) + [n_out], activation, rng,
                                  head_count=2, n_members=n_members, name="model")
        # distinct per-member draws come from the stacked init; reseed member streams
        self.member_seeds = rng.integers(0, 2 ** 31, size=n_members)
        self.member_rngs = [np.random.default_rng(int(s)) for s in self.member_seeds]
        self.opt = dc.Optimizer(self.params, lr, lr, 1)
        self.in_norm = Normalizer.identity(obs_dim + act_dim)
        self.out_norm = Normalizer.identity(self.out_dim + (1 if learn_h else 0))
        self.trained = False

    @property
    def members(self):
        return [self.params.member(i) for i in range(self.n_members)]

    def refresh_normalization(self, buffer: ReplayBuffer):
        data = buffer.all()
        self.in_norm = Normalizer.fit(np.concatenate([data["obs"], data["act"]], axis=1))
        self.out_norm = Normalizer.fit(self._targets(data))

    def _targets(self, data):
        cols = [data["obs2"] - data["obs"], data["rew"][:, None]]
        if self.learn_h:
            cols.append(data["h"][:, None])
        return np.concatenate(cols, axis=1)

    def _raw(self, x, tape=None, params=None):
        return dc.mlp_forward(params or self.params, x, tape)

    def split(self, out):
        d = self.out_dim
        mean = dc.take(out, (Ellipsis, slice(0, d)))
        log_std = dc.clip(dc.take(out, (Ellipsis, slice(d, 2 * d))), MODEL_LOG_STD_MIN,
                          MODEL_LOG_STD_MAX)
        h = dc.take(out, (Ellipsis, slice(2 * d, 2 * d + 1))) if self.learn_h else None
        return mean, log_std, h

    def nll(self, x_norm, y_norm, tape=None, params=None):
        """Per-member mean NLL, shape (B,), in normalized coordinates.

        ``x_norm``/``y_norm`` are (B, n, .) stacks of independent batches.
        """
        mean, log_std, h = self.split(self._raw(x_norm, tape, params))
        yd = y_norm[..., :self.out_dim]
        z = dc.mul(dc.sub(yd, mean), dc.exp(dc.mul(-1.0, log_std)))
        per = dc.add(dc.mul(0.5, dc.square(z)), log_std)
        per = dc.add(per, HALF_LOG_2PI)
        loss = dc.mean(dc.sum(per, axis=-1), axis=-1)
        if self.learn_h:
            err = dc.sub(dc.take(y_norm, (Ellipsis, slice(self.out_dim, self.out_dim + 1))), h)
            loss = dc.add(loss, dc.mean(dc.sum(dc.square(err), axis=-1), axis=-1))
        return loss

    def train(self, buffer: ReplayBuffer, gd_steps, batch_size=256, warmup=0, holdout=1000):
        """Mini-batch Adam on the NLL; each member draws its own batches.

        Returns ``{"train": (steps, B) loss trace, "holdout": (B,) final NLL}``.
        """
        if len(buffer) < max(warmup, 2):
            raise UsageError(f"real buffer has {len(buffer)} transitions, "
                             f"below the warm-up size {warmup}; refusing to fit the model")
        self.refresh_normalization(buffer)
        data = buffer.all()
        x = self.in_norm(np.concatenate([data["obs"], data["act"]], axis=1))
        y = self.out_norm(self._targets(data))
        n = len(x)
        n_hold = min(holdout, n // 10)
        perm = self.member_rngs[0].permutation(n)
        hold, train_idx = perm[:n_hold], perm[n_hold:]
        trace = np.zeros((gd_steps, self.n_members))
        bs = min(batch_size, len(train_idx))
        for step in range(gd_steps):
            idx = np.stack([train_idx[r.integers(0, len(train_idx), size=bs)]
                            for r in self.member_rngs])
            tape = dc.Tape()
            per_member = self.nll(x[idx], y[idx], tape)
            loss = dc.sum(per_member)
            grads = dc.backward(tape, loss)
            self.opt.step(grads[self.params])
            trace[step] = per_member.value
        self.trained = True
        if n_hold:
            held = self.nll(np.broadcast_to(x[hold], (self.n_members,) + x[hold].shape),
                            np.broadcast_to(y[hold], (self.n_members,) + y[hold].shape))
        else:
            held = np.full(self.n_members, np.nan)
        return {"train": trace, "holdout": np.asarray(held)}

    def member_means(self, obs, act):
        """Denormalized per-member predicted next observations, shape (B, n, obs_dim)."""
        x = self.in_norm(np.concatenate([obs, act], axis=1))
        mean, _, _ = self.split(self._raw(x))
        delta = self.out_norm.mean[:self.obs_dim] + mean[..., :self.obs_dim] * self.out_norm.std[:self.obs_dim]
        return obs[None] + delta

    def predict(self, obs, act, rng):
        """Sample ``(next_obs, reward, h_or_None, member_index)`` for a batch."""
        if not self.trained:
            raise UsageError("ensemble must be trained before predicting")
        obs = np.atleast_2d(obs)
        act = np.atleast_2d(act)
        n = len(obs)
        x = self.in_norm(np.concatenate([obs, act], axis=1))
        mean, log_std, h = self.split(self._raw(x))
        member = rng.integers(0, self.n_members, size=n)
        rows = np.arange(n)
        mu = mean[member, rows]
        sd = np.exp(log_std[member, rows])
        sample = mu + sd * rng.standard_normal(mu.shape)
        d = self.out_dim
        out = sample * self.out_norm.std[:d] + self.out_norm.mean[:d]
        nxt = obs + out[:, :self.obs_dim]
        rew = out[:, self.obs_dim]
        h_pred = None
        if self.learn_h:
            h_pred = h[member, rows, 0] * self.out_norm.std[d] + self.out_norm.mean[d]
        return nxt, rew, h_pred, member


def member_nll(member: dc.NetworkParams, ensemble: EnsembleModel, batch, tape=None):
    """Mean NLL of one member on a batch (normalization statistics held fixed)."""
    for key in ("obs", "act", "obs2", "rew"):
        if not np.isfinite(batch[key]).all():
            raise DataError(f"non-finite values in batch column {key!r}")
    x = ensemble.in_norm(np.concatenate([batch["obs"], batch["act"]], axis=1))
    y = ensemble.out_norm(ensemble._targets(batch))
    return ensemble.nll(x, y, tape, params=member)


class AnalyticModel:
    """Exact dynamics of an analytic environment behind the ensemble API."""

    learn_h = False
    trained = True
    n_members = 1

    def __init__(self, env):
        self.env = env

    def predict(self, obs, act, rng=None):
        obs = np.atleast_2d(obs)
        nxt, rew = self.env.model_step(obs, np.atleast_2d(act))
        return nxt, rew, None, np.zeros(len(obs), dtype=np.int64)

    def train(self, buffer, gd_steps, **kw):
        return {"train": np.zeros((0, 1)), "holdout": np.zeros(1)}


def branched_rollout(model, act_fn, start_obs, horizon, rng, h_fn=None, terminate_on_violation=True):
    """Roll ``horizon`` model steps from each start observation.

    ``act_fn(obs) -> actions`` applies the gate; ``h_fn`` maps next
    observations to constraint values when the model does not learn them.
    Branches stop after their first violating transition (when termination is
    on) or when the model emits non-finite values (counted as dropped).
    Returns ``(columns dict, dropped_count)``.
    """
    if horizon < 1:
        raise UsageError("rollout horizon must be at least 1")
    obs = np.array(start_obs, dtype=np.float64)
    alive = np.ones(len(obs), dtype=bool)
    cols = {k: [] for k in ("obs", "act", "rew", "obs2", "h", "done", "violated")}
    dropped = 0
    for _ in range(horizon):
        if not alive.any():
            break
        cur = obs[alive]
        act = act_fn(cur)
        nxt, rew, h_pred, _ = model.predict(cur, act, rng)
        h = h_pred if h_pred is not None else h_fn(nxt)
        finite = np.isfinite(nxt).all(axis=1) & np.isfinite(rew) & np.isfinite(h)
        if not finite.all():
            dropped += int((~finite).sum())
        viol = h > 0.0
        done = viol & terminate_on_violation
        keep = finite
        for key, val in (("obs", cur), ("act", act), ("rew", rew), ("obs2", nxt), ("h", h),
                         ("done", done.astype(np.float64)), ("violated", viol)):
            cols[key].append(val[keep])
        idx = np.flatnonzero(alive)
        nxt_full = obs.copy()
        nxt_full[idx[finite]] = nxt[finite]
        obs = nxt_full
        stop = ~finite | done
        alive[idx[stop]] = False
    out = {k: (np.concatenate(v) if v else np.zeros((0,))) for k, v in cols.items()}
    return out, dropped


def check_finite_rollout(cols):
    for k in ("obs", "obs2", "rew", "h"):
        if cols[k].size and not np.isfinite(cols[k]).all():
            raise NumericalError(f"non-finite values in rollout column {k!r}")
