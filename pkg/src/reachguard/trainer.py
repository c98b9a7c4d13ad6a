"""End-to-end training loop, evaluation and mixed real/virtual sampling."""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__, checkpoint as ck
from . import actorcritic as ac
from . import config as cfgmod
from . import diffcore as dc
from . import execution as ex
from .config import TrainConfig
from .distributions import squashed_gaussian
from .envs import make_env
from .errors import ConvergenceError, DataError, EnvError, NumericalError
from .reachability import drc_forward, drc_loss, drc_target, init_drc, init_shield, shield_loss
from .worldmodel import AnalyticModel, EnsembleModel, ReplayBuffer, branched_rollout

log = logging.getLogger(__name__)

METRIC_FIELDS = ("episode", "env_steps", "episode_return", "episode_violations",
                 "cumulative_training_violations", "shield_interventions", "mean_k_star",
                 "mean_lambda", "mean_Z_beta", "model_nll", "q_loss", "drc_loss", "shield_loss",
                 "policy_loss", "alpha", "wall_seconds")
EVAL_FIELDS = ("episode", "env_steps", "mean_return", "mean_violations", "intervention_rate",
               "mean_k_star", "episodes")


def deterministic_mode():
    return os.environ.get("REACHGUARD_DETERMINISTIC", "") not in ("", "0")


def code_hash():
    """Content hash of the package version string and its source files."""
    h = hashlib.sha256(__version__.encode())
    pkg = os.path.dirname(os.path.abspath(__file__))
    for name in sorted(os.listdir(pkg)):
        if name.endswith(".py"):
            with open(os.path.join(pkg, name), "rb") as fh:
                h.update(name.encode())
                h.update(fh.read())
    return h.hexdigest()[:16]


# ---------------------------------------------------------------------------
# agent


class Agent:
    """All learnable pieces of one run plus their optimizers."""

    def __init__(self, cfg: TrainConfig, obs_dim, act_dim, rng, total_env_steps=1):
        self.cfg = cfg
        self.obs_dim, self.act_dim = obs_dim, act_dim
        hid = [cfg.hidden] * cfg.layers
        self.theta = ac.init_policy(obs_dim, act_dim, hid, rng)
        n_q = 2 if cfg.twin_q else 1
        self.omegas = [ac.init_critic(obs_dim, act_dim, hid, rng, name=f"critic{i}")
                       for i in range(n_q)]
        self.omega_targets = [w.copy(name=w.name + "_target") for w in self.omegas]
        self.psi = init_drc(obs_dim, act_dim, hid, rng)
        self.psi_target = self.psi.copy(name="drc_target")
        self.nu = init_shield(obs_dim, act_dim, hid, rng)
        self.xi = ac.init_multiplier(obs_dim, hid, rng)
        self.log_alpha = dc.ScalarParam(math.log(cfg.alpha_init), "log_alpha")
        self.log_alpha_h = dc.ScalarParam(math.log(cfg.shield_alpha_init), "log_alpha_shield")
        self.target_entropy = -float(act_dim)

        def opt(params, lo, hi, per_step):
            total = max(1, total_env_steps * per_step)
            return dc.Optimizer(params, lo, hi, total,
                                dc.adam_init(params, cfg.adam_beta1, cfg.adam_beta2))

        alpha_lr = cfg.alpha_lr or cfg.actor_lr_start
        self.opts = {
            "policy": opt(self.theta, cfg.actor_lr_start, cfg.actor_lr_end, cfg.actor_updates),
            "shield": opt(self.nu, cfg.actor_lr_start, cfg.actor_lr_end, cfg.actor_updates),
            "drc": opt(self.psi, cfg.critic_lr_start, cfg.critic_lr_end, cfg.critic_updates),
            "multiplier": opt(self.xi, cfg.multiplier_lr_start, cfg.multiplier_lr_end,
                              cfg.multiplier_updates),
            "alpha": opt(self.log_alpha, alpha_lr, alpha_lr, 1),
            "alpha_shield": opt(self.log_alpha_h, alpha_lr, alpha_lr, 1),
        }
        for w in self.omegas:
            self.opts[w.name] = opt(w, cfg.critic_lr_start, cfg.critic_lr_end, cfg.critic_updates)

    # -- flags ---------------------------------------------------------------
    @property
    def constrained(self):
        return not self.cfg.unconstrained

    @property
    def gated(self):
        return self.cfg.shield_active

    @property
    def k(self):
        return self.cfg.k

    @property
    def alpha(self):
        return math.exp(float(self.log_alpha))

    @property
    def alpha_h(self):
        return math.exp(float(self.log_alpha_h))

    @property
    def bootstrap_policy(self):
        """Policy whose certificate the DRC learns: the shield, or the main policy."""
        if self.gated and self.cfg.constraint_on == "shield":
            return self.nu
        return self.theta

    def networks(self):
        nets = {"policy": self.theta, "drc": self.psi, "drc_target": self.psi_target,
                "shield": self.nu, "multiplier": self.xi}
        for w, t in zip(self.omegas, self.omega_targets):
            nets[w.name] = w
            nets[t.name] = t
        return nets

    # -- acting ----------------------------------------------------------------
    def act_train(self, obs, rng) -> ex.GateDecision:
        if not self.gated:
            a, _ = squashed_gaussian(self.theta, np.asarray(obs)[None, :], rng)
            return ex.GateDecision(a[0], "main", float("nan"), 1.0)
        return ex.safe_act_train(obs, self.theta, self.nu, self.psi, self.k, rng,
                                 self.cfg.drc_log_std_min)

    def act_eval(self, obs, n=10, line_search=True) -> ex.GateDecision:
        if not self.gated:
            a, _ = squashed_gaussian(self.theta, np.asarray(obs)[None, :], deterministic=True)
            return ex.GateDecision(a[0], "main", float("nan"), 1.0)
        return ex.safe_act_eval(obs, self.theta, self.nu, self.psi, self.k, n, line_search,
                                self.cfg.drc_log_std_min)

    def rollout_actions(self, obs, rng):
        a, _ = squashed_gaussian(self.theta, obs, rng)
        if not self.gated:
            return a
        a_h, _ = squashed_gaussian(self.nu, obs, deterministic=True)
        d = drc_forward(self.psi, obs, a, self.cfg.drc_log_std_min)
        out, _ = ex.switch_batch(d.mean + self.k * d.std, a, a_h)
        return out

    # -- updates ---------------------------------------------------------------
    def update_critics(self, batch, rng, stats):
        cfg = self.cfg
        targets = ac.q_target(self.omega_targets, self.theta, self.alpha, batch, cfg.gamma, rng,
                              cfg.entropy_in_target)
        for w in self.omegas:
            tape = dc.Tape()
            loss = ac.q_loss(w, targets, batch, tape)
            self.opts[w.name].step(dc.backward(tape, loss)[w])
            stats.add("q_loss", float(loss.value))
        for w, t in zip(self.omegas, self.omega_targets):
            dc.soft_update(t, w, cfg.tau)
        if not self.constrained:
            return
        terminal = batch["done"] > 0.5
        tgt = drc_target(batch["h"], batch["obs2"], self.bootstrap_policy, self.psi_target,
                         cfg.gamma, rng, terminal, cfg.drc_log_std_min)
        tape = dc.Tape()
        loss = drc_loss(self.psi, batch["obs"], batch["act"], tgt, tape, cfg.drc_log_std_min)
        self.opts["drc"].step(dc.backward(tape, loss)[self.psi])
        dc.soft_update(self.psi_target, self.psi, cfg.tau)
        stats.add("drc_loss", float(loss.value))

    def update_actors(self, batch, rng, stats):
        cfg = self.cfg
        omegas = self.omegas
        tape = dc.Tape()
        loss, logp, _ = ac.policy_loss(self.theta, omegas, self.xi, self.psi, self.alpha, self.k,
                                       batch["obs"], rng, tape, cfg.lam_max, self.constrained,
                                       cfg.drc_log_std_min)
        self.opts["policy"].step(dc.backward(tape, loss)[self.theta])
        stats.add("policy_loss", float(loss.value))
        tape = dc.Tape()
        tl = ac.temperature_loss(self.log_alpha, logp, self.target_entropy, tape)
        self.opts["alpha"].step(dc.backward(tape, tl)[self.log_alpha])
        if not self.gated:
            return
        tape = dc.Tape()
        sl, logp_h = shield_loss(self.nu, self.psi, batch["obs"], self.k, rng, tape, self.alpha_h,
                                 cfg.drc_log_std_min)
        self.opts["shield"].step(dc.backward(tape, sl)[self.nu])
        stats.add("shield_loss", float(sl.value))
        tape = dc.Tape()
        tl = ac.temperature_loss(self.log_alpha_h, logp_h, self.target_entropy, tape)
        self.opts["alpha_shield"].step(dc.backward(tape, tl)[self.log_alpha_h])

    def update_multiplier(self, batch, rng, stats):
        if not self.constrained:
            return
        cfg = self.cfg
        z = ac.multiplier_z(self.theta, self.psi, self.k, batch["obs"], rng, cfg.drc_log_std_min)
        tape = dc.Tape()
        loss = ac.multiplier_loss(self.xi, z, batch["obs"], tape, cfg.lam_max)
        self.opts["multiplier"].step(dc.backward(tape, loss)[self.xi])
        lam = ac.multiplier_value(self.xi, batch["obs"], lam_max=cfg.lam_max)
        stats.add("mean_lambda", float(np.mean(lam)))
        stats.add("mean_Z_beta", float(np.mean(z)))

    # -- persistence -------------------------------------------------------------
    def to_checkpoint(self, model=None, meta=None) -> ck.Checkpoint:
        text = cfgmod.serialize(self.cfg)
        nets = dict(self.networks())
        arrays = {"log_alpha": self.log_alpha.value.copy(),
                  "log_alpha_shield": self.log_alpha_h.value.copy()}
        for name, o in self.opts.items():
            arrays.update(ck.adam_to_arrays(f"opt/{name}", o.state))
        if isinstance(model, EnsembleModel):
            nets["model"] = model.params
            arrays.update(ck.adam_to_arrays("opt/model", model.opt.state))
            arrays["model/in_mean"] = model.in_norm.mean
            arrays["model/in_std"] = model.in_norm.std
            arrays["model/out_mean"] = model.out_norm.mean
            arrays["model/out_std"] = model.out_norm.std
        meta = dict(meta or {})
        meta.setdefault("dims", [self.obs_dim, self.act_dim])
        return ck.Checkpoint(text, cfgmod.config_hash(self.cfg), nets, arrays, meta)

    @classmethod
    def from_checkpoint(cls, ckpt: ck.Checkpoint):
        cfg = cfgmod.parse(ckpt.config_text)
        if cfgmod.config_hash(cfg) != ckpt.config_hash:
            raise ck.CheckpointError("checkpoint config hash does not match its config text")
        obs_dim, act_dim = ckpt.meta["dims"]
        agent = cls(cfg, obs_dim, act_dim, np.random.default_rng(0))
        for name, net in agent.networks().items():
            ck.restore_network(net, ckpt, name)
        agent.log_alpha.value[...] = ckpt.arrays["log_alpha"]
        agent.log_alpha_h.value[...] = ckpt.arrays["log_alpha_shield"]
        for name, o in agent.opts.items():
            ck.adam_from_arrays(f"opt/{name}", ckpt, o.state)
        return agent


class _Stats:
    def __init__(self):
        self.sums = {}

    def add(self, key, v):
        s = self.sums.setdefault(key, [0.0, 0])
        s[0] += v
        s[1] += 1

    def mean(self, key):
        s = self.sums.get(key)
        return None if not s else s[0] / s[1]


# ---------------------------------------------------------------------------
# sampling


def mixed_sample(real: ReplayBuffer, virtual: ReplayBuffer, batch, ratio, rng):
    """``ceil(ratio*batch)`` real transitions plus virtual ones, shuffled together."""
    if len(real) == 0:
        raise DataError("real buffer is empty")
    n_real = min(batch, math.ceil(ratio * batch - 1e-9))
    n_virt = batch - n_real
    if n_virt and len(virtual) == 0:
        log.warning("virtual buffer is empty; sampling the whole batch from real data")
        n_real, n_virt = batch, 0
    parts = [real.sample(n_real, rng)]
    if n_virt:
        parts.append(virtual.sample(n_virt, rng))
    out = {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
    perm = rng.permutation(len(out["obs"]))
    return {k: v[perm] for k, v in out.items()}


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalResult:
    mean_return: float
    mean_violations: float
    intervention_rate: float
    mean_k_star: float
    episodes: list = field(default_factory=list)


def evaluate(source, episodes=5, n=10, line_search=True, seed=0, env=None, T_ep=None):
    """Deterministic gated rollouts without termination on violation.

    ``source`` is an :class:`Agent`, a :class:`Checkpoint` or a checkpoint path.
    """
    agent = source
    if isinstance(source, (str, os.PathLike)):
        source = ck.load(source)
    if isinstance(source, ck.Checkpoint):
        agent = Agent.from_checkpoint(source)
    cfg = agent.cfg
    if env is None:
        env = make_env(cfg.env, T_ep=T_ep or cfg.T_ep or None, terminate_on_violation=False)
    rows = []
    for ep in range(int(episodes)):
        rng = np.random.default_rng([seed, ep, 7])
        state, obs = env.reset(rng)
        ret, viol, steps, inter, ks = 0.0, 0, 0, 0, []
        for _ in range(env.spec.T_ep):
            d = agent.act_eval(obs, n, line_search)
            res = env.step(state, d.chosen_action, rng)
            ret += res.reward
            viol += int(res.violated)
            steps += 1
            inter += int(d.mode != "main")
            ks.append(d.k_star)
            state, obs = res.next_state, res.observation
            if res.done:
                break
        rows.append({"return": ret, "violations": viol, "steps": steps,
                     "interventions": inter, "mean_k_star": float(np.mean(ks))})
    if not rows:
        nan = float("nan")
        return EvalResult(nan, nan, nan, nan, [])
    total = sum(r["steps"] for r in rows)
    return EvalResult(float(np.mean([r["return"] for r in rows])),
                      float(np.mean([r["violations"] for r in rows])),
                      sum(r["interventions"] for r in rows) / total,
                      float(np.mean([r["mean_k_star"] for r in rows])), rows)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    run_dir: str
    checkpoint: str
    metrics_csv: str
    eval_csv: str
    rows: list
    eval_rows: list
    agent: Agent = None
    model: object = None
    real: ReplayBuffer = None
    virtual: ReplayBuffer = None


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _write_csv(path, fields_, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields_)
    for r in rows:
        w.writerow([_fmt(r.get(f)) for f in fields_])
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())
    os.replace(tmp, path)


def _write_manifest(path, items):
    with open(path, "w", encoding="utf-8") as fh:
        for k, v in items.items():
            fh.write(f"{k}: {v}\n")


def make_model(cfg, env, rng):
    if cfg.use_true_model:
        return AnalyticModel(env)
    return EnsembleModel(env.spec.obs_dim, env.spec.action_dim, rng, cfg.n_members,
                         (cfg.model_hidden,) * cfg.model_layers, "swish",
                         learn_h=not env.known_constraint, lr=cfg.model_lr)


def run_training(cfg: TrainConfig, run_dir, progress=None) -> TrainResult:
    """Train one agent; writes metrics.csv, eval.csv, manifest.txt and checkpoints."""
    os.makedirs(run_dir, exist_ok=True)
    ckpt_dir = os.path.join(run_dir, "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)
    metrics_path = os.path.join(run_dir, "metrics.csv")
    eval_path = os.path.join(run_dir, "eval.csv")
    manifest_path = os.path.join(run_dir, "manifest.txt")
    with open(os.path.join(run_dir, "config.toml"), "w", encoding="utf-8") as fh:
        fh.write(cfgmod.serialize(cfg))
    determ = deterministic_mode()
    manifest = {"ablation": cfg.ablation_name(), "config_hash": cfgmod.config_hash(cfg),
                "code_hash": code_hash(), "code_version": __version__, "seed": cfg.seed,
                "env": cfg.env, "deterministic_mode": int(determ), "status": "running"}
    _write_manifest(manifest_path, manifest)

    seeds = np.random.SeedSequence(cfg.seed).spawn(5)
    init_rng, env_rng, upd_rng, model_rng, roll_rng = (np.random.default_rng(s) for s in seeds)
    env = make_env(cfg.env, T_ep=cfg.T_ep or None, terminate_on_violation=cfg.terminate_on_violation)
    T_ep = env.spec.T_ep
    total_steps = cfg.total_episodes * T_ep
    agent = Agent(cfg, env.spec.obs_dim, env.spec.action_dim, init_rng,
                  total_steps + cfg.pretrain_steps)
    model = make_model(cfg, env, model_rng)
    obs_dim, act_dim = env.spec.obs_dim, env.spec.action_dim
    real = ReplayBuffer(cfg.replay_size, obs_dim, act_dim)
    interval = cfg.model_update_interval or max(1, T_ep // 4)
    virt_cap = cfg.virtual_generations * cfg.rollout_batch * cfg.rollout_length * \
        max(1, interval // cfg.rollout_every)
    virtual = ReplayBuffer(min(virt_cap, cfg.replay_size), obs_dim, act_dim)
    h_fn = env.h_from_obs if env.known_constraint else None

    rows, eval_rows = [], []
    state = {"env_steps": 0, "ctv": 0, "episode": 0, "last_ckpt": None}
    t0 = time.perf_counter()

    def save_ckpt(tag):
        ckpt = agent.to_checkpoint(model, {
            "episode": state["episode"], "env_steps": state["env_steps"], "ctv": state["ctv"],
            "ablation": cfg.ablation_name(), "seed": cfg.seed,
            "real_buffer_size": len(real), "virtual_buffer_size": len(virtual),
            "real_obs_mean": real.obs[:len(real)].mean(axis=0).tolist() if len(real) else [],
            "real_obs_std": real.obs[:len(real)].std(axis=0).tolist() if len(real) else [],
            "rng": {n: r.bit_generator.state for n, r in
                    (("env", env_rng), ("update", upd_rng), ("model", model_rng),
                     ("rollout", roll_rng))},
        })
        path = ck.save(os.path.join(ckpt_dir, f"{tag}.ckpt"), ckpt)
        state["last_ckpt"] = path
        return path

    def store(obs, act, res):
        true_done = res.violated and cfg.terminate_on_violation
        real.add(obs, act, res.reward, res.observation, res.h_scalar, float(true_done),
                 res.violated)

    def rollout():
        if cfg.real_ratio >= 1.0 or not model.trained:
            return
        start = real.sample(cfg.rollout_batch, roll_rng)["obs"]
        cols, dropped = branched_rollout(
            model, lambda o: agent.rollout_actions(o, roll_rng), start, cfg.rollout_length,
            roll_rng, h_fn, cfg.terminate_on_violation)
        if dropped:
            log.warning("dropped %d non-finite model transitions", dropped)
        if len(cols["obs"]):
            virtual.add_batch(cols["obs"], cols["act"], cols["rew"], cols["obs2"], cols["h"],
                              cols["done"], cols["violated"])

    def grouped_updates(stats):
        for i in range(max(cfg.critic_updates, cfg.actor_updates, cfg.multiplier_updates)):
            batch = mixed_sample(real, virtual, cfg.batch_size, cfg.real_ratio, upd_rng)
            if i < cfg.critic_updates:
                agent.update_critics(batch, upd_rng, stats)
            if i < cfg.actor_updates:
                agent.update_actors(batch, upd_rng, stats)
            if i < cfg.multiplier_updates:
                agent.update_multiplier(batch, upd_rng, stats)

    try:
        # warm-up: uniform random actions, gate off; violations count toward CTV
        while len(real) < cfg.warmup_size:
            s, obs = env.reset(env_rng)
            for _ in range(T_ep):
                a = env_rng.uniform(-1.0, 1.0, size=act_dim)
                res = env.step(s, a, env_rng)
                store(obs, a, res)
                state["env_steps"] += 1
                state["ctv"] += int(res.violated)
                s, obs = res.next_state, res.observation
                if res.done or len(real) >= cfg.warmup_size:
                    break
        manifest["warmup_violations"] = state["ctv"]
        model_nll = None
        if len(real) >= 2:
            fit = model.train(real, cfg.model_initial_updates, batch_size=cfg.model_batch,
                              warmup=min(cfg.warmup_size, len(real)))
            model_nll = float(np.mean(fit["holdout"]))
        # optional burst of updates on warm-up and model data before interacting
        pre_stats = _Stats()
        for i in range(cfg.pretrain_steps):
            if i % cfg.rollout_every == 0:
                rollout()
            grouped_updates(pre_stats)
        since_fit = 0
        for ep in range(cfg.total_episodes):
            stats = _Stats()
            s, obs = env.reset(env_rng)
            ret, viol, inter, ks = 0.0, 0, 0, []
            for _ in range(T_ep):
                d = agent.act_train(obs, upd_rng)
                res = env.step(s, d.chosen_action, env_rng)
                store(obs, d.chosen_action, res)
                state["env_steps"] += 1
                ret += res.reward
                viol += int(res.violated)
                inter += int(d.mode == "shield")
                ks.append(d.k_star)
                s, obs = res.next_state, res.observation
                since_fit += 1
                if not isinstance(model, AnalyticModel) and since_fit >= interval and \
                        cfg.model_gd_steps > 0:
                    fit = model.train(real, cfg.model_gd_steps, batch_size=cfg.model_batch)
                    model_nll = float(np.mean(fit["holdout"]))
                    stats.add("model_nll", model_nll)
                    since_fit = 0
                if state["env_steps"] % cfg.rollout_every == 0:
                    rollout()
                grouped_updates(stats)
                if res.done:
                    break
            state["ctv"] += viol
            state["episode"] = ep + 1
            row = {"episode": ep + 1, "env_steps": state["env_steps"], "episode_return": ret,
                   "episode_violations": viol, "cumulative_training_violations": state["ctv"],
                   "shield_interventions": inter, "mean_k_star": float(np.mean(ks)),
                   "mean_lambda": stats.mean("mean_lambda"),
                   "mean_Z_beta": stats.mean("mean_Z_beta"),
                   "model_nll": stats.mean("model_nll"), "q_loss": stats.mean("q_loss"),
                   "drc_loss": stats.mean("drc_loss"), "shield_loss": stats.mean("shield_loss"),
                   "policy_loss": stats.mean("policy_loss"), "alpha": agent.alpha,
                   "wall_seconds": 0.0 if determ else time.perf_counter() - t0}
            if ep == 0 and row["model_nll"] is None:
                row["model_nll"] = model_nll
            rows.append(row)
            _write_csv(metrics_path, METRIC_FIELDS, rows)
            if (ep + 1) % cfg.eval_every == 0 or ep + 1 == cfg.total_episodes:
                ev = evaluate(agent, cfg.eval_episodes, cfg.line_search_n, True,
                              seed=cfg.seed * 100003 + ep + 1, T_ep=T_ep)
                eval_rows.append({"episode": ep + 1, "env_steps": state["env_steps"],
                                  "mean_return": ev.mean_return,
                                  "mean_violations": ev.mean_violations,
                                  "intervention_rate": ev.intervention_rate,
                                  "mean_k_star": ev.mean_k_star, "episodes": len(ev.episodes)})
                _write_csv(eval_path, EVAL_FIELDS, eval_rows)
            if (ep + 1) % cfg.checkpoint_every == 0:
                save_ckpt(f"episode_{ep + 1:04d}")
            if progress is not None:
                progress(row)
        if not rows:
            _write_csv(metrics_path, METRIC_FIELDS, rows)
        if not eval_rows:
            _write_csv(eval_path, EVAL_FIELDS, eval_rows)
        final = save_ckpt("final")
    except (NumericalError, ConvergenceError, DataError, EnvError) as e:
        manifest.update(status="aborted", error=f"{type(e).__name__}: {e}",
                        last_checkpoint=state["last_ckpt"] or "none",
                        episodes_completed=state["episode"])
        _write_manifest(manifest_path, manifest)
        raise
    manifest.update(status="completed", episodes_completed=state["episode"],
                    env_steps=state["env_steps"], cumulative_training_violations=state["ctv"],
                    final_checkpoint=os.path.relpath(final, run_dir))
    _write_manifest(manifest_path, manifest)
    return TrainResult(run_dir, final, metrics_path, eval_path, rows, eval_rows, agent, model,
                       real, virtual)


def read_metrics(path):
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{path} is empty")
        return list(reader.fieldnames), list(reader)


__all__ = ["Agent", "EvalResult", "METRIC_FIELDS", "TrainResult", "evaluate", "mixed_sample",
           "read_metrics", "run_training"]
