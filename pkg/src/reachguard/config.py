"""Run configuration: defaults, sectioned key=value files and overrides.

Files use a TOML-compatible subset::

    [env]
    name = "cartpole_move"
    T_ep = 200

    [trainer]
    seed = 7

Unspecified fields take the off-policy defaults for the chosen environment.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import re
from dataclasses import dataclass, field, fields

from .envs import ENVIRONMENTS
from .errors import ConfigurationError

SECTIONS = ("env", "model", "drc", "policy", "trainer", "ablation")


def _f(default, section):
    return field(default=default, metadata={"section": section})


class ConfigParseError(ConfigurationError):
    def __init__(self, message, line=None, column=None):
        loc = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(message + loc)
        self.line = line
        self.column = column


@dataclass
class TrainConfig:
    # [env]
    env: str = _f("cartpole_move", "env")
    T_ep: int = _f(0, "env")  # 0 -> environment default
    terminate_on_violation: bool = _f(True, "env")
    # [model]
    use_true_model: bool = _f(False, "model")
    n_members: int = _f(5, "model")
    model_hidden: int = _f(200, "model")
    model_layers: int = _f(2, "model")
    model_lr: float = _f(1e-3, "model")
    model_batch: int = _f(256, "model")
    model_initial_updates: int = _f(10000, "model")
    model_gd_steps: int = _f(1000, "model")
    model_update_interval: int = _f(0, "model")  # 0 -> T_ep // 4
    rollout_length: int = _f(10, "model")
    rollout_batch: int = _f(100, "model")
    rollout_every: int = _f(1, "model")
    virtual_generations: int = _f(5, "model")
    # [drc]
    phi_inv_beta: float = _f(2.0, "drc")
    drc_log_std_min: float = _f(-20.0, "drc")
    shield_alpha_init: float = _f(0.1, "drc")
    # [policy]
    hidden: int = _f(256, "policy")
    layers: int = _f(2, "policy")
    gamma: float = _f(0.99, "policy")
    tau: float = _f(0.005, "policy")
    critic_lr_start: float = _f(3e-4, "policy")
    critic_lr_end: float = _f(8e-5, "policy")
    actor_lr_start: float = _f(1e-4, "policy")
    actor_lr_end: float = _f(4e-5, "policy")
    alpha_lr: float = _f(0.0, "policy")  # 0 -> actor_lr_start
    multiplier_lr_start: float = _f(3e-4, "policy")
    multiplier_lr_end: float = _f(1e-5, "policy")
    alpha_init: float = _f(0.1, "policy")
    lam_max: float = _f(100.0, "policy")
    entropy_in_target: bool = _f(True, "policy")
    twin_q: bool = _f(False, "policy")
    adam_beta1: float = _f(0.99, "policy")
    adam_beta2: float = _f(0.999, "policy")
    # [trainer]
    seed: int = _f(0, "trainer")
    total_episodes: int = _f(50, "trainer")
    batch_size: int = _f(256, "trainer")
    real_ratio: float = _f(0.1, "trainer")
    warmup_size: int = _f(1000, "trainer")
    pretrain_steps: int = _f(0, "trainer")
    replay_size: int = _f(500000, "trainer")
    critic_updates: int = _f(10, "trainer")
    actor_updates: int = _f(5, "trainer")
    multiplier_updates: int = _f(2, "trainer")
    eval_every: int = _f(2, "trainer")
    eval_episodes: int = _f(5, "trainer")
    line_search_n: int = _f(10, "trainer")
    checkpoint_every: int = _f(10, "trainer")
    # [ablation]
    use_shield: bool = _f(True, "ablation")
    use_distributional: bool = _f(True, "ablation")
    constraint_on: str = _f("shield", "ablation")
    unconstrained: bool = _f(False, "ablation")

    def __post_init__(self):
        self.validate()

    # -- derived -----------------------------------------------------------
    @property
    def k(self):
        """Quantile multiplier actually used (0 when the distributional part is off)."""
        return self.phi_inv_beta if self.use_distributional else 0.0

    @property
    def shield_active(self):
        return self.use_shield and not self.unconstrained

    def ablation_name(self):
        if self.unconstrained:
            name = "DRPO-vanilla"
        elif self.use_shield and self.use_distributional:
            name = "DRPO"
        elif self.use_shield:
            name = "DRPO-shield only"
        elif self.use_distributional:
            name = "DRPO-uncertainty only"
        else:
            name = "DRPO-expected certificate"
        if self.constraint_on == "current" and not self.unconstrained:
            name += " (constraint on current policy)"
        return name

    def validate(self):
        if self.env not in ENVIRONMENTS:
            raise ConfigurationError(f"unknown environment {self.env!r}")
        if self.constraint_on not in ("shield", "current"):
            raise ConfigurationError("ablation.constraint_on must be 'shield' or 'current'")
        if self.unconstrained and self.use_shield:
            raise ConfigurationError("ablation.unconstrained requires ablation.use_shield = false")
        positive = ("n_members", "model_hidden", "model_layers", "model_batch", "rollout_length",
                    "rollout_batch", "rollout_every", "virtual_generations", "hidden", "layers",
                    "batch_size", "replay_size", "line_search_n", "eval_episodes",
                    "checkpoint_every", "eval_every")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        for name in ("model_lr", "critic_lr_start", "critic_lr_end", "actor_lr_start",
                     "actor_lr_end", "multiplier_lr_start", "multiplier_lr_end", "lam_max"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigurationError("gamma must lie in [0, 1)")
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigurationError("tau must lie in [0, 1]")
        if not 0.0 < self.real_ratio <= 1.0:
            raise ConfigurationError("real_ratio must lie in (0, 1]")
        for name in ("T_ep", "total_episodes", "warmup_size", "critic_updates", "actor_updates",
                     "multiplier_updates", "model_initial_updates", "model_gd_steps",
                     "model_update_interval", "seed", "pretrain_steps"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be non-negative")
        if self.n_members < 2:
            raise ConfigurationError("n_members must be at least 2")

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    @classmethod
    def for_env(cls, env, **kw):
        """Defaults for ``env`` (per-task values from the hyperparameter table)."""
        return cls(**{**env_defaults(env), **kw})


def env_defaults(env):
    base = {"env": env}
    if env == "cartpole_move":
        base.update(phi_inv_beta=2.0, warmup_size=1000, replay_size=500000, total_episodes=50)
    elif env == "quadrotor2d":
        base.update(phi_inv_beta=2.0, warmup_size=1800, replay_size=360000, total_episodes=100)
    elif env == "pointnav":
        base.update(phi_inv_beta=1.0, warmup_size=5000, replay_size=500000, total_episodes=100,
                    actor_lr_start=8e-5, actor_lr_end=4e-5)
    elif env == "double_integrator":
        base.update(phi_inv_beta=2.0, warmup_size=500, replay_size=100000, total_episodes=30)
    else:
        raise ConfigurationError(f"unknown environment {env!r}")
    return base


FIELDS = {f.name: f for f in fields(TrainConfig)}
SECTION_OF = {f.name: f.metadata["section"] for f in fields(TrainConfig)}


def _format(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return '"' + v + '"'
    if isinstance(v, float):
        return repr(v)
    return str(v)


def serialize(cfg: TrainConfig) -> str:
    out = []
    for sec in SECTIONS:
        out.append(f"[{sec}]")
        for f in fields(TrainConfig):
            if f.metadata["section"] == sec:
                out.append(f"{'name' if f.name == 'env' else f.name} = {_format(getattr(cfg, f.name))}")
        out.append("")
    return "\n".join(out)


def config_hash(cfg: TrainConfig) -> str:
    return hashlib.sha256(serialize(cfg).encode("utf-8")).hexdigest()[:16]


def _key_to_field(section, key):
    name = "env" if (section == "env" and key == "name") else key
    if name not in FIELDS or SECTION_OF[name] != section:
        raise ConfigurationError(f"unknown config key {section}.{key}")
    return name


def _convert(name, raw):
    ftype = FIELDS[name].type
    text = raw.strip()
    if ftype in ("bool", bool):
        low = text.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"expected true/false, got {text!r}")
    if ftype in ("int", int):
        return int(text)
    if ftype in ("float", float):
        return float(text)
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    return text


def _locate(text, section, key):
    cur = None
    for i, line in enumerate(text.splitlines(), start=1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            cur = m.group(1).strip()
            continue
        m = re.match(r"(\s*)([A-Za-z_][\w]*)\s*=\s*", line)
        if m and cur == section and m.group(2) == key:
            return i, m.end() + 1
    return None, None


def parse(text: str, overrides=()) -> TrainConfig:
    """Parse config text, then apply ``section.key=value`` overrides."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",),
                                   strict=True, empty_lines_in_values=False)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.MissingSectionHeaderError as e:
        raise ConfigParseError("missing [section] header", e.lineno, 1) from None
    except configparser.DuplicateOptionError as e:
        raise ConfigParseError(f"duplicate key {e.section}.{e.option}", e.lineno, 1) from None
    except configparser.DuplicateSectionError as e:
        raise ConfigParseError(f"duplicate section [{e.section}]", e.lineno, 1) from None
    except configparser.ParsingError as e:
        lineno, line = e.errors[0]
        raise ConfigParseError(f"cannot parse {line.strip()!r}", lineno, 1) from None
    values = {}
    for sec in cp.sections():
        if sec not in SECTIONS:
            line, _ = _locate_section(text, sec)
            raise ConfigParseError(f"unknown section [{sec}]", line, 1)
        for key, raw in cp.items(sec):
            line, col = _locate(text, sec, key)
            try:
                name = _key_to_field(sec, key)
            except ConfigurationError as e:
                raise ConfigParseError(str(e), line, 1) from None
            try:
                values[name] = _convert(name, raw)
            except ValueError as e:
                raise ConfigParseError(f"bad value for {sec}.{key}: {e}", line, col) from None
    over = {}
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigurationError(f"override {item!r} must look like section.key=value")
        lhs, raw = item.split("=", 1)
        sec, key = lhs.strip().split(".", 1)
        if sec not in SECTIONS:
            raise ConfigurationError(f"unknown config key {lhs.strip()}")
        name = _key_to_field(sec, key)
        try:
            over[name] = _convert(name, raw)
        except ValueError as e:
            raise ConfigurationError(f"bad value for override {lhs.strip()}: {e}") from None
    env = over.get("env", values.get("env", TrainConfig.env))
    merged = {**env_defaults(env), **values, **over}
    if merged.get("unconstrained") and "use_shield" not in values and "use_shield" not in over:
        merged["use_shield"] = False
    return TrainConfig(**merged)


def _locate_section(text, sec):
    for i, line in enumerate(text.splitlines(), start=1):
        if re.match(r"\s*\[" + re.escape(sec) + r"\]", line):
            return i, 1
    return None, None


def load(path, overrides=()) -> TrainConfig:
    with open(path, encoding="utf-8") as fh:
        return parse(fh.read(), overrides)
