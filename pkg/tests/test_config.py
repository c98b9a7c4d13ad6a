import dataclasses

import pytest
from hypothesis import given
from hypothesis import strategies as st

from reachguard import config as cfgmod
from reachguard.config import ConfigParseError, TrainConfig
from reachguard.errors import ConfigurationError


def test_defaults_follow_environment():
    c = cfgmod.parse("[env]\nname = \"pointnav\"\n")
    assert c.phi_inv_beta == 1.0 and c.warmup_size == 5000
    c = cfgmod.parse("")
    assert c.env == "cartpole_move" and c.phi_inv_beta == 2.0 and c.warmup_size == 1000
    assert (c.critic_updates, c.actor_updates, c.multiplier_updates) == (10, 5, 2)
    assert (c.gamma, c.tau, c.batch_size, c.real_ratio) == (0.99, 0.005, 256, 0.1)


def test_round_trip_is_fixed_point():
    c = cfgmod.parse("[env]\nname = \"quadrotor2d\"\n[trainer]\nseed = 7\n[policy]\ntau = 0.01\n")
    text = cfgmod.serialize(c)
    again = cfgmod.parse(text)
    assert again == c
    assert cfgmod.serialize(again) == text


@given(st.integers(0, 10 ** 6), st.floats(0.0, 0.999), st.booleans(), st.floats(-1, 3),
       st.sampled_from(["shield", "current"]))
def test_round_trip_property(seed, gamma, distributional, k, target):
    c = TrainConfig.for_env("double_integrator", seed=seed, gamma=gamma,
                            use_distributional=distributional, phi_inv_beta=k,
                            constraint_on=target)
    assert cfgmod.parse(cfgmod.serialize(c)) == c


def test_unknown_key_reports_line_and_column():
    text = "[env]\nname = \"cartpole_move\"\n\n[trainer]\nseed = 1\nsede = 2\n"
    with pytest.raises(ConfigParseError) as exc:
        cfgmod.parse(text)
    assert exc.value.line == 6 and exc.value.column == 1
    assert "trainer.sede" in str(exc.value)


def test_bad_value_and_unknown_section():
    with pytest.raises(ConfigParseError) as exc:
        cfgmod.parse("[trainer]\nseed = seven\n")
    assert exc.value.line == 2 and exc.value.column == 8
    with pytest.raises(ConfigParseError, match="unknown section"):
        cfgmod.parse("[trainr]\nseed = 1\n")
    with pytest.raises(ConfigParseError, match="line 1"):
        cfgmod.parse("seed = 1\n")


def test_overrides():
    c = cfgmod.parse("[trainer]\nseed = 1\n", ["trainer.seed=7", "policy.twin_q=true"])
    assert c.seed == 7 and c.twin_q is True
    with pytest.raises(ConfigurationError, match="trainer.sed"):
        cfgmod.parse("", ["trainer.sed=7"])
    with pytest.raises(ConfigurationError):
        cfgmod.parse("", ["seed=7"])


def test_unconstrained_implies_shield_off_and_vanilla_name():
    c = cfgmod.parse("", ["ablation.unconstrained=true"])
    assert not c.use_shield and not c.shield_active
    assert c.ablation_name() == "DRPO-vanilla"
    with pytest.raises(ConfigurationError):
        cfgmod.parse("", ["ablation.unconstrained=true", "ablation.use_shield=true"])


def test_ablation_names_and_k():
    base = TrainConfig()
    assert base.ablation_name() == "DRPO"
    assert base.replace(use_shield=False).ablation_name() == "DRPO-uncertainty only"
    no_dist = base.replace(use_distributional=False)
    assert no_dist.ablation_name() == "DRPO-shield only" and no_dist.k == 0.0
    assert base.replace(constraint_on="current").ablation_name().endswith(
        "(constraint on current policy)")


@pytest.mark.parametrize("field, value", [("batch_size", 0), ("gamma", 1.0), ("tau", 1.5),
                                          ("real_ratio", 0.0), ("n_members", 1),
                                          ("env", "atari"), ("constraint_on", "both"),
                                          ("critic_lr_start", -1.0)])
def test_validation(field, value):
    with pytest.raises(ConfigurationError):
        dataclasses.replace(TrainConfig(), **{field: value})


def test_hash_changes_with_content():
    a = TrainConfig()
    assert cfgmod.config_hash(a) == cfgmod.config_hash(TrainConfig())
    assert cfgmod.config_hash(a) != cfgmod.config_hash(a.replace(seed=1))
    assert len(cfgmod.config_hash(a)) == 16


def test_every_field_addressable():
    text = cfgmod.serialize(TrainConfig())
    for f in dataclasses.fields(TrainConfig):
        key = "name" if f.name == "env" else f.name
        assert f"\n{key} = " in "\n" + text
