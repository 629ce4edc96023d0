"""Config parsing and scenario coherence checks."""

import pytest

from shadowalign.config import ExperimentConfig, parse_config
from shadowalign.errors import ConfigError


def test_defaults_validate():
    ExperimentConfig().validate()


def test_parse_all_value_kinds():
    cfg = parse_config(
        """
        # a comment line
        seed = 17
        scenario = S6          # trailing comment
        layer_sizes = 16, 32, 8
        dropout_p = 0.25
        include_ia = false
        overlap = identical
        aux_size = 500
        target_pool_size = 500
        cause_conditions = same, diff_wi
        dataset = blobs
        """
    )
    assert cfg.seed == 17
    assert cfg.scenario == "S6"
    assert cfg.layer_sizes == [16, 32, 8]
    assert cfg.dropout_p == 0.25
    assert cfg.include_ia is False
    assert cfg.cause_conditions == ["same", "diff_wi"]


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config("not_a_key = 3")


def test_malformed_line_rejected():
    with pytest.raises(ConfigError, match="key = value"):
        parse_config("just some words")


def test_bad_scenario_rejected():
    with pytest.raises(ConfigError):
        parse_config("scenario = S10")


def test_bad_boolean_rejected():
    with pytest.raises(ConfigError, match="boolean"):
        parse_config("include_ia = maybe")


def test_shadow_scenarios_need_two_shadows():
    with pytest.raises(ConfigError, match="k_shadows"):
        parse_config("scenario = S3\nk_shadows = 1")


def test_identical_pools_must_match():
    with pytest.raises(ConfigError):
        parse_config("overlap = identical\naux_size = 10\ntarget_pool_size = 20").partition_spec()


def test_unknown_cause_condition_rejected():
    with pytest.raises(ConfigError, match="cause condition"):
        parse_config("cause_conditions = everything_different")


def test_train_config_bridge():
    cfg = parse_config("lr = 0.02\npatience = 3\nmin_lr = 1e-4")
    tc = cfg.train_config()
    assert tc.lr == 0.02 and tc.patience == 3 and tc.min_lr == 1e-4
