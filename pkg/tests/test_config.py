from dataclasses import replace

import pytest

from cckd.config import (DEFAULT_CONFIG, RunConfig, effective_text, load_config, parse_config,
                         parse_variants)
from cckd.errors import ConfigError
from cckd.losses import LossWeights
from cckd.training import ALL_VARIANTS, Variant


def test_empty_config_is_all_defaults():
    assert parse_config("") == RunConfig()


def test_packaged_default_matches_dataclass_defaults():
    assert DEFAULT_CONFIG.is_file()
    assert load_config(DEFAULT_CONFIG) == RunConfig()


def test_effective_text_round_trips():
    cfg = parse_config("""
[synth]
n_pairs = 50
beta_note = 1.25
[train]
hidden_dims = 32, 16
activation = tanh
[loss]
tau_ckd = 0.3
symmetric_infonce = yes
[run]
variants = teacher, ckd
figures = off
""")
    assert cfg.synth.n_pairs == 50 and cfg.synth.beta_note == 1.25
    assert cfg.train.hidden_dims == (32, 16) and cfg.train.activation == "tanh"
    assert cfg.loss == replace(LossWeights(), tau_ckd=0.3, symmetric_infonce=True)
    assert cfg.run.variants == (Variant.TEACHER, Variant.CKD) and cfg.run.figures is False
    assert parse_config(effective_text(cfg)) == cfg


def test_effective_text_lists_every_field():
    text = effective_text(RunConfig())
    for key in ("n_pairs", "beta_struct", "lr", "patience", "tau_contrastive", "eps_clamp", "n_boot", "variants"):
        assert f"\n{key} = " in text


@pytest.mark.parametrize("text, match", [
    ("[model]\nx = 1\n", "unknown config section"),
    ("[train]\nlearning_rate = 0.1\n", "unknown key"),
    ("[train]\nepochs = many\n", "epochs"),
    ("[loss]\ntau_ckd = 0\n", "temperature"),
    ("[run]\nvariants = teacher, bogus\n", "unknown variant"),
    ("[synth]\nn_pairs = 3\n", "n_pairs"),
    ("[run]\nfigures = maybe\n", "boolean"),
    ("not an ini file", "cannot parse"),
])
def test_bad_configs(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(text)


def test_env_var_and_missing_file(tmp_path, monkeypatch):
    p = tmp_path / "x.cfg"
    p.write_text("[run]\nseed = 17\n")
    monkeypatch.setenv("CCKD_CONFIG", str(p))
    assert load_config().run.seed == 17
    assert load_config(DEFAULT_CONFIG).run.seed == 0
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.cfg")


def test_parse_variants():
    assert parse_variants("teacher,ehr_only") == (Variant.TEACHER, Variant.EHR_ONLY)
    assert parse_variants(", ".join(v.value for v in ALL_VARIANTS)) == ALL_VARIANTS
