import pytest
import yaml

from aafm import config
from aafm.errors import ConfigError

BASE = {
    "data": {
        "interactions": "inter.tsv",
        "domains": [{"name": "user", "column": "u", "side": "user"},
                    {"name": "item", "column": "i", "side": "item"}],
        "user_domain": "user",
        "item_domain": "item",
    },
    "train": {"epochs": 2, "adversary": {"base_epsilon": 0.5, "lambda_fixed": 1.0, "t": 100}},
    "variant": "aafm",
    "seed": 7,
}


def write(tmp_path, raw):
    p = tmp_path / "exp.yaml"
    p.write_text(yaml.safe_dump(raw))
    return p


# (adaptive_epsilon, adaptive_lambda, decay, base_epsilon, lambda_fixed)
EXPECTED = {
    "fm": (False, False, False, 0.0, 0.0),
    "advfm": (False, False, False, 0.5, 1.0),
    "aafm-lambda": (False, True, False, 0.5, 1.0),
    "aafm-epsilon": (True, False, False, 0.5, 1.0),
    "aafm": (True, True, False, 0.5, 1.0),
    "d-aafm": (True, True, True, 0.5, 1.0),
}


@pytest.mark.parametrize("variant", sorted(EXPECTED))
def test_variant_flag_matrix(tmp_path, variant):
    cfg = config.load_config(write(tmp_path, BASE), [f"variant={variant}"])
    adv = cfg.train.adversary
    assert (adv.adaptive_epsilon, adv.adaptive_lambda, adv.decay, adv.base_epsilon, adv.lambda_fixed) == EXPECTED[variant]
    assert adv.active == (variant != "fm")


def test_unknown_variant(tmp_path):
    with pytest.raises(ConfigError):
        config.load_config(write(tmp_path, BASE), ["variant=nfm"])


def test_overrides_and_seed_propagation(tmp_path):
    cfg = config.load_config(write(tmp_path, BASE), ["train.epochs=5", "train.adversary.t=50", "seed=3"])
    assert cfg.train.epochs == 5
    assert cfg.train.adversary.t == 50
    assert cfg.train.seed == 3


def test_relative_paths_resolve_against_config_dir(tmp_path):
    cfg = config.load_config(write(tmp_path, BASE))
    assert cfg.data.interactions == str(tmp_path / "inter.tsv")


def test_hash_stable_and_sensitive(tmp_path):
    p = write(tmp_path, BASE)
    a = config.load_config(p)
    assert a.digest() == config.load_config(p).digest()
    assert a.digest() != config.load_config(p, ["train.learning_rate=0.01"]).digest()
    # switching variants does not lose the configured strengths
    back = a.with_overrides(variant="fm").with_overrides(variant="advfm")
    assert back.train.adversary.base_epsilon == 0.5


def test_stamp_lines(tmp_path):
    cfg = config.load_config(write(tmp_path, BASE), ["variant=fm"])
    stamp = cfg.stamp("abc")
    assert stamp[0] == f"config_hash={cfg.digest()}"
    assert "seed=7" in stamp and "data_hash=abc" in stamp and "adversary=off" in stamp
    assert any(s.startswith("code_version=") for s in stamp)


@pytest.mark.parametrize("override", ["train.epochs=0", "train.optimizer=lbfgs", "train.adversary.t=0.5",
                                      "eval.probe_mode=loud", "train.bogus=1", "noequals"])
def test_bad_values_are_config_errors(tmp_path, override):
    with pytest.raises(ConfigError):
        config.load_config(write(tmp_path, BASE), [override])


def test_missing_file_and_bad_yaml(tmp_path):
    with pytest.raises(ConfigError):
        config.load_config(tmp_path / "none.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("data: [unclosed")
    with pytest.raises(ConfigError):
        config.load_config(bad)
    with pytest.raises(ConfigError):
        config.load_config(write(tmp_path, {"variant": "fm"}))


def test_output_root_env(tmp_path, monkeypatch):
    cfg = config.load_config(write(tmp_path, BASE))
    monkeypatch.setenv("AAFM_OUTPUT_ROOT", str(tmp_path / "root"))
    assert cfg.output_path() == tmp_path / "root" / "runs" / "default"
