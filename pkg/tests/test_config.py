import json
from pathlib import Path

import pytest

from transpotter_kit import config as cf
from transpotter_kit.errors import ConfigError

from .context import transpotter_kit

DESK = Path(__file__).parent.parent / "configs" / "desk.json"


def test_run_config_defaults():
    cfg = cf.RunConfig()
    assert cfg.model.d == 512
    assert cfg.model.d_in == cfg.synth.d_in == 64
    assert cfg.train.lam == 0.5
    assert cfg.eval.tau == 0.5
    assert cfg.paths.lexicon_path == Path("data/synthetic/lexicon.txt")
    assert cf.RunConfig.from_dict(cfg.to_dict()) == cfg


def test_seed_propagation():
    cfg = cf.RunConfig.from_dict({"seed": 9})
    assert cfg.train.seed == cfg.synth.seed == 9
    with pytest.raises(ConfigError):
        cf.RunConfig.from_dict({"seed": -1})
    with pytest.raises(ConfigError):
        cf.RunConfig.from_dict({"seed": True})

    # Explicit section seeds win over the top-level one
    cfg = cf.load_run_config(None, {"train.seed": 5, "synth.seed": 9})
    assert (cfg.seed, cfg.train.seed, cfg.synth.seed) == (0, 5, 9)
    cfg = cf.RunConfig.from_dict({"seed": 2, "train": {"seed": 7}})
    assert (cfg.train.seed, cfg.synth.seed) == (7, 2)


def test_parse_overrides():
    assert cf.parse_overrides(["--model.d", "64", "--train.lam=0.7"]) == {
        "model.d": 64,
        "train.lam": 0.7,
    }
    assert cf.parse_overrides(["--model.activation=gelu"]) == {"model.activation": "gelu"}
    assert cf.parse_overrides(["--eval.ks=[1,10]"]) == {"eval.ks": [1, 10]}
    assert cf.parse_overrides([]) == {}
    with pytest.raises(ConfigError):
        cf.parse_overrides(["--verbose"])
    with pytest.raises(ConfigError):
        cf.parse_overrides(["model.d", "64"])
    with pytest.raises(ConfigError):
        cf.parse_overrides(["--model.d"])


def test_apply_overrides():
    d = cf.RunConfig().to_dict()
    cf.apply_overrides(d, {"model.d": 64, "seed": 4})
    assert (d["model"]["d"], d["seed"]) == (64, 4)
    with pytest.raises(ConfigError):
        cf.apply_overrides(d, {"model.width": 64})
    with pytest.raises(ConfigError):
        cf.apply_overrides(d, {"optimizer.lr": 0.1})


def test_load_run_config(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"seed": 2, "model": {"heads": 4}, "train": {"epochs": 3}}))
    cfg = cf.load_run_config(path, {"model.d": 64})
    assert (cfg.model.d, cfg.model.heads, cfg.train.epochs) == (64, 4, 3)
    assert cfg.train.seed == 2
    assert cfg.model.text_layers == 3

    # Invalid values surface as config errors
    with pytest.raises(ConfigError):
        cf.load_run_config(path, {"model.d": 63})
    with pytest.raises(ConfigError):
        cf.load_run_config(path, {"train.lam": 2.0})

    path.write_text(json.dumps({"seed": 2, "synth": {"seed": 11}}))
    cfg = cf.load_run_config(path)
    assert (cfg.train.seed, cfg.synth.seed) == (2, 11)

    path.write_text(json.dumps({"model": {"depth": 3}}))
    with pytest.raises(ConfigError):
        cf.load_run_config(path)
    path.write_text(json.dumps({"optimizer": {}}))
    with pytest.raises(ConfigError):
        cf.load_run_config(path)
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        cf.load_run_config(path)
    path.write_text("[]")
    with pytest.raises(ConfigError):
        cf.load_run_config(path)


def test_config_hash():
    a = cf.RunConfig()
    assert len(cf.config_hash(a)) == 12
    assert cf.config_hash(a) == cf.config_hash(cf.RunConfig())
    assert cf.config_hash(a) != cf.config_hash(cf.RunConfig.from_dict({"seed": 1}))


def test_echo_config(tmp_path):
    cfg = cf.load_run_config(None, {"model.d": 64, "seed": 5})
    path = cf.echo_config(cfg, tmp_path / "run")
    assert path == tmp_path / "run" / "config.json"
    again = cf.load_run_config(path)
    assert again == cfg
    assert cf.config_hash(again) == cf.config_hash(cfg)


def test_desk_config():
    cfg = cf.load_run_config(DESK)
    assert (cfg.model.d, cfg.model.heads, cfg.model.d_in) == (64, 4, 64)
    assert (cfg.model.text_layers, cfg.model.video_layers, cfg.model.joint_layers) == (2, 2, 2)
    assert (cfg.synth.vocab_size, cfg.synth.d_in, cfg.synth.noise) == (50, 64, 0.1)
