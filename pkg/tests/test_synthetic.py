import json

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from transpotter_kit import synthetic as sy
from transpotter_kit.errors import ConfigError

from .context import SYNTH_DIR, sample, synth_config, synth_summary, transpotter_kit


def clean_config(**kwargs):
    return sy.SyntheticConfig(**({"noise": 0.0, "blend": 0, "vocab_size": 10} | kwargs))


def test_synthetic_config():
    cfg = sy.SyntheticConfig()
    assert (cfg.vocab_size, cfg.d_in, cfg.noise) == (50, 64, 0.1)
    assert (cfg.num_train, cfg.num_test) == (500, 100)
    assert sy.SyntheticConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        sy.SyntheticConfig(blend=2, frames_per_phoneme=3)
    with pytest.raises(ConfigError):
        sy.SyntheticConfig(noise=-1)
    with pytest.raises(ConfigError):
        sy.SyntheticConfig(num_homophemes=11)
    with pytest.raises(ConfigError):
        sy.SyntheticConfig.from_dict({"sigma": 0.1})


def test_make_world():
    cfg = clean_config()
    world = sy.make_world(cfg, np.random.default_rng(0))
    assert len(world.lexicon) == cfg.vocab_size
    prons = [world.lexicon[w][0] for w in world.lexicon]
    assert len(set(prons)) == len(prons)
    assert all(cfg.min_phonemes <= len(p) <= cfg.max_phonemes for p in prons)
    for s, v in world.signatures.items():
        assert np.linalg.norm(v) == pytest.approx(1)
    assert world.homophemes == []


def test_realize_phonemes():
    cfg = clean_config()
    world = sy.make_world(cfg, np.random.default_rng(0))
    frames = sy.realize_phonemes(world, ["AA", "B"], cfg, np.random.default_rng(1))
    assert frames.shape == (6, cfg.d_in)
    assert frames.dtype == np.float32
    for i, s in enumerate(["AA", "AA", "AA", "B", "B", "B"]):
        assert_array_equal(frames[i], world.signatures[s].astype(np.float32))

    # Cross-fade over one frame on either side of the joint
    cfg = clean_config(blend=1)
    frames = sy.realize_phonemes(world, ["AA", "B"], cfg, np.random.default_rng(1))
    a, b = world.signatures["AA"], world.signatures["B"]
    assert_allclose(frames[2], 0.75 * a + 0.25 * b, rtol=1e-6)
    assert_allclose(frames[3], 0.25 * a + 0.75 * b, rtol=1e-6)
    assert_allclose(frames[0], a, rtol=1e-6)


def test_noiseless_frames_are_separable():
    cfg = clean_config()
    rng = np.random.default_rng(2)
    world = sy.make_world(cfg, rng)
    record, features = sy.make_clip(world, cfg, rng, "c0")
    symbols = sorted(world.signatures)
    matrix = np.stack([world.signatures[s] for s in symbols])
    predicted = [symbols[i] for i in (features.values @ matrix.T).argmax(axis=1)]
    expected = [
        s
        for w in record.transcript
        for s in world.lexicon[w][0]
        for _ in range(cfg.frames_per_phoneme)
    ]
    assert predicted == expected


def test_make_clip():
    cfg = clean_config(max_frames=60)
    rng = np.random.default_rng(3)
    world = sy.make_world(cfg, rng)
    for i in range(20):
        record, features = sy.make_clip(world, cfg, rng, f"c{i}")
        assert features.T <= 60
        assert record.features == f"features/c{i}.tpft"
        record.validate(features.T)
        assert features.T == sum(
            len(world.lexicon[w][0]) * cfg.frames_per_phoneme for w in record.transcript
        )


def test_homophemes():
    cfg = clean_config(num_homophemes=2)
    world = sy.make_world(cfg, np.random.default_rng(4))
    assert len(world.homophemes) == 2
    for a, b in world.homophemes:
        pa, pb = world.lexicon[a][0], world.lexicon[b][0]
        assert pa != pb
        fa = sy.realize_phonemes(world, list(pa), cfg, np.random.default_rng(0))
        fb = sy.realize_phonemes(world, list(pb), cfg, np.random.default_rng(0))
        assert_array_equal(fa, fb)


def test_synthesize_dataset(tmp_path):
    assert synth_summary["num_train_clips"] == synth_config.num_train
    assert synth_summary["vocab_size"] == synth_config.vocab_size
    assert (SYNTH_DIR / "lexicon.txt").exists()
    assert json.loads((SYNTH_DIR / "summary.json").read_text()) == synth_summary
    for clip in sample.clips:
        fs = sample.get_features(clip.id)
        assert fs.T == sum(
            len(sample.lexicon[w][0]) * synth_config.frames_per_phoneme
            for w in clip.transcript
        )

    # Same seed, same bytes
    cfg = clean_config(noise=0.1, num_train=5, num_test=2)
    sy.synthesize_dataset(cfg, tmp_path / "a")
    sy.synthesize_dataset(cfg, tmp_path / "b")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert len(files) == 5 + 2 + 4
    for p in files:
        assert (tmp_path / "a" / p).read_bytes() == (tmp_path / "b" / p).read_bytes()
