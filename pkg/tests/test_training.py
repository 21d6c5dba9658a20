import math

import numpy as np
import pandas as pd
import pytest
import torch
from numpy.testing import assert_allclose

from transpotter_kit import model as md
from transpotter_kit import numerics as nx
from transpotter_kit import training as tr
from transpotter_kit.errors import (
    CapabilityError,
    ConfigError,
    DomainError,
    NonFiniteError,
    SamplingError,
)
from transpotter_kit.model import Prediction
from transpotter_kit.phonetics import Query

from .context import random_features, sample, tiny_config, transpotter_kit

LN2 = math.log(2)


def make_pairs(labels, T=6):
    rng = np.random.default_rng(0)
    pairs = []
    for i, y in enumerate(labels):
        y_loc = np.zeros(T, dtype=np.float32)
        span = None
        if y:
            y_loc[1:4] = 1
            span = (1, 4)
        query = Query((3 + i, 8, 12), f"q{i}")
        pairs.append(tr.TrainingPair(random_features(rng, T), query, y, y_loc, span=span))
    return pairs


def constant_prediction(batch, y_cls, y_loc=None):
    B, T = batch.y_loc.shape
    y_cls = torch.as_tensor(y_cls, dtype=torch.float64).expand(B).clone()
    loc = None
    if y_loc is not None:
        loc = torch.as_tensor(y_loc, dtype=torch.float64).expand(B, T).clone()
    return Prediction(y_cls=y_cls, frame_mask=batch.v_mask, loc=loc)


def test_train_config():
    c = tr.TrainConfig()
    assert (c.lam, c.batch_size, c.lr, c.min_lr) == (0.5, 32, 5e-5, 1e-6)
    assert (c.plateau_patience, c.plateau_factor) == (15, 5.0)
    assert tr.TrainConfig.from_dict(c.to_dict()) == c
    with pytest.raises(ConfigError):
        tr.TrainConfig(lam=1.5)
    with pytest.raises(ConfigError):
        tr.TrainConfig(min_lr=1e-3, lr=1e-4)
    with pytest.raises(ConfigError):
        tr.TrainConfig.from_dict({"lambda": 0.5})


def test_training_pair():
    pairs = make_pairs([1, 0])
    assert pairs[0].y_loc.sum() == 3
    with pytest.raises(DomainError):
        tr.TrainingPair(pairs[1].features, pairs[1].query, 0, pairs[0].y_loc)
    with pytest.raises(DomainError):
        tr.TrainingPair(pairs[1].features, pairs[1].query, 1, pairs[1].y_loc, span=(1, 4))
    with pytest.raises(DomainError):
        tr.TrainingPair(pairs[1].features, pairs[1].query, 2, pairs[1].y_loc)


def test_collate():
    rng = np.random.default_rng(1)
    long = tr.TrainingPair(
        random_features(rng, 7), Query((1, 2, 3, 4), "a"), 0, np.zeros(7, dtype=np.float32)
    )
    batch = tr.collate(make_pairs([1]) + [long], torch.float64)
    assert len(batch) == 2
    assert batch.features.shape == (2, 7, 8)
    assert batch.features.dtype == torch.float64
    assert batch.v_mask.sum(dim=1).tolist() == [6, 7]
    assert batch.q_mask.sum(dim=1).tolist() == [3, 4]
    assert batch.y_cls.tolist() == [1, 0]
    assert batch.y_loc[0].tolist() == [0, 1, 1, 1, 0, 0, 0]
    assert batch.span_start.tolist() == [1, -1]
    assert batch.span_last.tolist() == [3, -1]
    with pytest.raises(DomainError):
        tr.collate([])


def test_bce():
    assert float(tr.bce(1, 1.0)) == 0
    assert float(tr.bce(0, 0.0)) == 0
    assert float(tr.bce(0, 0.5)) == pytest.approx(LN2, abs=1e-9)
    assert float(tr.bce(1, 0.75)) == pytest.approx(-math.log(0.75), abs=1e-9)
    assert math.isfinite(float(tr.bce(1, 0.0)))
    assert float(tr.bce(1, 0.0)) == pytest.approx(-math.log(1e-12))


def test_loss_cls():
    batch = tr.collate(make_pairs([1, 0, 1]), torch.float64)
    assert float(tr.loss_cls(constant_prediction(batch, 0.5), batch)) == pytest.approx(LN2)
    perfect = Prediction(y_cls=batch.y_cls.clone(), frame_mask=batch.v_mask)
    assert float(tr.loss_cls(perfect, batch)) == 0

    y_hat = torch.tensor([0.9, 0.2, 0.6], dtype=torch.float64)
    pred = Prediction(y_cls=y_hat, frame_mask=batch.v_mask)
    expected = np.mean([float(tr.bce(y, p)) for y, p in zip([1, 0, 1], [0.9, 0.2, 0.6])])
    assert float(tr.loss_cls(pred, batch)) == pytest.approx(expected, abs=1e-12)


def test_loss_loc():
    batch = tr.collate(make_pairs([0, 0]), torch.float64)
    assert float(tr.loss_loc(constant_prediction(batch, 0.5, 0.3), batch)) == 0

    batch = tr.collate(make_pairs([1]), torch.float64)
    assert float(tr.loss_loc(constant_prediction(batch, 0.5, 0.5), batch)) == pytest.approx(LN2)
    perfect = Prediction(y_cls=batch.y_cls, frame_mask=batch.v_mask, loc=batch.y_loc.clone())
    assert float(tr.loss_loc(perfect, batch)) == 0

    with pytest.raises(CapabilityError):
        tr.loss_loc(constant_prediction(batch, 0.5), batch)


def test_loss_loc_matches_per_sample_recomputation():
    rng = np.random.default_rng(2)
    pairs = make_pairs([1, 0, 1, 1, 0])
    batch = tr.collate(pairs, torch.float64)
    loc = torch.from_numpy(rng.uniform(0.01, 0.99, batch.y_loc.shape))
    pred = Prediction(y_cls=torch.full((5,), 0.5, dtype=torch.float64), frame_mask=batch.v_mask, loc=loc)
    terms = []
    for i, p in enumerate(pairs):
        T = p.features.T
        frames = [float(tr.bce(float(p.y_loc[t]), float(loc[i, t]))) for t in range(T)]
        terms.append(p.y_cls * sum(frames) / T)
    assert float(tr.loss_loc(pred, batch)) == pytest.approx(np.mean(terms), abs=1e-12)
    assert_allclose(tr.loss_loc_per_sample(pred, batch).numpy(), terms, atol=1e-12)


def test_span_loss():
    batch = tr.collate(make_pairs([1, 0]), torch.float64)
    uniform = torch.full(batch.y_loc.shape, 1 / 6, dtype=torch.float64)
    pred = Prediction(
        y_cls=torch.full((2,), 0.5, dtype=torch.float64),
        frame_mask=batch.v_mask,
        span_start=uniform,
        span_end=uniform,
    )
    assert_allclose(tr.loss_loc_per_sample(pred, batch).numpy(), [math.log(6), 0])


def test_total_loss():
    batch = tr.collate(make_pairs([1, 0, 1]), torch.float64)
    rng = np.random.default_rng(3)
    pred = Prediction(
        y_cls=torch.from_numpy(rng.uniform(0.1, 0.9, 3)),
        frame_mask=batch.v_mask,
        loc=torch.from_numpy(rng.uniform(0.1, 0.9, batch.y_loc.shape)),
    )
    cls, loc = tr.loss_cls(pred, batch), tr.loss_loc(pred, batch)
    assert torch.equal(tr.total_loss(pred, batch, 1.0), cls)
    assert torch.equal(tr.total_loss(pred, batch, 0.0), loc)
    assert float(tr.total_loss(pred, batch, 0.3)) == pytest.approx(
        0.3 * float(cls) + 0.7 * float(loc), abs=1e-12
    )

    perfect_loc = Prediction(
        y_cls=torch.full((3,), 0.5, dtype=torch.float64),
        frame_mask=batch.v_mask,
        loc=batch.y_loc.clone(),
    )
    assert float(tr.total_loss(perfect_loc, batch, 0.5)) == pytest.approx(0.5 * LN2)

    no_loc = Prediction(y_cls=pred.y_cls, frame_mask=batch.v_mask)
    assert torch.equal(tr.total_loss(no_loc, batch, 0.5), tr.loss_cls(no_loc, batch))
    with pytest.raises(DomainError):
        tr.total_loss(pred, batch, 1.5)


def test_pair_sampler():
    sampler = tr.PairSampler(sample, min_phonemes=3, min_crop_frames=8, max_frames=160)
    assert all(q.n_p >= 3 for q in sampler.queries.values())
    rng = np.random.default_rng(4)
    num_positive = 0
    n = 10_000
    for _ in range(n):
        pair = sampler.sample(rng)
        clip = sample.get_clip(pair.clip_id)
        T = pair.features.T
        assert T >= min(8, sample.get_features(clip.id).T)
        if pair.y_cls:
            num_positive += 1
            s, e = pair.span
            assert 0 <= s < e <= T
            assert pair.y_loc[s:e].all()
            assert pair.y_loc.sum() >= e - s
            assert pair.query.text in clip.transcript
        else:
            assert not pair.y_loc.any()
            assert pair.query.text not in clip.transcript
    assert 0.48 <= num_positive / n <= 0.52


def test_positive_crops():
    sampler = tr.PairSampler(sample, min_phonemes=2, min_crop_frames=4, max_frames=20)
    rng = np.random.default_rng(5)
    for _ in range(500):
        pair = sampler.sample_positive(rng)
        clip = sample.get_clip(pair.clip_id)
        word_frames = [w.length for w in clip.words if w.word == pair.query.text]
        assert pair.features.T <= 20
        assert pair.features.T >= 4
        assert pair.y_loc.sum() >= min(word_frames)
        # The labelled frames hold the word's own features
        s, e = pair.span
        full = sample.get_features(clip.id).values
        offset = [
            w.start - s
            for w in clip.words
            if w.word == pair.query.text and w.length == e - s
        ]
        assert any(
            np.array_equal(pair.features.values[s:e], full[o + s : o + e]) for o in offset
        )


def test_sample_pair():
    pair = tr.sample_pair(sample, np.random.default_rng(6), min_phonemes=3)
    assert pair.y_cls in (0, 1)
    with pytest.raises(SamplingError):
        tr.PairSampler(sample, min_phonemes=100)


def test_adam_step():
    p = torch.nn.Parameter(torch.zeros(3, dtype=torch.float64))
    state = tr.OptimizerState({"p": p}, tr.TrainConfig(lr=1e-3))
    tr.adam_step({"p": p}, nx.GradientRecord({"p": torch.ones(3, dtype=torch.float64)}), state)
    assert_allclose(p.detach().numpy(), [-1e-3] * 3, rtol=1e-6)
    assert state.step == 1

    # Zero gradients keep parameters, decay moments
    before = p.detach().clone()
    m = state.moments()["exp_avg.p"].clone()
    tr.adam_step({"p": p}, nx.GradientRecord({"p": torch.zeros(3, dtype=torch.float64)}), state)
    assert state.step == 2
    assert_allclose(state.moments()["exp_avg.p"].numpy(), 0.9 * m.numpy())
    assert (p.detach() < before).all()

    before = p.detach().clone()
    bad = nx.GradientRecord({"p": torch.tensor([1.0, math.nan, 0.0], dtype=torch.float64)})
    with pytest.raises(NonFiniteError):
        tr.adam_step({"p": p}, bad, state)
    assert torch.equal(p.detach(), before)
    assert state.step == 2


def test_adam_zero_gradient_from_scratch():
    p = torch.nn.Parameter(torch.ones(2, dtype=torch.float64))
    state = tr.OptimizerState({"p": p}, tr.TrainConfig(lr=1e-3))
    tr.adam_step({"p": p}, nx.GradientRecord({"p": torch.zeros(2, dtype=torch.float64)}), state)
    assert_allclose(p.detach().numpy(), [1, 1])


def test_plateau_schedule():
    p = torch.nn.Parameter(torch.zeros(1))
    config = tr.TrainConfig(lr=1e-3, min_lr=1e-5, plateau_patience=2, plateau_factor=5.0)
    state = tr.OptimizerState({"p": p}, config)
    drops, lrs = [], []
    for _ in range(20):
        drops.append(state.update_schedule(1.0))
        lrs.append(state.lr)
    assert drops[:3] == [False, False, True]
    assert lrs[2] == pytest.approx(2e-4)
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))
    assert min(lrs) >= 1e-5
    assert lrs[-1] == pytest.approx(1e-5)

    # Improvements reset the count
    state = tr.OptimizerState({"p": p}, config)
    for loss in [1.0, 0.9, 0.8, 0.7, 0.6]:
        assert not state.update_schedule(loss)
    assert state.plateau_count == 0
    assert state.best_loss == pytest.approx(0.6)

    # The default patience drops the rate on the 15th flat epoch
    state = tr.OptimizerState({"p": p}, tr.TrainConfig())
    drops = [state.update_schedule(1.0) for _ in range(17)]
    assert drops.index(True) == 15
    with pytest.raises(ConfigError):
        tr.TrainConfig(plateau_patience=0)


def test_optimizer_state_restore():
    p = torch.nn.Parameter(torch.zeros(3))
    config = tr.TrainConfig(lr=1e-3, plateau_patience=1)
    state = tr.OptimizerState({"p": p}, config)
    for loss in [1.0, 1.0, 1.0]:
        state.update_schedule(loss)
    tr.adam_step({"p": p}, nx.GradientRecord({"p": torch.ones(3)}), state)
    d, moments = state.to_dict(), state.moments()

    q = torch.nn.Parameter(p.detach().clone())
    other = tr.OptimizerState({"p": q}, config)
    other.restore(d, moments)
    assert other.to_dict() == d
    g = nx.GradientRecord({"p": torch.full((3,), 0.5)})
    tr.adam_step({"p": p}, g, state)
    tr.adam_step({"p": q}, nx.GradientRecord({"p": torch.full((3,), 0.5)}), other)
    assert torch.equal(p, q)


def test_evaluate_loss():
    model = md.init_parameters(tiny_config)
    pairs = make_pairs([1, 0, 0, 1, 1])
    # A fresh model predicts 0.5 everywhere
    expected = 0.5 * LN2 + 0.5 * LN2 * 3 / 5
    assert tr.evaluate_loss(model, pairs, 0.5, batch_size=2) == pytest.approx(expected, rel=1e-6)


def small_train_config(**kwargs):
    d = dict(
        batch_size=4,
        epochs=2,
        steps_per_epoch=2,
        lr=1e-3,
        val_fraction=0.25,
        val_pairs=8,
        min_phonemes=2,
        seed=7,
    )
    return tr.TrainConfig(**(d | kwargs))


def test_train(tmp_path):
    result = tr.train(tiny_config, small_train_config(), sample, tmp_path / "run")
    run_dir = tmp_path / "run"
    for name in ["best.tpck", "last.tpck", "metrics.csv"]:
        assert (run_dir / name).exists()
    f = pd.read_csv(run_dir / "metrics.csv")
    assert list(f.columns) == ["epoch", "train_loss", "val_loss", "lr"]
    assert f["epoch"].tolist() == [0, 1, 2]
    assert (f["lr"].diff().dropna() <= 0).all()
    assert result.best_val_loss == pytest.approx(f["val_loss"].min())
    assert result.best_epoch == int(f["val_loss"].idxmin())
    assert result.model.config == tiny_config

    # Same seeds, same log
    tr.train(tiny_config, small_train_config(), sample, tmp_path / "again")
    assert (tmp_path / "again" / "metrics.csv").read_bytes() == (
        run_dir / "metrics.csv"
    ).read_bytes()


def test_train_resume(tmp_path):
    tr.train(tiny_config, small_train_config(epochs=3), sample, tmp_path / "full")
    tr.train(tiny_config, small_train_config(epochs=1), sample, tmp_path / "part")
    tr.train(tiny_config, small_train_config(epochs=3), sample, tmp_path / "part", resume=True)
    assert (tmp_path / "part" / "metrics.csv").read_bytes() == (
        tmp_path / "full" / "metrics.csv"
    ).read_bytes()


def test_train_without_localization(tmp_path):
    config = md.ModelConfig(**(tiny_config.to_dict() | {"variant": "transpotter_no_loc"}))
    result = tr.train(config, small_train_config(epochs=1), sample, tmp_path / "run")
    assert result.metrics.shape[0] == 2
    # Epoch 0 loss of a fresh classifier is exactly the coin-flip entropy
    assert result.metrics["val_loss"].iat[0] == pytest.approx(LN2, rel=1e-6)


def test_train_writes_diverged_checkpoint_on_bad_gradients(tmp_path, monkeypatch):
    def nan_backward(loss, params):
        nan = {n: torch.full_like(p.detach(), math.nan) for n, p in params.items()}
        return nx.GradientRecord(nan)

    monkeypatch.setattr(tr.nx, "backward", nan_backward)
    with pytest.raises(NonFiniteError):
        tr.train(tiny_config, small_train_config(epochs=1), sample, tmp_path / "run")
    assert (tmp_path / "run" / "diverged.tpck").exists()
