import math

import numpy as np
import pytest
import torch
from numpy.testing import assert_allclose, assert_array_equal

from transpotter_kit import model as md
from transpotter_kit import numerics as nx
from transpotter_kit import training as tr
from transpotter_kit.errors import CapabilityError, ConfigError, DomainError, ShapeError
from transpotter_kit.phonetics import Query

from .context import perturb, random_features, tiny_config, transpotter_kit


def make_config(**kwargs):
    d = tiny_config.to_dict() | kwargs
    return md.ModelConfig(**d)


def test_model_config():
    c = md.ModelConfig()
    assert (c.d, c.heads, c.text_layers, c.video_layers, c.joint_layers) == (512, 8, 3, 6, 6)
    assert c.has_loc
    assert md.ModelConfig.from_dict(c.to_dict()) == c
    assert not make_config(variant="transpotter_no_loc").has_loc

    with pytest.raises(ConfigError):
        make_config(d=10, heads=3)
    with pytest.raises(ConfigError):
        make_config(d=7, heads=7)
    with pytest.raises(ConfigError):
        make_config(variant="bingo")
    with pytest.raises(ConfigError):
        make_config(variant="enc_vid_dec_text", loc_head="span_softmax")
    with pytest.raises(ConfigError):
        make_config(joint_layers=0)
    with pytest.raises(ConfigError):
        md.ModelConfig.from_dict({"depth": 3})


def test_positional_encoding():
    pe = md.positional_encoding(3, 6)
    assert pe.shape == (3, 6)
    assert_array_equal(pe[0].numpy(), [0, 1, 0, 1, 0, 1])
    pe = md.positional_encoding(2, 4)
    assert_allclose(
        pe[1].numpy(), [math.sin(1), math.cos(1), math.sin(0.01), math.cos(0.01)], rtol=1e-12
    )
    pe = md.positional_encoding(200, 16)
    assert pe.abs().max() <= 1
    assert md.positional_encoding(2, 4, torch.float32).dtype == torch.float32

    # Callers get their own copy
    pe = md.positional_encoding(4, 4)
    pe[0, 1] = 99
    assert md.positional_encoding(4, 4)[0, 1] == 1

    with pytest.raises(ShapeError):
        md.positional_encoding(3, 5)
    with pytest.raises(ShapeError):
        md.positional_encoding(0, 4)


def test_init_parameters():
    m1 = md.init_parameters(tiny_config, seed=3)
    m2 = md.init_parameters(tiny_config, seed=3)
    m3 = md.init_parameters(tiny_config, seed=4)
    for (name, p), q, r in zip(
        m1.named_parameters(), m2.parameters(), m3.parameters()
    ):
        assert torch.equal(p, q)
        assert torch.isfinite(p).all()
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "bias":
            assert not p.any()
        elif leaf == "gain":
            assert (p == 1).all()
        elif "final" not in name:
            assert p.abs().max() <= 0.04
            assert not torch.equal(p, r)
    assert not m1.cls_head.final.weight.any()
    assert not m1.loc_head.final.weight.any()


def test_init_parameters_keeps_global_rng():
    state = torch.get_rng_state()
    md.init_parameters(tiny_config, seed=0)
    assert torch.equal(state, torch.get_rng_state())


def test_fresh_model_predicts_one_half():
    rng = np.random.default_rng(0)
    for variant in ["transpotter", "enc_text_dec_vid"]:
        model = md.init_parameters(make_config(variant=variant))
        features = random_features(rng, 11)
        query = Query(ids=(3, 7, 9, 2), text="x")
        pred = md.forward(model, features, query)
        assert float(pred.y_cls[0]) == 0.5
        assert pred.y_loc.shape == (1, 11)
        assert (pred.y_loc == 0.5).all()


def test_encode_text():
    model = perturb(md.init_parameters(tiny_config))
    model.eval()
    ids = torch.tensor([[4, 9, 2]])
    out = model.encode_text(ids)
    assert out.shape == (1, 3, 8)

    # Padding leaves the real rows alone
    padded = torch.tensor([[4, 9, 2, 0, 0, 0]])
    out_padded = model.encode_text(padded, padded > 0)
    assert_allclose(out_padded[0, :3].detach().numpy(), out[0].detach().numpy(), atol=1e-6)
    assert not out_padded[0, 3:].any()

    # Positional encodings break permutation symmetry
    swapped = model.encode_text(torch.tensor([[9, 4, 2]]))
    assert not torch.allclose(swapped[0, 0], out[0, 1], atol=1e-6)

    with pytest.raises(DomainError):
        model.encode_text(torch.tensor([[4, 40]]))
    with pytest.raises(ShapeError):
        model.encode_text(torch.ones(1, 41, dtype=torch.long))


def test_encode_video():
    model = perturb(md.init_parameters(tiny_config))
    model.eval()
    rng = np.random.default_rng(1)
    x = torch.from_numpy(rng.standard_normal((1, 5, 8)).astype(np.float32))
    out = model.encode_video(x)
    assert out.shape == (1, 5, 8)

    padded = torch.cat([x, torch.zeros(1, 3, 8)], dim=1)
    mask = torch.tensor([[True] * 5 + [False] * 3])
    out_padded = model.encode_video(padded, mask)
    assert_allclose(out_padded[0, :5].detach().numpy(), out[0].detach().numpy(), atol=1e-6)

    assert torch.isfinite(model.encode_video(torch.zeros(1, 4, 8))).all()

    with pytest.raises(ShapeError):
        model.encode_video(torch.zeros(1, 4, 7))
    with pytest.raises(ShapeError):
        model.encode_video(torch.zeros(1, 161, 8))


def test_capabilities():
    ids = torch.tensor([[4, 9, 2]])
    x = torch.zeros(1, 4, 8)

    model = md.init_parameters(make_config(variant="enc_vid_dec_text"))
    with pytest.raises(CapabilityError):
        model.encode_text(ids)
    pred = model(x, ids)
    assert pred.y_cls.shape == (1,)
    assert not pred.has_loc
    with pytest.raises(CapabilityError):
        pred.y_loc
    with pytest.raises(CapabilityError):
        model.joint_forward(x, x, torch.ones(1, 4, dtype=torch.bool), torch.ones(1, 4, dtype=torch.bool))

    model = md.init_parameters(make_config(variant="enc_text_dec_vid"))
    with pytest.raises(CapabilityError):
        model.encode_video(x)
    assert model(x, ids).y_loc.shape == (1, 4)

    model = md.init_parameters(make_config(variant="transpotter_no_loc"))
    pred = model(x, ids)
    assert pred.unbatch(0) == (0.5, None)
    with pytest.raises(CapabilityError):
        pred.y_loc


@pytest.mark.parametrize("variant", ["transpotter", "enc_text_dec_vid", "enc_vid_dec_text"])
def test_padding_invariance(variant):
    model = perturb(md.init_parameters(make_config(variant=variant, modality_embeddings=True)))
    model.eval()
    rng = np.random.default_rng(2)
    for _ in range(100):
        T, n = int(rng.integers(1, 12)), int(rng.integers(1, 6))
        values = rng.standard_normal((T, 8)).astype(np.float32)
        query = Query(ids=tuple(int(i) for i in rng.integers(1, 40, size=n)), text="q")
        short = md.forward(model, values, query)

        x, v_mask = md.feature_tensors([values, np.zeros((T + 4, 8), dtype=np.float32)])
        other = Query(ids=(1,) * (n + 3), text="r")
        ids, q_mask = md.query_tensors([query, other])
        with torch.no_grad():
            long = model(x, ids, v_mask, q_mask)

        assert abs(float(long.y_cls[0]) - float(short.y_cls[0])) <= 1e-6
        if model.config.has_loc:
            assert_allclose(long.y_loc[0, :T].numpy(), short.y_loc[0].numpy(), atol=1e-6)
            assert not long.y_loc[0, T:].any()


def test_forward_is_deterministic():
    model = perturb(md.init_parameters(tiny_config))
    values = np.random.default_rng(3).standard_normal((9, 8)).astype(np.float32)
    query = Query(ids=(5, 6, 7), text="q")
    p1 = md.forward(model, values, query)
    p2 = md.forward(model, values, query)
    assert torch.equal(p1.y_cls, p2.y_cls)
    assert torch.equal(p1.y_loc, p2.y_loc)
    y_cls, y_loc = p1.unbatch(0)
    assert 0 < y_cls < 1
    assert y_loc.shape == (9,)
    assert ((y_loc >= 0) & (y_loc <= 1)).all()

    # The previous mode survives
    model.train()
    md.forward(model, values, query)
    assert model.training
    model.eval()
    md.forward(model, values, query)
    assert not model.training


def test_span_head():
    model = perturb(md.init_parameters(make_config(loc_head="span_softmax")))
    x, v_mask = md.feature_tensors(
        [np.ones((6, 8), dtype=np.float32), np.ones((4, 8), dtype=np.float32)]
    )
    ids, q_mask = md.query_tensors([Query((3, 4, 5), "a"), Query((6, 7), "b")])
    model.eval()
    with torch.no_grad():
        pred = model(x, ids, v_mask, q_mask)
    assert_allclose(pred.span_start.sum(dim=1).numpy(), [1, 1], rtol=1e-6)
    assert_allclose(pred.span_end.sum(dim=1).numpy(), [1, 1], rtol=1e-6)
    assert not pred.span_start[1, 4:].any()
    y_loc = pred.y_loc
    assert set(y_loc.unique().tolist()) <= {0.0, 1.0}
    assert y_loc[0].sum() >= 1


def test_decode_spans():
    start = torch.tensor([[0.1, 0.6, 0.2, 0.1]])
    end = torch.tensor([[0.5, 0.1, 0.1, 0.3]])
    mask = torch.ones(1, 4, dtype=torch.bool)
    assert md.decode_spans(start, end, mask).tolist() == [[0, 1, 1, 1]]
    mask = torch.tensor([[True, True, True, False]])
    assert md.decode_spans(start, end, mask).tolist() == [[0, 1, 0, 0]]


def test_query_and_feature_tensors():
    ids, mask = md.query_tensors([Query((3, 4, 5), "a"), Query((6,), "b")])
    assert ids.tolist() == [[3, 4, 5], [6, 0, 0]]
    assert mask.tolist() == [[True, True, True], [True, False, False]]
    x, mask = md.feature_tensors([np.ones((2, 3)), np.ones((1, 3))])
    assert x.shape == (2, 2, 3)
    assert x.dtype == torch.float32
    assert mask.tolist() == [[True, True], [True, False]]
    assert not x[1, 1].any()


def tiny_batch(dtype=torch.float64):
    rng = np.random.default_rng(4)
    y_loc = np.zeros(6, dtype=np.float32)
    y_loc[2:5] = 1
    pairs = [
        tr.TrainingPair(random_features(rng, 6), Query((3, 8, 12), "a"), 1, y_loc, span=(2, 5)),
        tr.TrainingPair(
            random_features(rng, 6), Query((5, 9, 1), "b"), 0, np.zeros(6, dtype=np.float32)
        ),
    ]
    return tr.collate(pairs, dtype)


def check_gradients(activation="gelu", **kwargs):
    torch.manual_seed(0)
    config = make_config(activation=activation, **kwargs)
    model = perturb(md.init_parameters(config).double(), scale=0.3)
    model.eval()
    batch = tiny_batch()
    params = md.parameters_of(model)

    def loss():
        return tr.total_loss(tr.predict_batch(model, batch), batch, 0.5)

    assert torch.isfinite(loss())
    return nx.grad_check(loss, params, eps=1e-5)


def test_grad_check_transpotter():
    assert check_gradients() < 1e-4


@pytest.mark.slow
@pytest.mark.parametrize(
    "kwargs",
    [
        {"variant": "transpotter_no_loc"},
        {"variant": "enc_vid_dec_text"},
        {"variant": "enc_text_dec_vid"},
        {"loc_head": "span_softmax"},
        {"variant": "enc_text_dec_vid", "loc_head": "span_softmax"},
        {"modality_embeddings": True},
        {"activation": "relu"},
    ],
)
def test_grad_check_variants(kwargs):
    assert check_gradients(**kwargs) < 1e-4
