import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from numpy.testing import assert_allclose

from transpotter_kit import numerics as nx
from transpotter_kit.errors import DomainError, GradCheckError, ShapeError
from transpotter_kit.model import EncoderLayer

from .context import perturb, tiny_config, transpotter_kit


def t(x):
    return torch.tensor(x, dtype=torch.float64)


def test_softmax():
    assert_allclose(nx.softmax(t([0.0, 0.0, 0.0])).numpy(), [1 / 3] * 3, rtol=1e-12)
    assert_allclose(nx.softmax(t([math.log(2), 0.0])).numpy(), [2 / 3, 1 / 3], rtol=1e-12)

    # No overflow
    y = nx.softmax(t([1000.0, 0.0]))
    assert torch.isfinite(y).all()
    assert_allclose(y.numpy(), [1.0, 0.0], atol=1e-12)

    # Masked positions get exactly zero
    y = nx.softmax(t([1.0, 5.0, 2.0]), mask=torch.tensor([True, False, True]))
    assert y[1] == 0
    assert float(y.sum()) == pytest.approx(1, abs=1e-12)

    with pytest.raises(DomainError):
        nx.softmax(torch.zeros(0, dtype=torch.float64))


@settings(max_examples=200, deadline=None)
@given(
    arrays(
        np.float64,
        st.tuples(st.integers(1, 5), st.integers(1, 20)),
        elements=st.floats(-1e3, 1e3),
    )
)
def test_softmax_rows_sum_to_one(x):
    y = nx.softmax(torch.from_numpy(x), dim=-1)
    assert (y >= 0).all()
    assert_allclose(y.sum(dim=-1).numpy(), 1.0, rtol=0, atol=1e-12)


def test_layer_norm():
    one, zero = torch.ones(3, dtype=torch.float64), torch.zeros(3, dtype=torch.float64)
    assert_allclose(nx.layer_norm(t([3.0, 3.0, 3.0]), one, zero).numpy(), [0, 0, 0])
    x = nx.layer_norm(t([1.0, -1.0]), one[:2], zero[:2], eps=1e-12)
    assert_allclose(x.numpy(), [1, -1], rtol=1e-9)
    x = nx.layer_norm(t([2.0, 4.0, 6.0]), one, zero, eps=0)
    assert_allclose(x.numpy(), [-math.sqrt(1.5), 0, math.sqrt(1.5)], rtol=1e-12)

    # Gain and bias
    x = nx.layer_norm(t([1.0, -1.0]), t([2.0, 2.0]), t([1.0, 0.0]), eps=0)
    assert_allclose(x.numpy(), [3, -2])

    with pytest.raises(ShapeError):
        nx.layer_norm(t([1.0, 2.0]), one, zero)


def test_sigmoid():
    assert float(nx.sigmoid(t(0.0))) == 0.5
    assert float(nx.sigmoid(t(1000.0))) == 1.0
    assert float(nx.sigmoid(t(-1000.0))) == 0.0
    assert float(nx.sigmoid(t(math.log(3)))) == pytest.approx(0.75, abs=1e-12)
    x = t([-2.0, 0.3, 4.0])
    assert_allclose(nx.sigmoid(-x).numpy(), 1 - nx.sigmoid(x).numpy(), atol=1e-15)


def test_get_activation():
    assert nx.get_activation("relu") is nx.relu
    assert float(nx.get_activation("gelu")(t(0.0))) == 0
    with pytest.raises(DomainError):
        nx.get_activation("tanh")


def test_safe_log():
    assert float(nx.safe_log(t(0.0))) == pytest.approx(math.log(1e-12))
    assert float(nx.safe_log(t(1.0))) == 0


def test_backward():
    x = t([1.0, 2.0, 3.0]).requires_grad_()
    unused = t([5.0]).requires_grad_()
    grads = nx.backward((x * x).sum(), {"x": x, "unused": unused})
    assert_allclose(grads["x"].numpy(), [2, 4, 6])
    assert_allclose(grads["unused"].numpy(), [0])
    assert set(grads) == {"x", "unused"}

    w = t(0.0).requires_grad_()
    assert float(nx.backward(nx.sigmoid(w), {"w": w})["w"]) == pytest.approx(0.25)

    with pytest.raises(ShapeError):
        nx.backward(x * 2, {"x": x})


def test_backward_is_fresh():
    # A second pass does not accumulate into the first one's gradients
    x = t([1.0, 2.0]).requires_grad_()
    g1 = nx.backward((x * x).sum(), {"x": x})
    g2 = nx.backward((x * x).sum(), {"x": x})
    assert_allclose(g1["x"].numpy(), g2["x"].numpy())
    assert x.grad is None


def test_gradient_record():
    g = nx.GradientRecord({"a": t([3.0, 4.0]), "b": t([0.0])})
    assert len(g) == 2
    assert g.global_norm() == pytest.approx(5)
    assert g.is_finite()
    assert g.clip_(1.0) == pytest.approx(5)
    assert g.global_norm() == pytest.approx(1, abs=1e-6)
    g.zero_()
    assert g.global_norm() == 0
    assert not nx.GradientRecord({"a": t([math.nan])}).is_finite()


def test_grad_check():
    w = t([0.3, -1.2, 2.0]).requires_grad_()

    def loss():
        return (w * w).sum() + w[0] * w[1]

    assert nx.grad_check(loss, {"w": w}) < 1e-9

    with pytest.raises(DomainError):
        nx.grad_check(loss, {"w": w}, eps=1e-3)
    v = torch.ones(2, requires_grad=True)
    with pytest.raises(DomainError):
        nx.grad_check(lambda: (v * v).sum(), {"v": v})

    # Perturbing below zero takes the log of a negative number
    u = t([5e-6]).requires_grad_()
    with pytest.raises(GradCheckError) as e:
        nx.grad_check(lambda: torch.log(u).sum(), {"u": u})
    assert e.value.parameter == "u"
    assert e.value.index == (0,)


def test_grad_check_encoder_layer():
    config = transpotter_kit.ModelConfig(
        d=8, heads=2, text_layers=1, video_layers=1, joint_layers=1, dropout=0.0,
        activation="gelu",
    )
    torch.manual_seed(0)
    layer = perturb(EncoderLayer(config).double())
    x = torch.randn(2, 5, 8, dtype=torch.float64)
    mask = torch.tensor([[True] * 5, [True] * 3 + [False] * 2])
    params = dict(layer.named_parameters())

    def loss():
        return (layer(x, mask) ** 2).mean()

    assert nx.grad_check(loss, params) < 1e-4
