"""
Functions about differentiable tensor arithmetic.

Every differentiable operation the model uses is either a torch primitive
(matrix multiply, add, elementwise multiply, concatenate, slice, embedding
lookup, mean) or one of the functions below.
Reverse-mode accumulation is torch autograd; :func:`backward` packages its
result as a :class:`GradientRecord` and :func:`grad_check` verifies it against
central finite differences.
"""

from __future__ import annotations

import logging
import math
from typing import Callable, Iterator, Mapping

import torch
import torch.nn.functional as F

from . import constants as cs
from .errors import DomainError, GradCheckError, ShapeError

logger = logging.getLogger(__name__)


def softmax(x: torch.Tensor, dim: int = -1, mask: torch.Tensor | None = None) -> torch.Tensor:
    """
    Return the softmax of ``x`` along ``dim``, computed with max subtraction so
    that large inputs do not overflow.

    If a boolean ``mask`` broadcastable to ``x`` is given, then positions where
    it is ``False`` get probability exactly zero.
    Every slice along ``dim`` must keep at least one unmasked position.
    Raise a DomainError if ``dim`` has extent zero.
    """
    if x.shape[dim] == 0:
        raise DomainError("Softmax over an empty axis")
    if mask is not None:
        x = x.masked_fill(~mask, float("-inf"))
    # Softmax is shift invariant, so the max carries no gradient
    shift = x.amax(dim=dim, keepdim=True).detach()
    e = torch.exp(x - shift)
    return e / e.sum(dim=dim, keepdim=True)


def layer_norm(
    x: torch.Tensor, gain: torch.Tensor, bias: torch.Tensor, eps: float = 1e-5
) -> torch.Tensor:
    """
    Normalize each feature vector (last axis) of ``x`` to zero mean and unit
    variance, then scale by ``gain`` and shift by ``bias``::

        gain * (x - mean) / sqrt(var + eps) + bias

    The variance is the biased (population) one.
    Raise a ShapeError if ``gain`` or ``bias`` does not match the feature width.
    """
    n = x.shape[-1]
    if gain.shape != (n,) or bias.shape != (n,):
        raise ShapeError(
            f"Layer norm gain {tuple(gain.shape)} and bias {tuple(bias.shape)} "
            f"must both have shape ({n},)"
        )
    mean = x.mean(dim=-1, keepdim=True)
    centered = x - mean
    var = (centered * centered).mean(dim=-1, keepdim=True)
    return gain * centered / torch.sqrt(var + eps) + bias


def sigmoid(x: torch.Tensor) -> torch.Tensor:
    """
    Return ``1 / (1 + exp(-x))`` elementwise; saturates to 0 or 1 without NaNs.
    """
    return torch.sigmoid(x)


def relu(x: torch.Tensor) -> torch.Tensor:
    return torch.relu(x)


def gelu(x: torch.Tensor) -> torch.Tensor:
    return F.gelu(x)


def get_activation(name: str) -> Callable[[torch.Tensor], torch.Tensor]:
    """
    Return the feed-forward nonlinearity of the given name, one of
    :const:`.constants.ACTIVATIONS`.
    """
    if name not in cs.ACTIVATIONS:
        raise DomainError(f"Activation must lie in {cs.ACTIVATIONS}; got {name!r}")
    return {"relu": relu, "gelu": gelu}[name]


def safe_log(x: torch.Tensor, floor: float = cs.LOG_FLOOR) -> torch.Tensor:
    """
    Return ``log(max(x, floor))``, so saturated probabilities give large but
    finite values.
    """
    return torch.log(torch.clamp(x, min=floor))


class GradientRecord(Mapping[str, torch.Tensor]):
    """
    Per-parameter tensors of partial derivatives of a scalar loss,
    one entry per trainable parameter, shape-identical to that parameter.
    Behaves as a read-only mapping from parameter name to gradient tensor.
    """

    def __init__(self, grads: dict[str, torch.Tensor]):
        self._grads = dict(grads)

    def __getitem__(self, name: str) -> torch.Tensor:
        return self._grads[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._grads)

    def __len__(self) -> int:
        return len(self._grads)

    def __repr__(self) -> str:
        shapes = {k: tuple(v.shape) for k, v in self._grads.items()}
        return f"GradientRecord({shapes})"

    def zero_(self) -> "GradientRecord":
        for g in self._grads.values():
            g.zero_()
        return self

    def global_norm(self) -> float:
        """
        Return the Euclidean norm of all the gradients stacked together.
        """
        total = sum(float((g.double() ** 2).sum()) for g in self._grads.values())
        return math.sqrt(total)

    def is_finite(self) -> bool:
        return all(bool(torch.isfinite(g).all()) for g in self._grads.values())

    def clip_(self, max_norm: float) -> float:
        """
        Scale all gradients in place so that their global norm is at most
        ``max_norm``; return the norm before clipping.
        """
        norm = self.global_norm()
        if max_norm > 0 and norm > max_norm:
            scale = max_norm / (norm + 1e-6)
            for g in self._grads.values():
                g.mul_(scale)
        return norm


def backward(loss: torch.Tensor, params: Mapping[str, torch.Tensor]) -> GradientRecord:
    """
    Return the gradient of the scalar tensor ``loss`` with respect to each of
    the given named parameters, by reverse-mode accumulation.
    Parameters that do not participate in the loss get zero gradients.
    Each call builds fresh accumulators, so nothing leaks between passes.

    Raise a ShapeError if ``loss`` is not a scalar.
    """
    if loss.numel() != 1:
        raise ShapeError(f"Backward needs a scalar loss; got shape {tuple(loss.shape)}")

    names = list(params)
    tensors = [params[n] for n in names]
    grads = torch.autograd.grad(loss.reshape(()), tensors, allow_unused=True)
    record = {}
    for name, tensor, grad in zip(names, tensors, grads):
        record[name] = torch.zeros_like(tensor) if grad is None else grad.detach().clone()
    return GradientRecord(record)


def grad_check(
    loss_fn: Callable[[], torch.Tensor],
    params: Mapping[str, torch.Tensor],
    eps: float = 1e-5,
) -> float:
    """
    Compare :func:`backward` against central finite differences.

    ``loss_fn`` recomputes the scalar loss from the current values of
    ``params``, which must be 64-bit leaf tensors requiring gradients.
    For every coordinate, perturb it by ``±eps`` in place, and compare
    ``(L(θ+eps) - L(θ-eps)) / (2 eps)`` with the analytic derivative.
    Return the maximum over coordinates of
    ``|analytic - numeric| / max(1, |numeric|)``.

    Raise a DomainError for 32-bit parameters or ``eps`` outside
    ``[1e-6, 1e-4]``, and a GradCheckError naming the coordinate if a
    perturbed loss is not finite.
    """
    if not 1e-6 <= eps <= 1e-4:
        raise DomainError(f"eps must lie in [1e-6, 1e-4]; got {eps}")
    for name, p in params.items():
        if p.dtype != torch.float64:
            raise DomainError(f"Gradient checks need 64-bit parameters; {name} is {p.dtype}")

    analytic = backward(loss_fn(), params)

    max_error = 0.0
    with torch.no_grad():
        for name, p in params.items():
            flat = p.view(-1)
            grad = analytic[name].reshape(-1)
            for i in range(flat.numel()):
                original = flat[i].item()
                flat[i] = original + eps
                plus = float(loss_fn())
                flat[i] = original - eps
                minus = float(loss_fn())
                flat[i] = original
                if not (math.isfinite(plus) and math.isfinite(minus)):
                    index = tuple(int(j) for j in torch.unravel_index(torch.tensor(i), p.shape))
                    raise GradCheckError("Non-finite loss at perturbed point", name, index)
                numeric = (plus - minus) / (2 * eps)
                error = abs(float(grad[i]) - numeric) / max(1.0, abs(numeric))
                max_error = max(max_error, error)

    logger.debug("Gradient check max relative error %.3e", max_error)
    return max_error
