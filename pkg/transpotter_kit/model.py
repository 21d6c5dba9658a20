"""
Functions and classes about the keyword-spotting transformer.

The default ``transpotter`` variant encodes the phoneme query and the visual
features with separate transformer encoders, concatenates
``[CLS]; video; text`` along time, runs a joint encoder, and reads a clip
probability off the ``[CLS]`` output and a probability per frame off the
video outputs.
Three alternative variants are provided for comparison:

- ``transpotter_no_loc``: the same network without the localization head
- ``enc_vid_dec_text``: a video encoder and a text decoder (self-attention over
  ``[CLS]; phonemes`` plus cross-attention to the video); classification only
- ``enc_text_dec_vid``: a text encoder and a video decoder over
  ``[CLS]; frames``; classification and localization

All blocks are pre-norm with residual connections.
"""

from __future__ import annotations

import functools as ft
import logging
import math
from dataclasses import asdict, dataclass, fields

import numpy as np
import torch
import torch.nn as nn

from . import constants as cs
from . import numerics as nx
from .errors import CapabilityError, ConfigError, DomainError, ShapeError
from .phonetics import Query

logger = logging.getLogger(__name__)


@dataclass
class ModelConfig:
    """
    Architecture hyper-parameters; defaults are the published ones
    (:const:`.constants.MODEL_DEFAULTS`).

    - ``d``: embedding width
    - ``heads``: attention heads per layer
    - ``text_layers``, ``video_layers``, ``joint_layers``: depths of the text
      encoder, video encoder and joint encoder (or decoder)
    - ``d_in``: width of the input visual features
    - ``vocab_size``: phoneme vocabulary size including padding
    - ``max_frames``, ``max_phonemes``: longest clip and query accepted
    - ``variant``: one of :const:`.constants.VARIANTS`
    - ``loc_head``: one of :const:`.constants.LOC_HEADS`
    - ``modality_embeddings``: add a learnt video vector and a learnt text
      vector to the joint sequence
    - ``ffn_multiplier``: feed-forward hidden width as a multiple of ``d``
    - ``activation``: feed-forward nonlinearity, ``'relu'`` or ``'gelu'``
    - ``dropout``: dropout rate on attention weights and feed-forward outputs
    """

    d: int = cs.MODEL_DEFAULTS["d"]
    heads: int = cs.MODEL_DEFAULTS["heads"]
    text_layers: int = cs.MODEL_DEFAULTS["text_layers"]
    video_layers: int = cs.MODEL_DEFAULTS["video_layers"]
    joint_layers: int = cs.MODEL_DEFAULTS["joint_layers"]
    d_in: int = cs.MODEL_DEFAULTS["d_in"]
    vocab_size: int = cs.MODEL_DEFAULTS["vocab_size"]
    max_frames: int = cs.MODEL_DEFAULTS["max_frames"]
    max_phonemes: int = cs.MODEL_DEFAULTS["max_phonemes"]
    variant: str = cs.MODEL_DEFAULTS["variant"]
    loc_head: str = cs.MODEL_DEFAULTS["loc_head"]
    modality_embeddings: bool = cs.MODEL_DEFAULTS["modality_embeddings"]
    ffn_multiplier: int = cs.MODEL_DEFAULTS["ffn_multiplier"]
    activation: str = cs.MODEL_DEFAULTS["activation"]
    dropout: float = cs.MODEL_DEFAULTS["dropout"]

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        """
        Raise a ConfigError if the configuration is inconsistent.
        """
        if self.variant not in cs.VARIANTS:
            raise ConfigError(f"Variant must lie in {cs.VARIANTS}; got {self.variant!r}")
        if self.loc_head not in cs.LOC_HEADS:
            raise ConfigError(f"Localization head must lie in {cs.LOC_HEADS}")
        if self.activation not in cs.ACTIVATIONS:
            raise ConfigError(f"Activation must lie in {cs.ACTIVATIONS}")
        if self.variant not in cs.LOC_VARIANTS and self.loc_head != "frame_sigmoid":
            raise ConfigError(
                f"Variant {self.variant!r} has no localization output, "
                f"so it cannot use the {self.loc_head!r} head"
            )
        if self.d < 2 or self.d % 2:
            raise ConfigError(f"Embedding width must be even; got {self.d}")
        if self.heads < 1 or self.d % self.heads:
            raise ConfigError(f"Embedding width {self.d} not divisible by {self.heads} heads")
        for name in ["text_layers", "video_layers", "joint_layers"]:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        for name in ["d_in", "vocab_size", "max_frames", "max_phonemes", "ffn_multiplier"]:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if not 0 <= self.dropout < 1:
            raise ConfigError(f"Dropout must lie in [0, 1); got {self.dropout}")

    @property
    def has_loc(self) -> bool:
        return self.variant in cs.LOC_VARIANTS

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"Unknown model config keys {sorted(unknown)}")
        return cls(**d)


@ft.lru_cache(maxsize=32)
def _positional_table(length: int, d: int) -> torch.Tensor:
    position = torch.arange(length, dtype=torch.float64)[:, None]
    exponent = torch.arange(0, d, 2, dtype=torch.float64) / d
    angle = position / torch.pow(10_000.0, exponent)
    pe = torch.empty(length, d, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(angle)
    pe[:, 1::2] = torch.cos(angle)
    return pe


def positional_encoding(
    length: int, d: int, dtype: torch.dtype = torch.float64
) -> torch.Tensor:
    """
    Return the ``length x d`` sinusoidal positional encoding with
    ``PE[pos, 2i] = sin(pos / 10000^(2i/d))`` and
    ``PE[pos, 2i+1] = cos(pos / 10000^(2i/d))``.

    Raise a ShapeError if ``d`` is odd or ``length < 1``.
    """
    if length < 1:
        raise ShapeError(f"Positional encoding length must be positive; got {length}")
    if d < 2 or d % 2:
        raise ShapeError(f"Positional encoding width must be even; got {d}")
    return _positional_table(length, d).to(dtype, copy=True)


@dataclass
class Prediction:
    """
    Model outputs for a batch of (clip, query) pairs.

    - ``y_cls``: ``(B,)`` clip-level keyword probabilities
    - ``frame_mask``: ``(B, T)`` true on real (unpadded) frames
    - ``loc``: ``(B, T)`` frame probabilities of the ``frame_sigmoid`` head
    - ``span_start``, ``span_end``: ``(B, T)`` start and end distributions of
      the ``span_softmax`` head, each summing to 1 over real frames

    Accessing :attr:`y_loc` on a classification-only prediction raises a
    CapabilityError.
    """

    y_cls: torch.Tensor
    frame_mask: torch.Tensor
    loc: torch.Tensor | None = None
    span_start: torch.Tensor | None = None
    span_end: torch.Tensor | None = None

    @property
    def has_loc(self) -> bool:
        return self.loc is not None or self.span_start is not None

    @property
    def y_loc(self) -> torch.Tensor:
        """
        Frame-level keyword probabilities, zero on padded frames.
        For the span head, the indicator of the frames from the most likely
        start through the most likely end at or after it.
        """
        if self.loc is not None:
            return self.loc
        if self.span_start is not None:
            return decode_spans(self.span_start, self.span_end, self.frame_mask)
        raise CapabilityError("This model variant does not localize keywords")

    def unbatch(self, i: int) -> tuple[float, np.ndarray | None]:
        """
        Return the ``i``-th clip probability and (if available) its frame
        probabilities trimmed to the real frames, as float64 NumPy values.
        """
        y_cls = float(self.y_cls[i])
        if not self.has_loc:
            return y_cls, None
        n = int(self.frame_mask[i].sum())
        return y_cls, self.y_loc[i, :n].detach().double().cpu().numpy()


def decode_spans(
    start: torch.Tensor, end: torch.Tensor, frame_mask: torch.Tensor
) -> torch.Tensor:
    """
    Turn start and end distributions of shape ``(B, T)`` into 0-1 frame
    indicators: frames from ``argmax start`` through the argmax of the end
    distribution restricted to frames at or after it.
    """
    B, T = start.shape
    frames = torch.arange(T, device=start.device)
    s = start.masked_fill(~frame_mask, -1.0).argmax(dim=-1)
    allowed = frame_mask & (frames[None, :] >= s[:, None])
    e = end.masked_fill(~allowed, -1.0).argmax(dim=-1)
    inside = (frames[None, :] >= s[:, None]) & (frames[None, :] <= e[:, None])
    return (inside & frame_mask).to(start.dtype).detach()


class LayerNorm(nn.Module):
    def __init__(self, d: int, eps: float = 1e-5):
        super().__init__()
        self.gain = nn.Parameter(torch.ones(d))
        self.bias = nn.Parameter(torch.zeros(d))
        self.eps = eps

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return nx.layer_norm(x, self.gain, self.bias, self.eps)


class MultiHeadAttention(nn.Module):
    """
    Scaled dot-product attention from ``x`` to ``context`` with a key padding
    mask; masked keys get exactly zero weight.
    """

    def __init__(self, d: int, heads: int, dropout: float):
        super().__init__()
        self.heads = heads
        self.d_head = d // heads
        self.query = nn.Linear(d, d)
        self.key = nn.Linear(d, d)
        self.value = nn.Linear(d, d)
        self.out = nn.Linear(d, d)
        self.dropout = nn.Dropout(dropout)

    def forward(
        self, x: torch.Tensor, context: torch.Tensor, key_mask: torch.Tensor
    ) -> torch.Tensor:
        B, L, d = x.shape
        S = context.shape[1]

        def split(t, n):
            return t.view(B, n, self.heads, self.d_head).transpose(1, 2)

        q = split(self.query(x), L)
        k = split(self.key(context), S)
        v = split(self.value(context), S)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.d_head)
        weights = nx.softmax(scores, dim=-1, mask=key_mask[:, None, None, :])
        weights = self.dropout(weights)
        out = (weights @ v).transpose(1, 2).reshape(B, L, d)
        return self.out(out)


class FeedForward(nn.Module):
    def __init__(self, d: int, multiplier: int, activation: str, dropout: float):
        super().__init__()
        self.hidden = nn.Linear(d, multiplier * d)
        self.output = nn.Linear(multiplier * d, d)
        self.activation = nx.get_activation(activation)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.output(self.dropout(self.activation(self.hidden(x))))


class EncoderLayer(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        c = config
        self.attention_norm = LayerNorm(c.d)
        self.attention = MultiHeadAttention(c.d, c.heads, c.dropout)
        self.ffn_norm = LayerNorm(c.d)
        self.ffn = FeedForward(c.d, c.ffn_multiplier, c.activation, c.dropout)
        self.dropout = nn.Dropout(c.dropout)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        h = self.attention_norm(x)
        x = x + self.dropout(self.attention(h, h, mask))
        x = x + self.dropout(self.ffn(self.ffn_norm(x)))
        return x


class DecoderLayer(nn.Module):
    """
    Full (non-causal) self-attention, then cross-attention to a memory
    sequence, then a feed-forward block.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        c = config
        self.self_norm = LayerNorm(c.d)
        self.self_attention = MultiHeadAttention(c.d, c.heads, c.dropout)
        self.cross_norm = LayerNorm(c.d)
        self.cross_attention = MultiHeadAttention(c.d, c.heads, c.dropout)
        self.ffn_norm = LayerNorm(c.d)
        self.ffn = FeedForward(c.d, c.ffn_multiplier, c.activation, c.dropout)
        self.dropout = nn.Dropout(c.dropout)

    def forward(
        self,
        x: torch.Tensor,
        mask: torch.Tensor,
        memory: torch.Tensor,
        memory_mask: torch.Tensor,
    ) -> torch.Tensor:
        h = self.self_norm(x)
        x = x + self.dropout(self.self_attention(h, h, mask))
        x = x + self.dropout(self.cross_attention(self.cross_norm(x), memory, memory_mask))
        x = x + self.dropout(self.ffn(self.ffn_norm(x)))
        return x


class Encoder(nn.Module):
    """
    A stack of encoder layers followed by a final layer norm; outputs at
    padded positions are zeroed.
    """

    def __init__(self, config: ModelConfig, num_layers: int):
        super().__init__()
        self.layers = nn.ModuleList(EncoderLayer(config) for _ in range(num_layers))
        self.norm = LayerNorm(config.d)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        for layer in self.layers:
            x = layer(x, mask)
        return self.norm(x) * mask[..., None].to(x.dtype)


class Decoder(nn.Module):
    def __init__(self, config: ModelConfig, num_layers: int):
        super().__init__()
        self.layers = nn.ModuleList(DecoderLayer(config) for _ in range(num_layers))
        self.norm = LayerNorm(config.d)

    def forward(
        self,
        x: torch.Tensor,
        mask: torch.Tensor,
        memory: torch.Tensor,
        memory_mask: torch.Tensor,
    ) -> torch.Tensor:
        for layer in self.layers:
            x = layer(x, mask, memory, memory_mask)
        return self.norm(x) * mask[..., None].to(x.dtype)


class MLPHead(nn.Module):
    """
    Two-layer perceptron ``d -> d -> out`` with a ReLU in between; the final
    layer is zero-initialized by :func:`init_parameters`.
    """

    def __init__(self, d: int, out: int = 1):
        super().__init__()
        self.hidden = nn.Linear(d, d)
        self.final = nn.Linear(d, out)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.final(nx.relu(self.hidden(x)))


class Transpotter(nn.Module):
    """
    The keyword-spotting network for the configured variant.
    Build instances with :func:`init_parameters` for reproducible weights.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        config.validate()
        self.config = c = config
        v = c.variant

        if v != "enc_vid_dec_text":
            self.text_encoder = Encoder(c, c.text_layers)
        if v in ["transpotter", "transpotter_no_loc", "enc_vid_dec_text"]:
            self.video_encoder = Encoder(c, c.video_layers)
        if v in ["transpotter", "transpotter_no_loc"]:
            self.joint_encoder = Encoder(c, c.joint_layers)
            if c.modality_embeddings:
                self.modality = nn.Parameter(torch.zeros(2, c.d))
        else:
            self.decoder = Decoder(c, c.joint_layers)

        self.phoneme_embedding = nn.Embedding(c.vocab_size, c.d)
        self.input_projection = nn.Linear(c.d_in, c.d)
        self.cls = nn.Parameter(torch.zeros(1, c.d))
        self.cls_head = MLPHead(c.d, 1)
        if c.has_loc:
            out = 1 if c.loc_head == "frame_sigmoid" else 2
            self.loc_head = MLPHead(c.d, out)

    # -------------------------------------
    # Input checks and positional encodings
    # -------------------------------------
    @property
    def dtype(self) -> torch.dtype:
        return self.cls.dtype

    def _pe(self, length: int) -> torch.Tensor:
        return positional_encoding(length, self.config.d, self.dtype).to(self.cls.device)

    def _check_ids(self, ids: torch.Tensor, mask: torch.Tensor) -> None:
        if ids.dim() != 2 or mask.shape != ids.shape:
            raise ShapeError(f"Phoneme ids {tuple(ids.shape)} and mask must be (B, n)")
        if ids.shape[1] > self.config.max_phonemes:
            raise ShapeError(
                f"Query length {ids.shape[1]} exceeds max_phonemes={self.config.max_phonemes}"
            )
        if ids.numel() and (int(ids.max()) >= self.config.vocab_size or int(ids.min()) < 0):
            raise DomainError(f"Phoneme identifiers must lie in [0, {self.config.vocab_size})")

    def _check_features(self, features: torch.Tensor, mask: torch.Tensor) -> None:
        if features.dim() != 3 or features.shape[-1] != self.config.d_in:
            raise ShapeError(
                f"Features {tuple(features.shape)} must be (B, T, {self.config.d_in})"
            )
        if mask.shape != features.shape[:2]:
            raise ShapeError("Frame mask must be (B, T)")
        if features.shape[1] > self.config.max_frames:
            raise ShapeError(
                f"Clip length {features.shape[1]} exceeds max_frames={self.config.max_frames}"
            )

    def _embed_phonemes(self, ids: torch.Tensor) -> torch.Tensor:
        return self.phoneme_embedding(ids) + self._pe(ids.shape[1])

    def _project_frames(self, features: torch.Tensor) -> torch.Tensor:
        return self.input_projection(features.to(self.dtype)) + self._pe(features.shape[1])

    # -------------------------------------
    # Stages
    # -------------------------------------
    def encode_text(self, ids: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        """
        Embed ``(B, n)`` phoneme ids, add positional encodings, and run the
        text encoder; return ``(B, n, d)``.
        """
        if mask is None:
            mask = torch.ones_like(ids, dtype=torch.bool)
        self._check_ids(ids, mask)
        if not hasattr(self, "text_encoder"):
            raise CapabilityError(f"Variant {self.config.variant!r} has no text encoder")
        return self.text_encoder(self._embed_phonemes(ids), mask)

    def encode_video(
        self, features: torch.Tensor, mask: torch.Tensor | None = None
    ) -> torch.Tensor:
        """
        Project ``(B, T, d_in)`` features to width ``d``, add positional
        encodings, and run the video encoder; return ``(B, T, d)``.
        """
        if mask is None:
            mask = torch.ones(features.shape[:2], dtype=torch.bool, device=features.device)
        self._check_features(features, mask)
        if not hasattr(self, "video_encoder"):
            raise CapabilityError(f"Variant {self.config.variant!r} has no video encoder")
        return self.video_encoder(self._project_frames(features), mask)

    def joint_forward(
        self,
        v_enc: torch.Tensor,
        q_enc: torch.Tensor,
        v_mask: torch.Tensor,
        q_mask: torch.Tensor,
    ) -> Prediction:
        """
        Prepend ``[CLS]`` to the encoded video and text, add positional
        encodings over the joint sequence (and modality embeddings if
        configured), run the joint encoder, and apply the heads.
        The text positions of each sample continue right after its last real
        frame, so padding does not shift them; the phoneme outputs are dropped.
        """
        if not hasattr(self, "joint_encoder"):
            raise CapabilityError(f"Variant {self.config.variant!r} has no joint encoder")
        B, T, d = v_enc.shape
        n = q_enc.shape[1]
        if v_mask.shape != (B, T) or q_mask.shape != (B, n) or q_enc.shape[0] != B:
            raise ShapeError("Joint inputs and masks disagree in batch size or length")

        if hasattr(self, "modality"):
            v_enc = v_enc + self.modality[0]
            q_enc = q_enc + self.modality[1]
        j = torch.cat([self.cls.expand(B, 1, d), v_enc, q_enc], dim=1)

        lengths = v_mask.sum(dim=1, keepdim=True)
        video_pos = torch.arange(1, T + 1, device=j.device).expand(B, T)
        text_pos = 1 + lengths + torch.arange(n, device=j.device)[None, :]
        positions = torch.cat(
            [torch.zeros(B, 1, dtype=torch.long, device=j.device), video_pos, text_pos], dim=1
        )
        table = self._pe(1 + self.config.max_frames + self.config.max_phonemes)
        j = j + table[positions]

        ones = torch.ones(B, 1, dtype=torch.bool, device=j.device)
        mask = torch.cat([ones, v_mask, q_mask], dim=1)
        z = self.joint_encoder(j, mask)
        return self._predict(z[:, 0], z[:, 1 : T + 1], v_mask)

    def _predict(
        self, z_cls: torch.Tensor, z_frames: torch.Tensor, frame_mask: torch.Tensor
    ) -> Prediction:
        y_cls = nx.sigmoid(self.cls_head(z_cls).squeeze(-1))
        if not self.config.has_loc:
            return Prediction(y_cls=y_cls, frame_mask=frame_mask)
        logits = self.loc_head(z_frames)
        if self.config.loc_head == "frame_sigmoid":
            loc = nx.sigmoid(logits.squeeze(-1)) * frame_mask.to(logits.dtype)
            return Prediction(y_cls=y_cls, frame_mask=frame_mask, loc=loc)
        start = nx.softmax(logits[..., 0], dim=-1, mask=frame_mask)
        end = nx.softmax(logits[..., 1], dim=-1, mask=frame_mask)
        return Prediction(y_cls=y_cls, frame_mask=frame_mask, span_start=start, span_end=end)

    def forward(
        self,
        features: torch.Tensor,
        ids: torch.Tensor,
        v_mask: torch.Tensor | None = None,
        q_mask: torch.Tensor | None = None,
    ) -> Prediction:
        """
        Score a batch of ``(B, T, d_in)`` features against ``(B, n)`` phoneme
        ids (with optional padding masks) under the configured variant.
        """
        if v_mask is None:
            v_mask = torch.ones(features.shape[:2], dtype=torch.bool, device=features.device)
        if q_mask is None:
            q_mask = torch.ones_like(ids, dtype=torch.bool)
        self._check_features(features, v_mask)
        self._check_ids(ids, q_mask)
        B, T, _ = features.shape
        variant = self.config.variant

        if variant in ["transpotter", "transpotter_no_loc"]:
            v_enc = self.encode_video(features, v_mask)
            q_enc = self.encode_text(ids, q_mask)
            return self.joint_forward(v_enc, q_enc, v_mask, q_mask)

        ones = torch.ones(B, 1, dtype=torch.bool, device=features.device)
        cls = self.cls.expand(B, 1, self.config.d)
        if variant == "enc_vid_dec_text":
            memory = self.encode_video(features, v_mask)
            n = ids.shape[1]
            x = torch.cat([cls, self.phoneme_embedding(ids)], dim=1) + self._pe(1 + n)
            z = self.decoder(x, torch.cat([ones, q_mask], dim=1), memory, v_mask)
            return self._predict(z[:, 0], z[:, 1:], v_mask)

        # enc_text_dec_vid
        memory = self.encode_text(ids, q_mask)
        x = torch.cat([cls, self.input_projection(features.to(self.dtype))], dim=1)
        x = x + self._pe(1 + T)
        z = self.decoder(x, torch.cat([ones, v_mask], dim=1), memory, q_mask)
        return self._predict(z[:, 0], z[:, 1:], v_mask)


def init_parameters(config: ModelConfig, seed: int = 0) -> Transpotter:
    """
    Build a Transpotter for the given config with deterministic weights:
    matrices and embeddings from a Normal(0, 0.02) truncated at two standard
    deviations, biases zero, layer-norm gains one, and the final layers of both
    heads zero, so a fresh model predicts exactly 0.5 everywhere.
    The global torch random state is left untouched.
    """
    with torch.random.fork_rng(devices=[]):
        model = Transpotter(config)
    g = torch.Generator().manual_seed(seed)
    bound = cs.INIT_TRUNCATION * cs.INIT_STD
    with torch.no_grad():
        for name, p in model.named_parameters():
            leaf = name.rsplit(".", 1)[-1]
            if leaf == "bias":
                p.zero_()
            elif leaf == "gain":
                p.fill_(1.0)
            else:
                nn.init.trunc_normal_(p, 0.0, cs.INIT_STD, -bound, bound, generator=g)
        heads = [model.cls_head] + ([model.loc_head] if config.has_loc else [])
        for head in heads:
            head.final.weight.zero_()
            head.final.bias.zero_()
    return model


def parameters_of(model: nn.Module) -> dict[str, torch.Tensor]:
    """
    Return the named trainable tensors of the given model.
    """
    return dict(model.named_parameters())


def query_tensors(queries: list[Query]) -> tuple[torch.Tensor, torch.Tensor]:
    """
    Pad the given queries to a common length and return ``(ids, mask)``.
    """
    n = max(q.n_p for q in queries)
    ids = torch.zeros(len(queries), n, dtype=torch.long)
    for i, q in enumerate(queries):
        ids[i, : q.n_p] = torch.tensor(q.ids)
    mask = ids > 0
    return ids, mask


def feature_tensors(arrays: list[np.ndarray]) -> tuple[torch.Tensor, torch.Tensor]:
    """
    Pad the given ``T_i x d_in`` feature arrays with zeros to a common length
    and return ``(features, mask)``.
    """
    T = max(a.shape[0] for a in arrays)
    d_in = arrays[0].shape[1]
    features = torch.zeros(len(arrays), T, d_in, dtype=torch.float32)
    mask = torch.zeros(len(arrays), T, dtype=torch.bool)
    for i, a in enumerate(arrays):
        features[i, : a.shape[0]] = torch.from_numpy(np.ascontiguousarray(a, dtype=np.float32))
        mask[i, : a.shape[0]] = True
    return features, mask


def forward(model: Transpotter, features, query: Query) -> Prediction:
    """
    Score one clip (a FeatureSequence or a ``T x d_in`` array) against one
    Query and return a batch-of-one Prediction.
    Deterministic: the model runs in evaluation mode without tracking
    gradients, and gets its previous mode back afterwards.
    """
    values = getattr(features, "values", features)
    x, v_mask = feature_tensors([np.asarray(values)])
    ids, q_mask = query_tensors([query])
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            return model(x, ids, v_mask, q_mask)
    finally:
        model.train(was_training)
