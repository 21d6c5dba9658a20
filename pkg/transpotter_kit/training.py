"""
Functions about training: losses, pair sampling, the optimizer and the
training loop.

The total loss is ``lam * L_cls + (1 - lam) * L_loc`` where ``L_cls`` is the
batch mean of the clip-level binary cross-entropy and ``L_loc`` the batch mean
of the frame-level binary cross-entropy averaged over each clip's real frames
and gated by the clip label, so negatives contribute exactly zero.
Variants without a localization output train on ``L_cls`` alone.
"""

from __future__ import annotations

import logging
import math
import pathlib as pl
from dataclasses import asdict, dataclass, fields

import numpy as np
import pandas as pd
import torch

from . import checkpoints as ck
from . import constants as cs
from . import numerics as nx
from . import phonetics as ph
from .corpus import Corpus
from .data import FeatureSequence, make_frame_labels
from .errors import CapabilityError, ConfigError, DomainError, NonFiniteError, SamplingError
from .model import (
    ModelConfig,
    Prediction,
    Transpotter,
    feature_tensors,
    init_parameters,
    parameters_of,
    query_tensors,
)

logger = logging.getLogger(__name__)

MAX_NEGATIVE_RETRIES = 100


@dataclass
class TrainConfig:
    """
    Training hyper-parameters; defaults are the published ones
    (:const:`.constants.TRAIN_DEFAULTS`).

    - ``lam``: weight of the classification loss, in [0, 1]
    - ``batch_size``, ``epochs``, ``steps_per_epoch``
    - ``lr``, ``min_lr``: initial and minimum learning rates
    - ``plateau_patience``: epochs without validation improvement before the
      learning rate is divided by ``plateau_factor``
    - ``grad_clip``: global gradient norm cap; 0 disables clipping
    - ``val_fraction``: fraction of clips held out for validation
    - ``val_pairs``: number of fixed validation pairs
    - ``min_phonemes``: shortest keyword pronunciation sampled as a query
    - ``min_crop_frames``: shortest random crop
    - ``seed``
    """

    lam: float = cs.TRAIN_DEFAULTS["lam"]
    batch_size: int = cs.TRAIN_DEFAULTS["batch_size"]
    epochs: int = cs.TRAIN_DEFAULTS["epochs"]
    steps_per_epoch: int = cs.TRAIN_DEFAULTS["steps_per_epoch"]
    lr: float = cs.TRAIN_DEFAULTS["lr"]
    min_lr: float = cs.TRAIN_DEFAULTS["min_lr"]
    plateau_patience: int = cs.TRAIN_DEFAULTS["plateau_patience"]
    plateau_factor: float = cs.TRAIN_DEFAULTS["plateau_factor"]
    grad_clip: float = cs.TRAIN_DEFAULTS["grad_clip"]
    val_fraction: float = cs.TRAIN_DEFAULTS["val_fraction"]
    val_pairs: int = cs.TRAIN_DEFAULTS["val_pairs"]
    min_phonemes: int = cs.TRAIN_DEFAULTS["min_phonemes"]
    min_crop_frames: int = cs.TRAIN_DEFAULTS["min_crop_frames"]
    seed: int = cs.TRAIN_DEFAULTS["seed"]

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not 0 <= self.lam <= 1:
            raise ConfigError(f"lam must lie in [0, 1]; got {self.lam}")
        for name in ["batch_size", "epochs", "steps_per_epoch", "val_pairs", "min_phonemes"]:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if not 0 < self.min_lr <= self.lr:
            raise ConfigError("Learning rates must satisfy 0 < min_lr <= lr")
        if self.plateau_factor <= 1 or self.plateau_patience < 1:
            raise ConfigError("plateau_factor must exceed 1 and plateau_patience be positive")
        if self.grad_clip < 0 or self.min_crop_frames < 1:
            raise ConfigError("grad_clip must be non-negative and min_crop_frames positive")
        if not 0 < self.val_fraction < 1:
            raise ConfigError(f"val_fraction must lie in (0, 1); got {self.val_fraction}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"Unknown train config keys {sorted(unknown)}")
        return cls(**d)


# -------------------------------------
# Pairs and batches
# -------------------------------------
@dataclass(frozen=True, eq=False)
class TrainingPair:
    """
    A (features, query, clip label, frame labels) tuple.
    A positive's frame labels are 1 exactly on the frames of the keyword's
    occurrences inside the crop, and ``span`` is the ``[start, end)`` of the
    sampled occurrence; a negative's frame labels are all 0 and its span is
    ``None``.
    """

    features: FeatureSequence
    query: ph.Query
    y_cls: int
    y_loc: np.ndarray
    clip_id: str = ""
    span: tuple[int, int] | None = None

    def __post_init__(self):
        if self.y_cls not in (0, 1):
            raise DomainError(f"Clip label must be 0 or 1; got {self.y_cls}")
        if self.y_loc.shape != (self.features.T,):
            raise DomainError("Frame labels must have one entry per frame")
        if self.y_cls == 0 and self.y_loc.any():
            raise DomainError("A negative pair cannot have positive frame labels")
        if self.y_cls == 1:
            if self.span is None or not self.y_loc[self.span[0] : self.span[1]].all():
                raise DomainError("A positive pair must label its keyword frames")


@dataclass
class Batch:
    """
    Pairs padded to a common length: ``features (B, T, d_in)``,
    ``v_mask (B, T)``, ``ids (B, n)``, ``q_mask (B, n)``, ``y_cls (B,)``,
    ``y_loc (B, T)``, and the start and last frame of each positive's span
    (``-1`` for negatives).
    """

    features: torch.Tensor
    v_mask: torch.Tensor
    ids: torch.Tensor
    q_mask: torch.Tensor
    y_cls: torch.Tensor
    y_loc: torch.Tensor
    span_start: torch.Tensor
    span_last: torch.Tensor

    def __len__(self) -> int:
        return self.y_cls.shape[0]


def collate(pairs: list[TrainingPair], dtype: torch.dtype = torch.float32) -> Batch:
    """
    Pad the given pairs to the longest clip and query among them.
    Raise a DomainError if there are no pairs.
    """
    if not pairs:
        raise DomainError("Cannot collate an empty batch")
    features, v_mask = feature_tensors([p.features.values for p in pairs])
    ids, q_mask = query_tensors([p.query for p in pairs])
    T = features.shape[1]
    y_loc = torch.zeros(len(pairs), T, dtype=dtype)
    for i, p in enumerate(pairs):
        y_loc[i, : p.features.T] = torch.from_numpy(p.y_loc.astype(np.float64)).to(dtype)
    spans = [p.span if p.span is not None else (-1, 0) for p in pairs]
    return Batch(
        features=features.to(dtype),
        v_mask=v_mask,
        ids=ids,
        q_mask=q_mask,
        y_cls=torch.tensor([float(p.y_cls) for p in pairs], dtype=dtype),
        y_loc=y_loc,
        span_start=torch.tensor([s for s, _ in spans], dtype=torch.long),
        span_last=torch.tensor([e - 1 for _, e in spans], dtype=torch.long),
    )


def predict_batch(model: Transpotter, batch: Batch) -> Prediction:
    return model(batch.features, batch.ids, batch.v_mask, batch.q_mask)


# -------------------------------------
# Losses
# -------------------------------------
def bce(y, y_hat) -> torch.Tensor:
    """
    Return the elementwise binary cross-entropy
    ``-(y * log(y_hat) + (1 - y) * log(1 - y_hat))`` with both logarithms
    floored at ``log(1e-12)``, so saturated predictions give finite values and
    perfect ones give exactly zero.
    Plain numbers are computed in 64-bit.
    """
    y_hat = torch.as_tensor(y_hat, dtype=torch.float64) if not torch.is_tensor(y_hat) else y_hat
    y = torch.as_tensor(y, dtype=y_hat.dtype)
    return -(y * nx.safe_log(y_hat) + (1 - y) * nx.safe_log(1 - y_hat))


def loss_cls(pred: Prediction, batch: Batch) -> torch.Tensor:
    """
    Return the batch mean of the clip-level binary cross-entropy.
    Raise a DomainError on an empty batch.
    """
    if len(batch) == 0:
        raise DomainError("Classification loss of an empty batch")
    return bce(batch.y_cls, pred.y_cls).mean()


def loss_loc_per_sample(pred: Prediction, batch: Batch) -> torch.Tensor:
    """
    Return the ``(B,)`` gated per-sample localization terms:
    ``y_cls * mean over real frames of bce(y_loc_t, y_loc_hat_t)`` for the
    frame head, and ``y_cls * (CE(start) + CE(last frame)) / 2`` for the span
    head.
    Raise a CapabilityError if the prediction has no localization output.
    """
    if not pred.has_loc:
        raise CapabilityError("Localization loss needs a localizing variant")
    mask = batch.v_mask.to(batch.y_loc.dtype)
    if pred.loc is not None:
        frames = bce(batch.y_loc, pred.loc) * mask
        per_sample = frames.sum(dim=1) / mask.sum(dim=1)
    else:
        start = batch.span_start.clamp(min=0)[:, None]
        last = batch.span_last.clamp(min=0)[:, None]
        ce_start = -nx.safe_log(pred.span_start.gather(1, start).squeeze(1))
        ce_end = -nx.safe_log(pred.span_end.gather(1, last).squeeze(1))
        per_sample = 0.5 * (ce_start + ce_end)
    return batch.y_cls * per_sample


def loss_loc(pred: Prediction, batch: Batch) -> torch.Tensor:
    """
    Return the batch mean of :func:`loss_loc_per_sample`, negatives included
    as exact zeros.
    """
    if len(batch) == 0:
        raise DomainError("Localization loss of an empty batch")
    return loss_loc_per_sample(pred, batch).mean()


def total_loss(pred: Prediction, batch: Batch, lam: float) -> torch.Tensor:
    """
    Return ``lam * loss_cls + (1 - lam) * loss_loc``, or ``loss_cls`` alone if
    the prediction has no localization output.
    """
    if not 0 <= lam <= 1:
        raise DomainError(f"lam must lie in [0, 1]; got {lam}")
    cls = loss_cls(pred, batch)
    if not pred.has_loc:
        return cls
    return lam * cls + (1 - lam) * loss_loc(pred, batch)


# -------------------------------------
# Sampling
# -------------------------------------
class PairSampler:
    """
    Draw training pairs from a corpus: with probability 0.5 a positive (a
    random clip, one of its eligible words as the query, a random crop that
    contains the word) and otherwise a negative (a random eligible query word,
    a random clip whose transcript lacks it, a random crop).

    Eligible words are in the lexicon, have at least ``min_phonemes``
    phonemes, and span at most ``max_frames`` frames; others are discarded.
    """

    def __init__(
        self,
        corpus: Corpus,
        *,
        min_phonemes: int = cs.TRAIN_DEFAULTS["min_phonemes"],
        min_crop_frames: int = cs.TRAIN_DEFAULTS["min_crop_frames"],
        max_frames: int = cs.MODEL_DEFAULTS["max_frames"],
    ):
        self.corpus = corpus
        self.min_crop_frames = min_crop_frames
        self.max_frames = max_frames
        self.queries: dict[str, ph.Query] = {}
        self.occurrences: dict[str, list[int]] = {}
        discarded = set()
        for clip in corpus.clips:
            for i, w in enumerate(clip.words):
                if w.word not in self.queries and w.word not in discarded:
                    try:
                        q = ph.phonemize(w.word, corpus.lexicon)
                    except KeyError:
                        discarded.add(w.word)
                        continue
                    if q.n_p < min_phonemes:
                        discarded.add(w.word)
                        continue
                    self.queries[w.word] = q
                if w.word in self.queries and w.length <= max_frames:
                    self.occurrences.setdefault(clip.id, []).append(i)
        if not self.occurrences:
            raise SamplingError("No clip has an eligible keyword")
        self.positive_clips = sorted(self.occurrences)
        self.words = sorted(self.queries)
        self.clips_by_word = {w: set() for w in self.words}
        for clip in corpus.clips:
            for w in set(clip.transcript) & self.clips_by_word.keys():
                self.clips_by_word[w].add(clip.id)
        self.clip_ids = [c.id for c in corpus.clips]
        logger.debug(
            "Sampler over %d clips: %d eligible words, %d discarded",
            len(self.clip_ids),
            len(self.words),
            len(discarded),
        )

    def _crop_bounds(
        self, T: int, rng: np.random.Generator, inside: tuple[int, int] | None = None
    ) -> tuple[int, int]:
        limit = min(T, self.max_frames)
        if inside is None:
            length = int(rng.integers(min(self.min_crop_frames, limit), limit + 1))
            a = int(rng.integers(0, T - length + 1))
            return a, a + length
        s, e = inside
        a = int(rng.integers(max(0, e - limit), s + 1))
        b = int(rng.integers(e, min(T, a + limit) + 1))
        if b - a < self.min_crop_frames:
            b = min(T, a + limit, a + self.min_crop_frames)
            a = max(0, b - self.min_crop_frames, b - limit, e - limit)
        return a, b

    def sample_positive(self, rng: np.random.Generator) -> TrainingPair:
        clip_id = self.positive_clips[int(rng.integers(len(self.positive_clips)))]
        clip = self.corpus.get_clip(clip_id)
        occurrences = self.occurrences[clip_id]
        word = clip.words[occurrences[int(rng.integers(len(occurrences)))]]
        features = self.corpus.get_features(clip_id)
        a, b = self._crop_bounds(features.T, rng, (word.start, word.end))
        spans = [(s - a, e - a) for s, e in clip.spans_of(word.word)]
        y_loc = make_frame_labels(spans, b - a)
        return TrainingPair(
            features=features.crop(a, b),
            query=self.queries[word.word],
            y_cls=1,
            y_loc=y_loc,
            clip_id=clip_id,
            span=(word.start - a, word.end - a),
        )

    def sample_negative(self, rng: np.random.Generator) -> TrainingPair:
        for _ in range(MAX_NEGATIVE_RETRIES):
            word = self.words[int(rng.integers(len(self.words)))]
            candidates = [c for c in self.clip_ids if c not in self.clips_by_word[word]]
            if candidates:
                break
            logger.debug("No negative clip for %r; resampling the query", word)
        else:
            raise SamplingError(
                f"No clip lacks the sampled query after {MAX_NEGATIVE_RETRIES} retries"
            )
        clip_id = candidates[int(rng.integers(len(candidates)))]
        features = self.corpus.get_features(clip_id)
        a, b = self._crop_bounds(features.T, rng)
        return TrainingPair(
            features=features.crop(a, b),
            query=self.queries[word],
            y_cls=0,
            y_loc=np.zeros(b - a, dtype=np.float32),
            clip_id=clip_id,
        )

    def sample(self, rng: np.random.Generator) -> TrainingPair:
        if rng.random() < 0.5:
            return self.sample_positive(rng)
        return self.sample_negative(rng)


def sample_pair(corpus: Corpus, rng: np.random.Generator, **kwargs) -> TrainingPair:
    """
    Draw one pair from the given corpus; keyword arguments go to
    :class:`PairSampler`.
    Build a PairSampler once to draw many pairs.
    """
    return PairSampler(corpus, **kwargs).sample(rng)


# -------------------------------------
# Optimization
# -------------------------------------
class OptimizerState:
    """
    Adam (betas 0.9 and 0.999, eps 1e-8) over the named parameters, with a
    learning rate divided by ``plateau_factor`` on the ``plateau_patience``-th
    consecutive epoch without validation improvement, never below ``min_lr``.
    """

    def __init__(self, params: dict[str, torch.Tensor], config: TrainConfig):
        self.params = params
        self.optimizer = torch.optim.Adam(
            list(params.values()), lr=config.lr, betas=cs.ADAM_BETAS, eps=cs.ADAM_EPS
        )
        self.scheduler = torch.optim.lr_scheduler.ReduceLROnPlateau(
            self.optimizer,
            mode="min",
            factor=1 / config.plateau_factor,
            patience=config.plateau_patience - 1,
            min_lr=config.min_lr,
        )

    @property
    def lr(self) -> float:
        return float(self.optimizer.param_groups[0]["lr"])

    @property
    def step(self) -> int:
        states = [self.optimizer.state.get(p, {}) for p in self.params.values()]
        return max((int(s["step"]) for s in states if "step" in s), default=0)

    @property
    def plateau_count(self) -> int:
        return int(self.scheduler.num_bad_epochs)

    @property
    def best_loss(self) -> float:
        return float(self.scheduler.best)

    def update_schedule(self, val_loss: float) -> bool:
        """
        Feed an epoch's validation loss to the plateau rule; return ``True``
        if the learning rate dropped.
        """
        before = self.lr
        self.scheduler.step(val_loss)
        if self.lr < before:
            logger.info("Learning rate %.3g -> %.3g", before, self.lr)
            return True
        return False

    def moments(self) -> dict[str, torch.Tensor]:
        result = {}
        for name, p in self.params.items():
            s = self.optimizer.state.get(p)
            if s:
                result[f"exp_avg.{name}"] = s["exp_avg"]
                result[f"exp_avg_sq.{name}"] = s["exp_avg_sq"]
        return result

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "lr": self.lr,
            "best": self.best_loss,
            "num_bad_epochs": self.plateau_count,
            "last_epoch": int(self.scheduler.last_epoch),
            "cooldown_counter": int(self.scheduler.cooldown_counter),
        }

    def restore(self, d: dict, moments: dict[str, torch.Tensor]) -> None:
        """
        Restore the state saved by :meth:`to_dict` and :meth:`moments`.
        """
        for group in self.optimizer.param_groups:
            group["lr"] = d["lr"]
        self.scheduler.best = d["best"]
        self.scheduler.num_bad_epochs = d["num_bad_epochs"]
        self.scheduler.last_epoch = d["last_epoch"]
        self.scheduler.cooldown_counter = d["cooldown_counter"]
        self.scheduler._last_lr = [d["lr"]]
        for name, p in self.params.items():
            if f"exp_avg.{name}" in moments:
                self.optimizer.state[p] = {
                    "step": torch.tensor(float(d["step"])),
                    "exp_avg": moments[f"exp_avg.{name}"].to(p.dtype).clone(),
                    "exp_avg_sq": moments[f"exp_avg_sq.{name}"].to(p.dtype).clone(),
                }


def adam_step(
    params: dict[str, torch.Tensor], grads: nx.GradientRecord, state: OptimizerState
) -> None:
    """
    Apply one bias-corrected Adam update to the given parameters in place.
    Raise a NonFiniteError, leaving parameters and moments untouched, if any
    gradient is not finite.
    """
    if not grads.is_finite():
        bad = [n for n, g in grads.items() if not bool(torch.isfinite(g).all())]
        raise NonFiniteError(f"Non-finite gradients for {bad}; step rejected")
    for name, p in params.items():
        p.grad = grads[name].to(p.dtype)
    state.optimizer.step()
    state.optimizer.zero_grad(set_to_none=True)


# -------------------------------------
# Training loop
# -------------------------------------
def evaluate_loss(
    model: Transpotter, pairs: list[TrainingPair], lam: float, batch_size: int = 64
) -> float:
    """
    Return the total loss of the model over the given pairs, in evaluation
    mode and without gradients.
    """
    model.eval()
    total = 0.0
    with torch.no_grad():
        for i in range(0, len(pairs), batch_size):
            chunk = pairs[i : i + batch_size]
            batch = collate(chunk, model.dtype)
            total += float(total_loss(predict_batch(model, batch), batch, lam)) * len(chunk)
    return total / len(pairs)


@dataclass
class TrainResult:
    model: Transpotter
    metrics: pd.DataFrame
    run_dir: pl.Path
    best_val_loss: float
    best_epoch: int = 0


def _write_log(rows: list[dict], path: pl.Path) -> pd.DataFrame:
    f = pd.DataFrame(rows, columns=cs.METRICS_LOG_COLUMNS)
    f.to_csv(path, index=False, float_format="%.8g")
    return f


def train(
    model_config: ModelConfig,
    train_config: TrainConfig,
    corpus: Corpus,
    run_dir: str | pl.Path,
    *,
    resume: bool = False,
) -> TrainResult:
    """
    Train a model on the given corpus and write into ``run_dir``:

    - ``best.tpck``: the checkpoint of lowest validation loss
    - ``last.tpck``: the latest checkpoint with optimizer state, for resuming
    - ``metrics.csv``: one row per epoch with the columns
      :const:`.constants.METRICS_LOG_COLUMNS`; epoch 0 is the untrained model

    A seeded shuffle holds out ``val_fraction`` of the clips, from which a
    fixed set of validation pairs is drawn.
    Each epoch draws its batches from a generator seeded by
    ``(seed, epoch)``, so a resumed run reproduces an uninterrupted one.

    If ``resume`` and ``last.tpck`` exists, then continue from it.
    On a non-finite training loss or gradient, write ``diverged.tpck`` and raise a
    NonFiniteError.
    """
    tc = train_config
    run_dir = pl.Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    train_corpus, val_corpus = corpus.split_clips(tc.val_fraction, tc.seed)
    kwargs = dict(
        min_phonemes=tc.min_phonemes,
        min_crop_frames=tc.min_crop_frames,
        max_frames=model_config.max_frames,
    )
    sampler = PairSampler(train_corpus, **kwargs)
    val_sampler = PairSampler(val_corpus, **kwargs)
    probe_rng = np.random.default_rng([tc.seed, 0, 1])
    val_pairs = [val_sampler.sample(probe_rng) for _ in range(tc.val_pairs)]
    train_probe = [sampler.sample(probe_rng) for _ in range(tc.val_pairs)]

    model = init_parameters(model_config, tc.seed)
    params = parameters_of(model)
    state = OptimizerState(params, tc)
    last_path, best_path = run_dir / "last.tpck", run_dir / "best.tpck"

    if resume and last_path.exists():
        saved = ck.load_checkpoint(last_path, model_config)
        model.load_state_dict(saved.model.state_dict())
        state.restore(saved.extra["optimizer"], saved.optimizer_tensors)
        start = saved.extra["epoch"]
        best_val, best_epoch = saved.extra["best_val_loss"], saved.extra["best_epoch"]
        rows = pd.read_csv(run_dir / "metrics.csv").iloc[: start + 1].to_dict("records")
        logger.info("Resuming from epoch %d", start)
    else:
        start = 0
        best_val = evaluate_loss(model, val_pairs, tc.lam)
        best_epoch = 0
        rows = [
            {
                "epoch": 0,
                "train_loss": evaluate_loss(model, train_probe, tc.lam),
                "val_loss": best_val,
                "lr": state.lr,
            }
        ]
        ck.save_checkpoint(best_path, model)
        _write_log(rows, run_dir / "metrics.csv")
        logger.info("Epoch 0: val loss %.5f", best_val)

    for epoch in range(start + 1, tc.epochs + 1):
        torch.manual_seed(tc.seed * 1_000_003 + epoch)
        rng = np.random.default_rng([tc.seed, epoch])
        lr = state.lr
        losses = []
        for _ in range(tc.steps_per_epoch):
            model.train()
            batch = collate([sampler.sample(rng) for _ in range(tc.batch_size)], model.dtype)
            loss = total_loss(predict_batch(model, batch), batch, tc.lam)
            if not math.isfinite(float(loss)):
                ck.save_checkpoint(run_dir / "diverged.tpck", model, extra={"epoch": epoch})
                raise NonFiniteError(
                    f"Non-finite training loss at epoch {epoch}; wrote diverged.tpck"
                )
            grads = nx.backward(loss, params)
            if tc.grad_clip > 0:
                grads.clip_(tc.grad_clip)
            try:
                adam_step(params, grads, state)
            except NonFiniteError as e:
                ck.save_checkpoint(run_dir / "diverged.tpck", model, extra={"epoch": epoch})
                raise NonFiniteError(f"{e} at epoch {epoch}; wrote diverged.tpck") from None
            losses.append(float(loss))

        val_loss = evaluate_loss(model, val_pairs, tc.lam)
        state.update_schedule(val_loss)
        rows.append(
            {"epoch": epoch, "train_loss": float(np.mean(losses)), "val_loss": val_loss, "lr": lr}
        )
        if val_loss < best_val:
            best_val, best_epoch = val_loss, epoch
            ck.save_checkpoint(best_path, model)
        extra = {
            "epoch": epoch,
            "best_val_loss": best_val,
            "best_epoch": best_epoch,
            "optimizer": state.to_dict(),
        }
        ck.save_checkpoint(last_path, model, state.moments(), extra)
        _write_log(rows, run_dir / "metrics.csv")
        logger.info(
            "Epoch %d: train loss %.5f, val loss %.5f, lr %.3g",
            epoch,
            rows[-1]["train_loss"],
            val_loss,
            lr,
        )

    metrics = _write_log(rows, run_dir / "metrics.csv")
    best = ck.load_checkpoint(best_path, model_config).model
    return TrainResult(best, metrics, run_dir, best_val, best_epoch)
