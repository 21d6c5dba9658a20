"""
Functions about generating synthetic keyword-spotting datasets.

Each phoneme gets a fixed unit-norm signature vector.
A clip is a sequence of words; each phoneme of each word is realized as its
signature repeated ``frames_per_phoneme`` times, neighbouring phonemes are
linearly cross-faded over ``blend`` frames on either side of their joint,
and Normal noise is added.
Alignments are exact by construction.

Homophemes are injected by reserving "twin" phonemes that share the signature
of a partner phoneme: a twin word swaps the first phoneme of a base word for
its twin, so the two words are pronounced differently but look identical.
"""

from __future__ import annotations

import json
import logging
import pathlib as pl
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import constants as cs
from . import data as dt
from . import helpers as hp
from . import phonetics as ph
from .errors import ConfigError, DomainError

logger = logging.getLogger(__name__)

MAX_CLIP_ATTEMPTS = 1000


@dataclass
class SyntheticConfig:
    """
    Synthetic dataset parameters.

    - ``vocab_size``: number of words, twin words included
    - ``min_phonemes``, ``max_phonemes``: pronunciation length range (uniform)
    - ``frames_per_phoneme``: frames per phoneme
    - ``noise``: standard deviation of the additive Normal noise
    - ``d_in``: feature width
    - ``min_words``, ``max_words``: words per clip range (uniform)
    - ``blend``: cross-fade half-width in frames at phoneme joints
    - ``max_frames``: longest clip; longer draws are resampled
    - ``num_train``, ``num_test``: clip counts of the two splits
    - ``num_homophemes``: number of injected homopheme word pairs
    - ``seed``
    """

    vocab_size: int = 50
    min_phonemes: int = 2
    max_phonemes: int = 6
    frames_per_phoneme: int = 3
    noise: float = 0.1
    d_in: int = 64
    min_words: int = 4
    max_words: int = 9
    blend: int = 1
    max_frames: int = 160
    num_train: int = 500
    num_test: int = 100
    num_homophemes: int = 0
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in [
            "vocab_size",
            "min_phonemes",
            "frames_per_phoneme",
            "d_in",
            "min_words",
            "max_frames",
            "num_train",
        ]:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.max_phonemes < self.min_phonemes or self.max_words < self.min_words:
            raise ConfigError("Range maxima must not be below their minima")
        if self.noise < 0 or self.blend < 0 or self.num_test < 0 or self.num_homophemes < 0:
            raise ConfigError("noise, blend, num_test and num_homophemes must be non-negative")
        if 2 * self.blend > self.frames_per_phoneme:
            raise ConfigError(
                f"Cross-fades of half-width {self.blend} do not fit in "
                f"{self.frames_per_phoneme} frames per phoneme"
            )
        if self.num_homophemes > 10 or 2 * self.num_homophemes > self.vocab_size:
            raise ConfigError("Too many homophemes for the vocabulary")
        if self.min_words * self.min_phonemes * self.frames_per_phoneme > self.max_frames:
            raise ConfigError("The shortest possible clip exceeds max_frames")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"Unknown synthetic config keys {sorted(unknown)}")
        return cls(**d)


@dataclass
class SyntheticWorld:
    """
    The fixed part of a synthetic dataset: the lexicon, the signature of every
    phoneme symbol, and the homopheme word pairs.
    """

    lexicon: ph.Lexicon
    signatures: dict[str, np.ndarray]
    homophemes: list[tuple[str, str]]

    @property
    def words(self) -> list[str]:
        return [w.lower() for w in self.lexicon]


def make_world(cfg: SyntheticConfig, rng: np.random.Generator) -> SyntheticWorld:
    """
    Draw phoneme signatures and a vocabulary of words with distinct random
    pronunciations, then inject the configured homopheme pairs.
    """
    symbols = list(cs.ARPABET)
    twins = symbols[len(symbols) - cfg.num_homophemes :] if cfg.num_homophemes else []
    pool = [s for s in symbols if s not in twins]

    raw = rng.standard_normal((len(symbols), cfg.d_in))
    raw /= np.linalg.norm(raw, axis=1, keepdims=True)
    signatures = {s: raw[i] for i, s in enumerate(symbols)}

    names = hp.make_ids(cfg.vocab_size, prefix="w")
    num_base = cfg.vocab_size - cfg.num_homophemes
    prons: list[tuple[str, ...]] = []
    taken = set()
    while len(prons) < num_base:
        n = int(rng.integers(cfg.min_phonemes, cfg.max_phonemes + 1))
        pron = tuple(pool[i] for i in rng.integers(0, len(pool), size=n))
        if pron not in taken:
            taken.add(pron)
            prons.append(pron)

    homophemes = []
    if twins:
        # Prefer base words long enough to be evaluated as keywords
        order = sorted(range(num_base), key=lambda i: (len(prons[i]) < 3, i))
        for twin, i in zip(twins, order):
            base = prons[i]
            signatures[twin] = signatures[base[0]]
            prons.append((twin,) + base[1:])
            homophemes.append((names[i], names[len(prons) - 1]))

    entries = {name.upper(): [pron] for name, pron in zip(names, prons)}
    lexicon = ph.Lexicon(entries, ph.PhonemeVocabulary.arpabet())
    return SyntheticWorld(lexicon, signatures, homophemes)


def realize_phonemes(
    world: SyntheticWorld,
    symbols: list[str],
    cfg: SyntheticConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """
    Return the ``(len(symbols) * frames_per_phoneme) x d_in`` float32 frames of
    the given phoneme sequence, cross-faded at joints and with noise added.
    """
    r, b = cfg.frames_per_phoneme, cfg.blend
    sig = np.stack([world.signatures[s] for s in symbols])
    frames = np.repeat(sig, r, axis=0)
    for i in range(1, len(symbols)):
        joint = i * r
        for o in range(2 * b):
            alpha = (o + 0.5) / (2 * b)
            frames[joint - b + o] = (1 - alpha) * sig[i - 1] + alpha * sig[i]
    if cfg.noise > 0:
        frames = frames + cfg.noise * rng.standard_normal(frames.shape)
    return frames.astype(np.float32)


def make_clip(
    world: SyntheticWorld,
    cfg: SyntheticConfig,
    rng: np.random.Generator,
    clip_id: str,
) -> tuple[dt.ClipRecord, dt.FeatureSequence]:
    """
    Draw a clip of uniformly many uniformly chosen words, redrawing while it
    is longer than ``max_frames``, and return its record and features.
    The record's feature path is ``features/<clip_id>.tpft``.
    """
    words = world.words
    r = cfg.frames_per_phoneme
    for _ in range(MAX_CLIP_ATTEMPTS):
        n = int(rng.integers(cfg.min_words, cfg.max_words + 1))
        chosen = [words[i] for i in rng.integers(0, len(words), size=n)]
        prons = [world.lexicon[w][0] for w in chosen]
        if sum(len(p) for p in prons) * r <= cfg.max_frames:
            break
    else:
        raise DomainError(f"Could not draw a clip of at most {cfg.max_frames} frames")

    spans, start = [], 0
    for w, p in zip(chosen, prons):
        end = start + len(p) * r
        spans.append(dt.WordSpan(w, start, end))
        start = end
    symbols = [s for p in prons for s in p]
    features = dt.FeatureSequence(realize_phonemes(world, symbols, cfg, rng))
    record = dt.ClipRecord(clip_id, f"features/{clip_id}.tpft", tuple(spans))
    return record, features


def synthesize_dataset(cfg: SyntheticConfig, out_dir: str | pl.Path) -> dict:
    """
    Generate a synthetic dataset into the given directory:

    - ``lexicon.txt``: CMU-format lexicon of the vocabulary
    - ``train.jsonl``, ``test.jsonl``: manifests
    - ``features/<clip_id>.tpft``: feature files
    - ``summary.json``: clip counts, vocabulary size, frame totals,
      hours-equivalent at 25 fps, homopheme pairs, and the config

    Return the summary dictionary.
    The output is a deterministic function of the config.
    """
    out_dir = pl.Path(out_dir)
    (out_dir / "features").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    world = make_world(cfg, rng)
    ph.write_lexicon(world.lexicon, out_dir / "lexicon.txt")

    summary = {}
    for split, n in [("train", cfg.num_train), ("test", cfg.num_test)]:
        records, num_frames = [], 0
        for clip_id in hp.make_ids(n, prefix=f"{split}_"):
            record, features = make_clip(world, cfg, rng, clip_id)
            dt.write_features(out_dir / record.features, features)
            records.append(record)
            num_frames += features.T
        dt.write_manifest(records, out_dir / f"{split}.jsonl")
        summary[f"num_{split}_clips"] = n
        summary[f"num_{split}_frames"] = num_frames

    total = summary["num_train_frames"] + summary["num_test_frames"]
    summary["vocab_size"] = len(world.lexicon)
    summary["hours_equivalent"] = round(total / cs.FPS / 3600, 6)
    summary["homophemes"] = [list(pair) for pair in world.homophemes]
    summary["config"] = cfg.to_dict()
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    logger.info(
        "Synthesized %d train and %d test clips (%d words) in %s",
        cfg.num_train,
        cfg.num_test,
        len(world.lexicon),
        out_dir,
    )
    return summary
