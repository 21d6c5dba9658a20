"""
Functions about clip features and manifests.

Features live in ``TPFT`` files: a 16-byte header ``b"TPFT"``, version, T and
d_in as unsigned 32-bit little-endian integers, then ``T * d_in`` float32
little-endian values in row-major order.

A manifest is a JSON-lines file with one clip per line::

    {"id": "c001", "features": "features/c001.tpft",
     "words": [{"w": "cat", "start": 0, "end": 9}, ...]}

Word spans are half-open frame intervals ``[start, end)``.
Feature paths are relative to the manifest's directory unless absolute.
"""

from __future__ import annotations

import json
import logging
import pathlib as pl
import struct
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable

import numpy as np
import pandas as pd

from . import constants as cs
from . import helpers as hp
from .errors import DomainError, FormatError, ManifestError

if TYPE_CHECKING:
    from .corpus import Corpus

logger = logging.getLogger(__name__)

HEADER = struct.Struct("<4sIII")


# -------------------------------------
# Features
# -------------------------------------
@dataclass(frozen=True, eq=False)
class FeatureSequence:
    """
    A ``T x d_in`` float32 matrix of per-frame visual features with
    ``T >= 1`` and all values finite.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float32)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise DomainError(f"Features must be a non-empty T x d_in matrix; got {v.shape}")
        if not np.isfinite(v).all():
            raise DomainError("Features must be finite")
        object.__setattr__(self, "values", v)

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def d_in(self) -> int:
        return self.values.shape[1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureSequence):
            return NotImplemented
        return self.values.shape == other.values.shape and (
            self.values.tobytes() == other.values.tobytes()
        )

    def crop(self, start: int, end: int) -> "FeatureSequence":
        return FeatureSequence(self.values[start:end])


def serialize_features(fs: FeatureSequence) -> bytes:
    header = HEADER.pack(cs.TPFT_MAGIC, cs.TPFT_VERSION, fs.T, fs.d_in)
    return header + fs.values.astype("<f4").tobytes(order="C")


def deserialize_features(data: bytes) -> FeatureSequence:
    """
    Parse ``TPFT`` bytes into a FeatureSequence.

    Raise a FormatError with the byte offset of the problem on a short header,
    bad magic, unsupported version, zero extent, truncated or overlong payload,
    or non-finite value.
    """
    if len(data) < HEADER.size:
        raise FormatError("Feature file header truncated", len(data))
    magic, version, T, d_in = HEADER.unpack_from(data)
    if magic != cs.TPFT_MAGIC:
        raise FormatError(f"Bad feature file magic {magic!r}", 0)
    if version != cs.TPFT_VERSION:
        raise FormatError(f"Unsupported feature file version {version}", 4)
    if T < 1:
        raise FormatError("Feature file has no frames", 8)
    if d_in < 1:
        raise FormatError("Feature file has zero width", 12)

    expected = HEADER.size + 4 * T * d_in
    if len(data) < expected:
        raise FormatError(f"Feature payload truncated; expected {expected} bytes", len(data))
    if len(data) > expected:
        raise FormatError("Trailing bytes after feature payload", expected)

    values = np.frombuffer(data, dtype="<f4", offset=HEADER.size).reshape(T, d_in)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise FormatError("Non-finite feature value", HEADER.size + 4 * int(bad[0]))
    return FeatureSequence(values.astype(np.float32))


def read_features(path: str | pl.Path) -> FeatureSequence:
    """
    Read a ``TPFT`` feature file; see :func:`deserialize_features`.
    """
    return deserialize_features(pl.Path(path).read_bytes())


def write_features(path: str | pl.Path, fs: FeatureSequence) -> None:
    path = pl.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(serialize_features(fs))


def read_frame_count(path: str | pl.Path) -> int:
    """
    Return T from the header of the given feature file without reading the
    payload.
    """
    with pl.Path(path).open("rb") as src:
        data = src.read(HEADER.size)
    if len(data) < HEADER.size:
        raise FormatError("Feature file header truncated", len(data))
    magic, version, T, _ = HEADER.unpack(data)
    if magic != cs.TPFT_MAGIC:
        raise FormatError(f"Bad feature file magic {magic!r}", 0)
    if version != cs.TPFT_VERSION:
        raise FormatError(f"Unsupported feature file version {version}", 4)
    return T


# -------------------------------------
# Manifests
# -------------------------------------
@dataclass(frozen=True)
class WordSpan:
    """
    A lowercase transcript word uttered over the frames ``[start, end)``.
    """

    word: str
    start: int
    end: int

    @property
    def length(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class ClipRecord:
    """
    A clip: its identifier, the path to its feature file, and its ordered,
    non-overlapping word alignments.
    """

    id: str
    features: str
    words: tuple[WordSpan, ...]

    @property
    def transcript(self) -> list[str]:
        return [w.word for w in self.words]

    @property
    def word_count(self) -> int:
        return len(self.words)

    def spans_of(self, word: str) -> list[tuple[int, int]]:
        """
        Return the ``[start, end)`` spans of every occurrence of the given
        word, case-insensitively.
        """
        word = word.lower()
        return [(w.start, w.end) for w in self.words if w.word == word]

    def phrase_spans(self, words: list[str]) -> list[tuple[int, int]]:
        """
        Return the spans from the first word's start to the last word's end of
        every occurrence of the given consecutive words.
        """
        words = [w.lower() for w in words]
        n = len(words)
        t = self.transcript
        return [
            (self.words[i].start, self.words[i + n - 1].end)
            for i in range(len(t) - n + 1)
            if t[i : i + n] == words
        ]

    def validate(self, T: int | None = None) -> None:
        """
        Raise a ManifestError naming this clip if a span is empty, negative,
        out of order, overlapping, or (if ``T`` is given) beyond frame ``T``.
        """
        previous_end = 0
        for w in self.words:
            if w.start < 0 or w.end <= w.start:
                raise ManifestError(
                    f"Clip {self.id}: word {w.word!r} has invalid span [{w.start}, {w.end})"
                )
            if w.start < previous_end:
                raise ManifestError(
                    f"Clip {self.id}: word {w.word!r} at [{w.start}, {w.end}) overlaps "
                    f"or precedes the previous word ending at {previous_end}"
                )
            if T is not None and w.end > T:
                raise ManifestError(
                    f"Clip {self.id}: word {w.word!r} ends at {w.end} beyond T={T}"
                )
            previous_end = w.end


def _frame_index(value) -> int:
    # JSON integers only; floats would be truncated
    if not isinstance(value, int) or isinstance(value, bool):
        raise TypeError(f"frame index {value!r} is not an integer")
    return value


def record_from_dict(d: dict, line_number: int | None = None) -> ClipRecord:
    where = f"line {line_number}: " if line_number is not None else ""
    missing = [k for k in cs.MANIFEST_KEYS if k not in d]
    if missing:
        raise ManifestError(f"{where}manifest object lacks keys {missing}")
    try:
        words = tuple(
            WordSpan(str(w["w"]).lower(), _frame_index(w["start"]), _frame_index(w["end"]))
            for w in d["words"]
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ManifestError(f"{where}clip {d['id']}: malformed word entry ({e})") from None
    return ClipRecord(id=str(d["id"]), features=str(d["features"]), words=words)


def record_to_dict(record: ClipRecord) -> dict:
    return {
        "id": record.id,
        "features": record.features,
        "words": [{"w": w.word, "start": w.start, "end": w.end} for w in record.words],
    }


def resolve_features_path(record: ClipRecord, root: str | pl.Path) -> pl.Path:
    p = pl.Path(record.features)
    return p if p.is_absolute() else pl.Path(root) / p


def parse_manifest(lines: Iterable[str], root: pl.Path | None = None) -> list[ClipRecord]:
    """
    Parse JSON-lines manifest text into validated ClipRecords, skipping blank
    lines.
    If ``root`` is given, then also check every span against the frame count
    of the clip's feature file resolved against that directory.

    Raise a ManifestError on malformed JSON, missing keys, duplicate clip
    identifiers, or a span violation.
    """
    records = []
    seen = set()
    for line_number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
        except json.JSONDecodeError as e:
            raise ManifestError(f"line {line_number}: invalid JSON ({e.msg})") from None
        if not isinstance(d, dict):
            raise ManifestError(f"line {line_number}: expected a JSON object")
        record = record_from_dict(d, line_number)
        if record.id in seen:
            raise ManifestError(f"line {line_number}: duplicate clip id {record.id}")
        seen.add(record.id)
        T = read_frame_count(resolve_features_path(record, root)) if root else None
        record.validate(T)
        records.append(record)
    return records


def load_manifest(path: str | pl.Path, *, check_features: bool = False) -> list[ClipRecord]:
    """
    Read a JSON-lines manifest; see :func:`parse_manifest`.
    If ``check_features``, then check spans against each feature file's T.
    """
    path = pl.Path(path)
    with path.open(encoding="utf-8-sig") as src:
        records = parse_manifest(src, path.parent if check_features else None)
    logger.debug("Loaded %d clips from %s", len(records), path)
    return records


def serialize_manifest(records: Iterable[ClipRecord]) -> str:
    return "".join(json.dumps(record_to_dict(r)) + "\n" for r in records)


def write_manifest(records: Iterable[ClipRecord], path: str | pl.Path) -> None:
    pl.Path(path).write_text(serialize_manifest(records), encoding="utf-8")


def manifest_to_frame(records: Iterable[ClipRecord]) -> pd.DataFrame:
    """
    Return a DataFrame with one row per aligned word and the columns

    - ``'clip_id'``
    - ``'word_index'``: position of the word in its clip's transcript
    - ``'word'``
    - ``'start'``
    - ``'end'``

    """
    rows = [
        {"clip_id": r.id, "word_index": i, "word": w.word, "start": w.start, "end": w.end}
        for r in records
        for i, w in enumerate(r.words)
    ]
    return pd.DataFrame(rows, columns=["clip_id", "word_index", "word", "start", "end"])


def make_frame_labels(spans: Iterable[tuple[int, int]], T: int) -> np.ndarray:
    """
    Return the length ``T`` 0-1 float32 vector that is 1 exactly on the union
    of the given spans.
    """
    return hp.spans_to_mask(spans, T).astype(np.float32)


# -------------------------------------
# Functions on corpora
# -------------------------------------
def get_clip(corpus: "Corpus", clip_id: str) -> ClipRecord:
    """
    Return the ClipRecord of the given identifier.
    Raise a DomainError listing the available identifiers if it is absent.
    """
    try:
        return corpus._index[clip_id]
    except KeyError:
        ids = [c.id for c in corpus.clips]
        shown = ", ".join(ids[:20]) + (", ..." if len(ids) > 20 else "")
        raise DomainError(f"Unknown clip id {clip_id!r}; available ids: {shown}") from None


def get_features(corpus: "Corpus", clip_id: str) -> FeatureSequence:
    """
    Return the features of the given clip, reading the file on first access.
    """
    if clip_id not in corpus._features:
        record = get_clip(corpus, clip_id)
        corpus._features[clip_id] = read_features(resolve_features_path(record, corpus.root))
    return corpus._features[clip_id]


def get_words(corpus: "Corpus") -> pd.DataFrame:
    """
    Return :func:`manifest_to_frame` of the corpus clips with an extra column
    ``'num_phonemes'`` (NaN for out-of-lexicon words).
    """
    f = manifest_to_frame(corpus.clips)
    lex = corpus.lexicon
    f["num_phonemes"] = [
        len(lex[w][0]) if w in lex else np.nan for w in f["word"].tolist()
    ]
    return f


def clips_with_word(corpus: "Corpus", word: str) -> list[str]:
    word = word.lower()
    return [c.id for c in corpus.clips if word in c.transcript]


def subset_clips(corpus: "Corpus", clip_ids: Iterable[str]) -> "Corpus":
    """
    Return a new Corpus restricted to the given clip identifiers, in the
    given order, sharing the lexicon and the feature cache.
    """
    from .corpus import Corpus

    records = [get_clip(corpus, i) for i in clip_ids]
    other = Corpus(records, corpus.lexicon, corpus.root)
    other._features = corpus._features
    return other


def split_clips(
    corpus: "Corpus", fraction: float, seed: int
) -> tuple["Corpus", "Corpus"]:
    """
    Shuffle the clips with the given seed and return ``(rest, held_out)``
    where ``held_out`` has ``ceil(fraction * n)`` clips (at least one if
    ``fraction > 0`` and there are at least two clips).
    """
    if not 0 <= fraction < 1:
        raise DomainError(f"Split fraction must lie in [0, 1); got {fraction}")
    ids = [c.id for c in corpus.clips]
    order = np.random.default_rng(seed).permutation(len(ids))
    n = int(np.ceil(fraction * len(ids))) if len(ids) > 1 else 0
    held = [ids[i] for i in sorted(order[:n])]
    rest = [ids[i] for i in sorted(order[n:])]
    return subset_clips(corpus, rest), subset_clips(corpus, held)


def describe(corpus: "Corpus") -> pd.DataFrame:
    """
    Return a DataFrame of various corpus indicators and values,
    e.g. number of clips.

    The resulting DataFrame has the columns

    - ``'indicator'``: string; name of an indicator, e.g. 'num_clips'
    - ``'value'``: value of the indicator, e.g. 500

    Frame counts come from the feature file headers.
    """
    words = get_words(corpus)
    num_frames = sum(
        read_frame_count(resolve_features_path(c, corpus.root)) for c in corpus.clips
    )
    d = dict()
    d["num_clips"] = len(corpus.clips)
    d["num_word_tokens"] = words.shape[0]
    d["num_word_types"] = words["word"].nunique()
    d["num_out_of_lexicon_types"] = words.loc[words["num_phonemes"].isna(), "word"].nunique()
    d["lexicon_size"] = len(corpus.lexicon)
    d["num_frames"] = num_frames
    d["hours_equivalent"] = num_frames / cs.FPS / 3600
    return pd.DataFrame(list(d.items()), columns=["indicator", "value"])
