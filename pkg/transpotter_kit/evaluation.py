"""
Functions about evaluating keyword spotting.

Every query of the test vocabulary is scored against every test clip.
Clips are ranked per query by clip probability, ties broken by ascending clip
id.
Retrieval is scored with Acc@k and mean average precision (mAP-cls);
localization with mAP-loc, where a retrieved clip only counts as relevant if
it contains the keyword and the intersection-over-union of the binarized
frame predictions with the keyword's frames reaches a threshold.
"""

from __future__ import annotations

import json
import logging
import pathlib as pl
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Iterable

import matplotlib
import numpy as np
import pandas as pd
import torch
from matplotlib.figure import Figure

from . import constants as cs
from . import helpers as hp
from . import phonetics as ph
from .corpus import Corpus
from .data import ClipRecord
from .errors import CapabilityError, ConfigError, DomainError, ShapeError
from .model import Transpotter, feature_tensors, query_tensors

logger = logging.getLogger(__name__)


@dataclass
class EvalConfig:
    """
    Evaluation parameters.

    - ``min_phonemes``: shortest keyword pronunciation in the query vocabulary
    - ``ks``: cut-offs of Acc@k
    - ``tau``: frame binarization threshold (frames with probability >= tau)
    - ``iou_threshold``: least IOU of a correct localization
    - ``ngram``: words per query; 1 for keywords, more for phrases
    - ``cumulative``: bucket stratified reports by ``>=`` instead of ``==``
    - ``batch_size``: queries scored per forward pass
    - ``num_workers``: size of the scoring thread pool; ``None`` means the
      ``TRANSPOTTER_THREADS`` environment variable or the CPU count
    - ``top_k_errors``: ranks inspected by the error analysis
    """

    min_phonemes: int = 3
    ks: list[int] = field(default_factory=lambda: [1, 5])
    tau: float = 0.5
    iou_threshold: float = 0.5
    ngram: int = 1
    cumulative: bool = True
    batch_size: int = 64
    num_workers: int | None = None
    top_k_errors: int = 10

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not 0 < self.tau < 1:
            raise ConfigError(f"tau must lie in (0, 1); got {self.tau}")
        if not 0 < self.iou_threshold <= 1:
            raise ConfigError(f"IOU threshold must lie in (0, 1]; got {self.iou_threshold}")
        if self.min_phonemes < 1 or self.ngram < 1 or self.batch_size < 1:
            raise ConfigError("min_phonemes, ngram and batch_size must be positive")
        if not self.ks or min(self.ks) < 1:
            raise ConfigError(f"Acc@k cut-offs must be positive; got {self.ks}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"Unknown eval config keys {sorted(unknown)}")
        return cls(**d)


# -------------------------------------
# Query vocabularies
# -------------------------------------
def list_out_of_lexicon(clips: Iterable[ClipRecord], lexicon: ph.Lexicon) -> list[str]:
    """
    Return the sorted distinct transcript words absent from the lexicon.
    """
    return sorted({w for c in clips for w in c.transcript if w not in lexicon})


def build_phrase_vocabulary(
    clips: Iterable[ClipRecord],
    lexicon: ph.Lexicon,
    n: int = 1,
    min_phonemes: int = 3,
) -> list[ph.Query]:
    """
    Return the queries of all distinct runs of ``n`` consecutive transcript
    words whose words are all in the lexicon with pronunciations of at least
    ``min_phonemes`` phonemes, sorted by text.
    Out-of-lexicon words are skipped and counted in the log.
    """
    if n < 1:
        raise DomainError(f"Phrases need at least one word; got {n}")
    clips = list(clips)
    eligible = {}
    for c in clips:
        for w in c.transcript:
            if w not in eligible:
                eligible[w] = w in lexicon and len(lexicon[w][0]) >= min_phonemes
    phrases = set()
    for c in clips:
        t = c.transcript
        for i in range(len(t) - n + 1):
            if all(eligible[w] for w in t[i : i + n]):
                phrases.add(tuple(t[i : i + n]))
    skipped = list_out_of_lexicon(clips, lexicon)
    if skipped:
        logger.info("Skipped %d out-of-lexicon words", len(skipped))
    return [ph.phonemize_phrase(p, lexicon) for p in sorted(phrases, key=" ".join)]


def build_query_vocabulary(
    clips: Iterable[ClipRecord], lexicon: ph.Lexicon, min_phonemes: int = 3
) -> list[ph.Query]:
    """
    Return the queries of the distinct in-lexicon transcript words with
    pronunciations of at least ``min_phonemes`` phonemes, sorted by word.
    """
    return build_phrase_vocabulary(clips, lexicon, 1, min_phonemes)


# -------------------------------------
# Score grids
# -------------------------------------
@dataclass
class ScoreGrid:
    """
    Model outputs and ground truth for every (query, clip) cell.

    - ``queries``: list of Q queries
    - ``clip_ids``: list of C clip identifiers
    - ``lengths``: ``(C,)`` frame counts
    - ``word_counts``: ``(C,)`` transcript lengths
    - ``y_cls``: ``(Q, C)`` clip probabilities
    - ``present``: ``(Q, C)`` keyword presence
    - ``gt``: ``(Q, C, T_max)`` ground-truth frames, false beyond each clip
    - ``y_loc``: ``(Q, C, T_max)`` frame probabilities, zero beyond each clip,
      or ``None`` for classification-only models
    """

    queries: list[ph.Query]
    clip_ids: list[str]
    lengths: np.ndarray
    word_counts: np.ndarray
    y_cls: np.ndarray
    present: np.ndarray
    gt: np.ndarray
    y_loc: np.ndarray | None = None

    @property
    def has_loc(self) -> bool:
        return self.y_loc is not None

    @property
    def shape(self) -> tuple[int, int]:
        return self.y_cls.shape

    def subset(self, query_indices=None, clip_indices=None) -> "ScoreGrid":
        qi = np.arange(len(self.queries)) if query_indices is None else np.asarray(query_indices)
        ci = np.arange(len(self.clip_ids)) if clip_indices is None else np.asarray(clip_indices)
        qi, ci = qi.astype(int), ci.astype(int)

        def cut(a):
            return a[np.ix_(qi, ci)]

        return ScoreGrid(
            queries=[self.queries[i] for i in qi],
            clip_ids=[self.clip_ids[i] for i in ci],
            lengths=self.lengths[ci],
            word_counts=self.word_counts[ci],
            y_cls=cut(self.y_cls),
            present=cut(self.present),
            gt=cut(self.gt),
            y_loc=None if self.y_loc is None else cut(self.y_loc),
        )

    def to_frame(self) -> pd.DataFrame:
        """
        Return a DataFrame with one row per cell and the columns
        ``'query'``, ``'num_phonemes'``, ``'clip_id'``, ``'y_cls'``,
        ``'present'``.
        """
        Q, C = self.shape
        return pd.DataFrame(
            {
                "query": np.repeat([q.text for q in self.queries], C),
                "num_phonemes": np.repeat([q.n_p for q in self.queries], C),
                "clip_id": np.tile(self.clip_ids, Q),
                "y_cls": self.y_cls.ravel(),
                "present": self.present.ravel(),
            }
        )


def make_ground_truth(
    queries: list[ph.Query], clips: list[ClipRecord], lengths: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """
    Return ``(present, gt)``: presence ``(Q, C)`` and frame sets
    ``(Q, C, T_max)`` as the union of the query's occurrence spans.
    """
    T_max = int(lengths.max()) if len(lengths) else 0
    gt = np.zeros((len(queries), len(clips), T_max), dtype=bool)
    for i, q in enumerate(queries):
        for j, c in enumerate(clips):
            gt[i, j, : lengths[j]] = hp.spans_to_mask(c.phrase_spans(q.words), lengths[j])
    present = gt.any(axis=2)
    return present, gt


def score_clip(
    model: Transpotter,
    features: np.ndarray,
    queries: list[ph.Query],
    batch_size: int = 64,
) -> tuple[np.ndarray, np.ndarray | None]:
    """
    Score one ``T x d_in`` feature array against the given queries in chunks
    of ``batch_size`` and return ``(y_cls, y_loc)`` as float64 arrays of
    shapes ``(Q,)`` and ``(Q, T)``, the latter ``None`` for
    classification-only models.
    """
    model.eval()
    y_cls = np.empty(len(queries))
    y_loc = np.zeros((len(queries), features.shape[0])) if model.config.has_loc else None
    x, v_mask = feature_tensors([features])
    for start in range(0, len(queries), batch_size):
        chunk = queries[start : start + batch_size]
        ids, q_mask = query_tensors(chunk)
        B = len(chunk)
        with torch.no_grad():
            pred = model(x.expand(B, -1, -1), ids, v_mask.expand(B, -1), q_mask)
        y_cls[start : start + B] = pred.y_cls.double().numpy()
        if y_loc is not None:
            y_loc[start : start + B] = pred.y_loc.double().numpy()
    return y_cls, y_loc


def score_grid(
    model: Transpotter,
    queries: list[ph.Query],
    corpus: Corpus,
    *,
    batch_size: int = 64,
    num_workers: int | None = None,
) -> ScoreGrid:
    """
    Score every query against every clip of the corpus.
    Clips are scored in a thread pool; each clip's queries go through the
    model in fixed chunks of ``batch_size``, so the result does not depend on
    the number of workers.
    Model errors are re-raised naming the clip.
    """
    model.eval()
    clips = corpus.clips
    lengths = np.array([corpus.get_features(c.id).T for c in clips], dtype=int)
    word_counts = np.array([c.word_count for c in clips], dtype=int)
    present, gt = make_ground_truth(queries, clips, lengths)

    def task(j):
        clip = clips[j]
        try:
            return score_clip(model, corpus.get_features(clip.id).values, queries, batch_size)
        except (ShapeError, DomainError) as e:
            raise type(e)(f"While scoring clip {clip.id}: {e}") from e

    Q, C = len(queries), len(clips)
    y_cls = np.zeros((Q, C))
    y_loc = np.zeros(gt.shape) if model.config.has_loc else None
    workers = hp.get_num_workers(num_workers)
    logger.info("Scoring %d queries x %d clips with %d workers", Q, C, workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for j, (cls, loc) in enumerate(pool.map(task, range(C))):
            y_cls[:, j] = cls
            if y_loc is not None:
                y_loc[:, j, : lengths[j]] = loc

    return ScoreGrid(
        queries=list(queries),
        clip_ids=[c.id for c in clips],
        lengths=lengths,
        word_counts=word_counts,
        y_cls=y_cls,
        present=present,
        gt=gt,
        y_loc=y_loc,
    )


# -------------------------------------
# Metrics
# -------------------------------------
def rank_clips(scores: np.ndarray, clip_ids: list[str]) -> np.ndarray:
    """
    Return the clip indices sorted by descending score, ties broken by
    ascending clip id.
    """
    id_rank = np.argsort(np.argsort(np.array(clip_ids, dtype=object), kind="stable"))
    return np.lexsort((id_rank, -np.asarray(scores, dtype=float)))


def average_precision(relevance, num_relevant: int | None = None) -> float:
    """
    Given 0-1 relevance values in rank order, return
    ``(1 / P) * sum of precision@r over the ranks r of relevant items``,
    where ``P`` is ``num_relevant`` if given, else the number of relevant
    items.

    Raise a DomainError if ``P`` is zero.
    """
    rel = np.asarray(relevance, dtype=bool)
    P = int(rel.sum()) if num_relevant is None else int(num_relevant)
    if P <= 0:
        raise DomainError("Average precision needs at least one relevant item")
    ranks = np.flatnonzero(rel) + 1
    precision = np.arange(1, ranks.size + 1) / ranks
    return float(precision.sum() / P)


def _scored_queries(grid: ScoreGrid) -> np.ndarray:
    keep = np.flatnonzero(grid.present.any(axis=1))
    if keep.size < len(grid.queries):
        logger.debug("Ignoring %d queries absent from every clip", len(grid.queries) - keep.size)
    return keep


def acc_at_k(grid: ScoreGrid, k: int) -> float:
    """
    Return the fraction of queries for which one of the ``k`` top-ranked clips
    contains the keyword.
    Raise a DomainError if ``k < 1``.
    """
    if k < 1:
        raise DomainError(f"k must be at least 1; got {k}")
    keep = _scored_queries(grid)
    if not keep.size:
        return float("nan")
    hits = [grid.present[i, rank_clips(grid.y_cls[i], grid.clip_ids)[:k]].any() for i in keep]
    return float(np.mean(hits))


def map_cls(grid: ScoreGrid) -> float:
    """
    Return the mean over queries of the average precision of the ranked
    clips with relevance being keyword presence.
    """
    keep = _scored_queries(grid)
    if not keep.size:
        return float("nan")
    aps = [
        average_precision(grid.present[i, rank_clips(grid.y_cls[i], grid.clip_ids)])
        for i in keep
    ]
    return float(np.mean(aps))


def binarize_loc(y_loc, tau: float = 0.5) -> np.ndarray:
    """
    Return the boolean array of frames with probability at least ``tau``.
    """
    return np.asarray(y_loc) >= tau


def iou(pred, gt) -> float:
    """
    Return the intersection over union of two frame sets, given as boolean
    arrays of one length or as sets of frame indices; 0 if both are empty.
    """
    if isinstance(pred, (set, frozenset)) or isinstance(gt, (set, frozenset)):
        pred, gt = set(pred), set(gt)
        union = len(pred | gt)
        return len(pred & gt) / union if union else 0.0
    pred, gt = np.asarray(pred, dtype=bool), np.asarray(gt, dtype=bool)
    union = int((pred | gt).sum())
    return int((pred & gt).sum()) / union if union else 0.0


def localized(grid: ScoreGrid, tau: float = 0.5, iou_threshold: float = 0.5) -> np.ndarray:
    """
    Return the ``(Q, C)`` boolean array of cells where the keyword is present
    and the binarized frame predictions reach the IOU threshold.
    Raise a CapabilityError if the grid has no frame predictions.
    """
    if not grid.has_loc:
        raise CapabilityError("Localization metrics need a localizing variant")
    pred = binarize_loc(grid.y_loc, tau)
    inter = (pred & grid.gt).sum(axis=2)
    union = (pred | grid.gt).sum(axis=2)
    ious = np.divide(inter, union, out=np.zeros(inter.shape), where=union > 0)
    return grid.present & (ious >= iou_threshold)


def map_loc(grid: ScoreGrid, tau: float = 0.5, iou_threshold: float = 0.5) -> float:
    """
    Return mAP-loc: like :func:`map_cls` on the same ranking, except a clip is
    relevant only if it is correctly localized, while each query's
    denominator stays its number of clips containing the keyword.
    """
    ok = localized(grid, tau, iou_threshold)
    keep = _scored_queries(grid)
    if not keep.size:
        return float("nan")
    aps = []
    for i in keep:
        order = rank_clips(grid.y_cls[i], grid.clip_ids)
        P = int(grid.present[i].sum())
        aps.append(average_precision(ok[i, order], P))
    return float(np.mean(aps))


def compute_metrics(grid: ScoreGrid, cfg: EvalConfig | None = None) -> dict:
    """
    Return a dictionary of the headline metrics ``acc@k`` (for each k in the
    config), ``map_cls`` and ``map_loc`` (``'-'`` for classification-only
    grids), plus the grid size.
    """
    cfg = cfg or EvalConfig()
    d = {f"acc@{k}": acc_at_k(grid, k) for k in cfg.ks}
    d["map_cls"] = map_cls(grid)
    d["map_loc"] = map_loc(grid, cfg.tau, cfg.iou_threshold) if grid.has_loc else "-"
    d["num_queries"] = int(_scored_queries(grid).size)
    d["num_clips"] = len(grid.clip_ids)
    return d


# -------------------------------------
# Reports
# -------------------------------------
def stratified_report(
    grid: ScoreGrid,
    axis: str = "keyword_phoneme_length",
    cfg: EvalConfig | None = None,
) -> pd.DataFrame:
    """
    Return a DataFrame of metrics per bucket of the given axis, one of
    :const:`.constants.STRATA_AXES`: queries bucketed by phoneme length or
    clips bucketed by transcript word count.
    Buckets hold the values ``>= lower`` if ``cfg.cumulative`` else
    ``== lower``.

    The columns are

    - ``'axis'``
    - ``'bucket'``: e.g. ``'>=3'`` or ``'3'``
    - ``'lower'``: integer bucket value
    - ``'num_queries'``: queries present in some bucket clip
    - ``'num_clips'``
    - ``'map_cls'``
    - ``'map_loc'``: NaN for classification-only grids

    """
    cfg = cfg or EvalConfig()
    if axis not in cs.STRATA_AXES:
        raise DomainError(f"Axis must lie in {cs.STRATA_AXES}; got {axis!r}")
    if axis == "keyword_phoneme_length":
        values = np.array([q.n_p for q in grid.queries], dtype=int)
    else:
        values = np.asarray(grid.word_counts, dtype=int)

    rows = []
    for lower in sorted(set(values.tolist())):
        members = np.flatnonzero(values >= lower if cfg.cumulative else values == lower)
        if axis == "keyword_phoneme_length":
            sub = grid.subset(query_indices=members)
        else:
            sub = grid.subset(clip_indices=members)
        rows.append(
            {
                "axis": axis,
                "bucket": f">={lower}" if cfg.cumulative else str(lower),
                "lower": lower,
                "num_queries": int(_scored_queries(sub).size),
                "num_clips": len(sub.clip_ids),
                "map_cls": map_cls(sub),
                "map_loc": map_loc(sub, cfg.tau, cfg.iou_threshold)
                if sub.has_loc
                else np.nan,
            }
        )
    return pd.DataFrame(
        rows,
        columns=["axis", "bucket", "lower", "num_queries", "num_clips", "map_cls", "map_loc"],
    )


def _save_svg(fig: Figure, path: str | pl.Path) -> None:
    with matplotlib.rc_context({"svg.hashsalt": "transpotter"}):
        fig.savefig(path, format="svg", metadata={"Date": None})


def plot_metric_curve(report: pd.DataFrame, path: str | pl.Path | None = None) -> Figure:
    """
    Plot mAP-cls and mAP-loc against the bucket lower bound of a
    :func:`stratified_report`; save as SVG if a path is given.
    """
    fig = Figure(figsize=(6, 4))
    ax = fig.subplots()
    for metric, color in [("map_cls", cs.COLORS_SET2[0]), ("map_loc", cs.COLORS_SET2[1])]:
        if report[metric].notna().any():
            ax.plot(report["lower"], report[metric], marker="o", color=color, label=metric)
    axis = report["axis"].iat[0] if not report.empty else ""
    ax.set_xlabel(axis.replace("_", " "))
    ax.set_ylabel("mAP")
    ax.set_ylim(0, 1.02)
    ax.legend()
    if path is not None:
        _save_svg(fig, path)
    return fig


def error_analysis(grid: ScoreGrid, corpus: Corpus, top_k: int = 10) -> pd.DataFrame:
    """
    List, per query, the clips among the ``top_k`` ranked that do not contain
    it, with their transcripts, so confusions with similar-looking words can
    be inspected.

    The columns are ``'query'``, ``'rank'`` (1-based), ``'clip_id'``,
    ``'y_cls'``, ``'transcript'``.
    """
    rows = []
    for i, q in enumerate(grid.queries):
        order = rank_clips(grid.y_cls[i], grid.clip_ids)[:top_k]
        for rank, j in enumerate(order, start=1):
            if not grid.present[i, j]:
                clip = corpus.get_clip(grid.clip_ids[j])
                rows.append(
                    {
                        "query": q.text,
                        "rank": rank,
                        "clip_id": clip.id,
                        "y_cls": float(grid.y_cls[i, j]),
                        "transcript": " ".join(clip.transcript),
                    }
                )
    return pd.DataFrame(rows, columns=["query", "rank", "clip_id", "y_cls", "transcript"])


def probe(
    model: Transpotter,
    features: np.ndarray,
    queries: list[ph.Query],
    clip: ClipRecord | None = None,
) -> pd.DataFrame:
    """
    Score one clip against the given queries and return a DataFrame with T
    rows per query and the columns

    - ``'query'``
    - ``'frame'``
    - ``'y_cls'``: the clip probability, repeated
    - ``'y_loc'``: the frame probability
    - ``'in_gt'``: whether the frame belongs to the query in the clip's
      alignment (only if the clip record is given)

    Raise a CapabilityError for classification-only models.
    """
    if not model.config.has_loc:
        raise CapabilityError("Probing needs a localizing variant")
    if not queries:
        raise DomainError("Probing needs at least one query")
    model.eval()
    features = np.asarray(getattr(features, "values", features))
    y_cls, y_loc = score_clip(model, features, list(queries), batch_size=len(queries))
    T = features.shape[0]
    frames = []
    for i, q in enumerate(queries):
        f = pd.DataFrame(
            {"query": q.text, "frame": np.arange(T), "y_cls": y_cls[i], "y_loc": y_loc[i]}
        )
        if clip is not None:
            f["in_gt"] = hp.spans_to_mask(clip.phrase_spans(q.words), T)
        frames.append(f)
    return pd.concat(frames, ignore_index=True)


def probe_peaks(probe_frame: pd.DataFrame) -> pd.Series:
    """
    Return the frame of highest probability per query of a :func:`probe`
    table (first such frame on ties), indexed by query in input order.
    """
    idx = probe_frame.groupby("query", sort=False)["y_loc"].idxmax()
    return probe_frame.loc[idx].set_index("query")["frame"]


def plot_probe(probe_frame: pd.DataFrame, path: str | pl.Path | None = None) -> Figure:
    """
    Overlay the frame-probability curves of a :func:`probe` table, shading
    ground-truth frames if known; save as SVG if a path is given.
    """
    fig = Figure(figsize=(8, 4))
    ax = fig.subplots()
    for i, (query, f) in enumerate(probe_frame.groupby("query", sort=False)):
        color = cs.COLORS_SET2[i % len(cs.COLORS_SET2)]
        label = f"{query} ({f['y_cls'].iat[0]:.2f})"
        ax.plot(f["frame"], f["y_loc"], color=color, label=label)
        if "in_gt" in f:
            for start, end in hp.get_runs(f["in_gt"].to_numpy()):
                ax.axvspan(start - 0.5, end - 0.5, color=color, alpha=0.15)
    ax.set_xlabel("frame")
    ax.set_ylabel("keyword probability")
    ax.set_ylim(0, 1.02)
    ax.legend()
    if path is not None:
        _save_svg(fig, path)
    return fig


def write_metrics(metrics: dict, out_dir: str | pl.Path) -> None:
    """
    Write ``metrics.json``, a one-row ``metrics.csv``, and an HTML table
    ``report.html`` of the given metrics into the given directory.
    """
    out_dir = pl.Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    d = hp.round_floats(metrics)
    (out_dir / "metrics.json").write_text(json.dumps(d, indent=2, sort_keys=True) + "\n")
    pd.DataFrame([d]).to_csv(out_dir / "metrics.csv", index=False)
    (out_dir / "report.html").write_text(hp.make_html(d) + "\n")
