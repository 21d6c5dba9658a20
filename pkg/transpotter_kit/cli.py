"""
Command-line interface: ``transpotter synth|train|eval|spot|probe``.

Every command accepts ``--config PATH`` (JSON run config), ``--seed N`` and
any number of dot-path overrides such as ``--model.d 64``.
Errors go to stderr as ``error[<code>]: <message>`` with exit code 1.
"""

from __future__ import annotations

import argparse
import json
import logging
import pathlib as pl
import shutil
import sys

from . import checkpoints as ck
from . import config as cf
from . import constants as cs
from . import evaluation as ev
from . import helpers as hp
from . import phonetics as ph
from . import synthetic as sy
from . import training as tr
from .corpus import read_corpus
from .data import read_features
from .errors import ConfigError, DomainError

logger = logging.getLogger(__name__)


class CommandError(Exception):
    """Refusal to run a command as asked."""

    code = "refused"


def _overrides(args: argparse.Namespace, extra: list[str]) -> dict:
    overrides = cf.parse_overrides(extra)
    if args.seed is not None:
        for key in ["seed", *(f"{name}.seed" for name in cf.SEEDED_SECTIONS)]:
            overrides[key] = args.seed
    for flag, key in [
        ("variant", "model.variant"),
        ("lam", "train.lam"),
        ("min_phonemes", "eval.min_phonemes"),
        ("tau", "eval.tau"),
        ("ngram", "eval.ngram"),
    ]:
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    return overrides


def _check_width(corpus, model_config) -> None:
    if not corpus.clips:
        return
    d_in = corpus.get_features(corpus.clips[0].id).d_in
    if d_in != model_config.d_in:
        raise ConfigError(
            f"Features are {d_in} wide but the model expects d_in={model_config.d_in}"
        )


def _is_nonempty_dir(path: pl.Path) -> bool:
    return path.is_dir() and any(path.iterdir())


def cmd_synth(cfg: cf.RunConfig, args: argparse.Namespace) -> int:
    """
    Write a synthetic dataset to ``--out`` or ``paths.data``.
    Refuse a non-empty target directory unless ``--force``.
    """
    out = pl.Path(args.out) if args.out else cfg.paths.data_dir
    if _is_nonempty_dir(out):
        if not args.force:
            raise CommandError(f"{out} is not empty; pass --force to overwrite it")
        shutil.rmtree(out)
    summary = sy.synthesize_dataset(cfg.synth, out)
    cf.echo_config(cfg, out)
    for key in ["num_train_clips", "num_test_clips", "vocab_size", "hours_equivalent"]:
        print(f"{key}\t{summary[key]}")
    return 0


def cmd_train(cfg: cf.RunConfig, args: argparse.Namespace) -> int:
    """
    Train on ``paths.train_manifest`` into ``<out>/train-<config hash>``.
    Refuse an existing run unless ``--resume`` or ``--force``.
    """
    corpus = read_corpus(cfg.paths.train_manifest_path, cfg.paths.lexicon_path)
    _check_width(corpus, cfg.model)
    root = pl.Path(args.out) if args.out else pl.Path(cfg.paths.out)
    run_dir = root / f"train-{cf.config_hash(cfg)}"
    if (run_dir / "metrics.csv").exists() and not args.resume:
        if not args.force:
            raise CommandError(f"{run_dir} holds a run; pass --resume or --force")
        shutil.rmtree(run_dir)
    cf.echo_config(cfg, run_dir)
    result = tr.train(cfg.model, cfg.train, corpus, run_dir, resume=args.resume)
    print(f"run_dir\t{run_dir}")
    print(f"best_epoch\t{result.best_epoch}")
    print(f"best_val_loss\t{result.best_val_loss:.6f}")
    return 0


def cmd_eval(cfg: cf.RunConfig, args: argparse.Namespace) -> int:
    """
    Evaluate a checkpoint on a manifest and write ``metrics.json``,
    ``metrics.csv``, ``report.html``, stratified CSVs, the metric-versus-length
    SVG and the retrieval error table.
    """
    checkpoint = ck.load_checkpoint(args.checkpoint)
    model = checkpoint.model
    manifest = pl.Path(args.manifest) if args.manifest else cfg.paths.test_manifest_path
    corpus = read_corpus(manifest, args.lexicon or cfg.paths.lexicon_path)
    _check_width(corpus, checkpoint.config)
    ec = cfg.eval

    queries = ev.build_phrase_vocabulary(
        corpus.clips, corpus.lexicon, ec.ngram, ec.min_phonemes
    )
    if not queries:
        raise DomainError("The query vocabulary is empty")
    grid = ev.score_grid(
        model, queries, corpus, batch_size=ec.batch_size, num_workers=ec.num_workers
    )
    metrics = ev.compute_metrics(grid, ec)
    metrics["variant"] = checkpoint.config.variant
    metrics["ngram"] = ec.ngram
    metrics["min_phonemes"] = ec.min_phonemes
    oov = ev.list_out_of_lexicon(corpus.clips, corpus.lexicon)
    metrics["num_out_of_lexicon_words"] = len(oov)

    out = (
        pl.Path(args.out)
        if args.out
        else pl.Path(args.checkpoint).parent / f"eval-{cf.config_hash(cfg)}"
    )
    ev.write_metrics(metrics, out)
    cf.echo_config(cfg, out)
    for axis in ["keyword_phoneme_length", "clip_word_count"]:
        report = ev.stratified_report(grid, axis, ec)
        report.to_csv(out / f"strata_{axis}.csv", index=False, float_format="%.6f")
        if axis == "keyword_phoneme_length":
            ev.plot_metric_curve(report, out / "map_vs_phonemes.svg")
    ev.error_analysis(grid, corpus, ec.top_k_errors).to_csv(
        out / "errors.csv", index=False, float_format="%.6f"
    )

    for key in cs.HEADLINE_METRICS:
        value = metrics.get(key, "-")
        print(f"{key}\t{value if isinstance(value, str) else f'{value:.4f}'}")
    print(f"report\t{out / 'metrics.json'}")
    return 0


def cmd_spot(cfg: cf.RunConfig, args: argparse.Namespace) -> int:
    """
    Print the presence probability of a keyword or phrase in one feature file
    and its frame spans at threshold ``eval.tau``; optionally write the frame
    curve as CSV.
    """
    logger.debug("Config %s", json.dumps(cfg.to_dict(), sort_keys=True))
    checkpoint = ck.load_checkpoint(args.checkpoint)
    lexicon = ph.read_lexicon(args.lexicon or cfg.paths.lexicon_path)
    words = [w for arg in args.keyword for w in arg.split()]
    if len(words) == 1:
        query = ph.phonemize(words[0], lexicon)
    else:
        query = ph.phonemize_phrase(words, lexicon)
    features = read_features(args.features)

    if not checkpoint.config.has_loc:
        y_cls, _ = ev.score_clip(checkpoint.model, features.values, [query])
        print(f"y_cls\t{y_cls[0]:.4f}")
        print("spans\t-")
        return 0

    frame = ev.probe(checkpoint.model, features.values, [query])
    print(f"y_cls\t{frame['y_cls'].iat[0]:.4f}")
    mask = ev.binarize_loc(frame["y_loc"].to_numpy(), cfg.eval.tau)
    print(f"spans\t{json.dumps(hp.get_runs(mask).tolist())}")
    if args.curve:
        frame.to_csv(args.curve, index=False, float_format="%.6f")
    return 0


def cmd_probe(cfg: cf.RunConfig, args: argparse.Namespace) -> int:
    """
    Write ``probe.csv`` and ``probe.svg`` with the frame curves of the given
    queries on one clip of a manifest.
    """
    checkpoint = ck.load_checkpoint(args.checkpoint)
    manifest = pl.Path(args.manifest) if args.manifest else cfg.paths.test_manifest_path
    corpus = read_corpus(manifest, args.lexicon or cfg.paths.lexicon_path)
    clip = corpus.get_clip(args.clip_id)
    queries = [
        ph.phonemize_phrase(q.split(), corpus.lexicon) for q in args.queries
    ]
    frame = ev.probe(checkpoint.model, corpus.get_features(clip.id).values, queries, clip)
    out = pl.Path(args.out) if args.out else pl.Path(args.checkpoint).parent / f"probe-{clip.id}"
    out.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out / "probe.csv", index=False, float_format="%.6f")
    ev.plot_probe(frame, out / "probe.svg")
    cf.echo_config(cfg, out)
    for query, peak in ev.probe_peaks(frame).items():
        print(f"{query}\tpeak frame {peak}")
    print(f"probe\t{out / 'probe.csv'}")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "spot": cmd_spot,
    "probe": cmd_probe,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=pl.Path, help="JSON run config")
    common.add_argument("--seed", type=int, help="random seed of the run")
    common.add_argument("--out", help="output directory")
    common.add_argument("--force", action="store_true", help="overwrite existing output")
    common.add_argument("-v", "--verbose", action="store_true", help="log debug messages")

    parser = argparse.ArgumentParser(
        prog="transpotter",
        description="Visual keyword spotting with a cross-modal transformer.",
        epilog="Extra --section.key value pairs override run config entries.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")

    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--variant", help="model variant")
    p.add_argument("--lambda", dest="lam", type=float, help="classification loss weight")
    p.add_argument("--resume", action="store_true", help="continue from last.tpck")

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("checkpoint", type=pl.Path)
    p.add_argument("--manifest", help="test manifest (default paths.test_manifest)")
    p.add_argument("--lexicon", help="CMU-format lexicon (default paths.lexicon)")
    p.add_argument("--min-phonemes", dest="min_phonemes", type=int)
    p.add_argument("--tau", type=float, help="frame binarization threshold")
    p.add_argument("--ngram", type=int, help="words per query (phrases if > 1)")

    p = sub.add_parser("spot", parents=[common], help="spot a keyword in one clip")
    p.add_argument("checkpoint", type=pl.Path)
    p.add_argument("features", type=pl.Path, help="TPFT feature file")
    p.add_argument("keyword", nargs="+", help="keyword or phrase")
    p.add_argument("--lexicon", help="CMU-format lexicon (default paths.lexicon)")
    p.add_argument("--tau", type=float, help="frame binarization threshold")
    p.add_argument("--curve", type=pl.Path, help="write the frame curve as CSV")

    p = sub.add_parser("probe", parents=[common], help="plot query curves on one clip")
    p.add_argument("checkpoint", type=pl.Path)
    p.add_argument("clip_id")
    p.add_argument("queries", nargs="+", help="keywords or quoted phrases")
    p.add_argument("--manifest", help="manifest holding the clip (default paths.test_manifest)")
    p.add_argument("--lexicon", help="CMU-format lexicon (default paths.lexicon)")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    if not hasattr(args, "resume"):
        args.resume = False
    try:
        cfg = cf.load_run_config(args.config, _overrides(args, extra))
        return COMMANDS[args.command](cfg, args)
    except (ValueError, KeyError, ArithmeticError, RuntimeError, CommandError) as e:
        code = getattr(e, "code", type(e).__name__)
        print(f"error[{code}]: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error[io]: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
