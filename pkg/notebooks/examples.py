# Run via uv run --no-project marimo run notebooks/examples.py in base.

import marimo

__generated_with = "0.17.0"
app = marimo.App(width="medium")

@app.cell
def _():
    import pathlib as pl
    import tempfile

    import marimo as mo
    import pandas as pd
    import numpy as np

    import transpotter_kit as tk

    DATA = pl.Path(tempfile.mkdtemp()) / "synthetic"
    OUT = DATA.parent / "out"
    return DATA, OUT, mo, np, tk

@app.cell
def _(DATA, tk):
    # Synthesize a small dataset
    synth_config = tk.SyntheticConfig(vocab_size=20, d_in=32, num_train=200, num_test=40)
    summary = tk.synthesize_dataset(synth_config, DATA)
    {k: v for k, v in summary.items() if k != "config"}
    return

@app.cell
def _(DATA, tk):
    # Read the corpora and describe
    corpus = tk.read_corpus(DATA / "train.jsonl")
    test_corpus = tk.read_corpus(DATA / "test.jsonl")
    corpus.describe()
    return corpus, test_corpus

@app.cell
def _(corpus):
    corpus.get_words().head(10)
    return

@app.cell
def _(corpus, np, tk):
    # One training pair
    sampler = tk.PairSampler(corpus, min_phonemes=3, min_crop_frames=8, max_frames=160)
    pair = sampler.sample(np.random.default_rng(0))
    pair.query.text, pair.y_cls, pair.span, pair.features.T
    return

@app.cell
def _(OUT, corpus, tk):
    # Train a small model for a few epochs
    model_config = tk.ModelConfig(
        d=32, heads=4, text_layers=1, video_layers=1, joint_layers=1, d_in=32
    )
    train_config = tk.TrainConfig(
        batch_size=16, epochs=10, steps_per_epoch=20, lr=3e-4, plateau_patience=3
    )
    result = tk.train(model_config, train_config, corpus, OUT / "run")
    result.metrics
    return (result,)

@app.cell
def _(result, test_corpus, tk):
    # Score every test keyword against every test clip
    queries = tk.build_query_vocabulary(test_corpus.clips, test_corpus.lexicon)
    grid = tk.score_grid(result.model, queries, test_corpus)
    tk.compute_metrics(grid)
    return (grid,)

@app.cell
def _(grid, tk):
    # Metrics by keyword length
    report = tk.stratified_report(grid, "keyword_phoneme_length")
    tk.plot_metric_curve(report)
    return

@app.cell
def _(grid, test_corpus, tk):
    tk.error_analysis(grid, test_corpus, top_k=3).head(10)
    return

@app.cell
def _(result, test_corpus, tk):
    # Probe one clip with its own words
    clip = test_corpus.clips[0]
    queries_1 = tk.build_query_vocabulary([clip], test_corpus.lexicon)
    probe_frame = tk.probe(result.model, test_corpus.get_features(clip.id), queries_1, clip)
    tk.plot_probe(probe_frame)
    return

if __name__ == "__main__":
    app.run()
