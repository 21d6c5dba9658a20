"""
This module defines a Corpus class to represent a keyword-spotting dataset:
aligned clips, the pronunciation lexicon, and the directory their feature
files are resolved against.

Most Corpus methods are defined in other modules (``data.py`` mostly) and
imported within the Corpus class, so they appear in the Sphinx docs with an
extra leading ``corpus`` parameter.
Ignore that extra parameter; it refers to the Corpus instance.
"""

from __future__ import annotations

import logging
import pathlib as pl

from . import data as dt
from . import phonetics as ph
from .data import ClipRecord
from .phonetics import Lexicon

logger = logging.getLogger(__name__)


class Corpus(object):
    """
    An instance of this class represents a set of aligned clips.

    Primary instance attributes:

    - ``clips``: list of ClipRecords in manifest order
    - ``lexicon``: the Lexicon used to phonemize transcript words
    - ``root``: directory against which relative feature paths resolve

    Features are read lazily and cached per clip.
    """

    from .data import (
        clips_with_word,
        describe,
        get_clip,
        get_features,
        get_words,
        split_clips,
        subset_clips,
    )

    def __init__(self, clips: list[ClipRecord], lexicon: Lexicon, root: str | pl.Path):
        self.clips = list(clips)
        self.lexicon = lexicon
        self.root = pl.Path(root)
        self._index = {c.id: c for c in self.clips}
        self._features = {}

    def __len__(self) -> int:
        return len(self.clips)

    def __str__(self) -> str:
        return f"Corpus({len(self.clips)} clips, {self.lexicon!r}, root={self.root})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, Corpus):
            return NotImplemented
        return self.clips == other.clips and self.lexicon == other.lexicon


def read_corpus(
    manifest_path: str | pl.Path,
    lexicon_path: str | pl.Path | None = None,
    *,
    check_features: bool = True,
    strip_stress_digits: bool = True,
) -> Corpus:
    """
    Read a manifest and a CMU-format lexicon and return a Corpus rooted at the
    manifest's directory.
    If no lexicon path is given, then use ``lexicon.txt`` next to the manifest.
    If ``check_features``, then validate every span against its feature file.
    """
    manifest_path = pl.Path(manifest_path)
    if not manifest_path.exists():
        raise ValueError(f"Path {manifest_path} does not exist")
    if lexicon_path is None:
        lexicon_path = manifest_path.parent / "lexicon.txt"
    clips = dt.load_manifest(manifest_path, check_features=check_features)
    lexicon = ph.read_lexicon(lexicon_path, strip_stress_digits=strip_stress_digits)
    corpus = Corpus(clips, lexicon, manifest_path.parent)
    logger.info("Read %s", corpus)
    return corpus
