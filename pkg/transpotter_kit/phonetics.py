"""
Functions about pronunciation lexicons and phoneme queries.

A lexicon is read from CMU-dictionary text: one entry per line,
``WORD  PH PH ...``, comment lines starting with ``;;;``,
alternate pronunciations suffixed ``(2)``, ``(3)``, ..., and stress digits
0/1/2 on vowels.
"""

from __future__ import annotations

import io
import logging
import pathlib as pl
import re
from dataclasses import dataclass
from types import MappingProxyType
from typing import Iterable, Iterator, Mapping

from . import constants as cs
from .errors import DomainError, LexiconParseError, NotInLexicon

logger = logging.getLogger(__name__)

VARIANT_PATTERN = re.compile(r"^(?P<word>.+)\((?P<index>\d+)\)$")
INLINE_COMMENT_PATTERN = re.compile(r"\s+#.*$")


@dataclass(frozen=True)
class PhonemeVocabulary:
    """
    An ordered list of phoneme symbols preceded by the reserved
    :const:`.constants.PAD` symbol at index 0.
    Symbols are unique and sorted lexicographically, so identifier
    assignment is reproducible.
    """

    symbols: tuple[str, ...]

    def __post_init__(self):
        if not self.symbols or self.symbols[0] != cs.PAD:
            raise DomainError(f"Vocabulary must start with {cs.PAD!r}")
        rest = self.symbols[1:]
        if list(rest) != sorted(set(rest)):
            raise DomainError("Vocabulary symbols must be unique and sorted")
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.symbols)})

    @classmethod
    def from_symbols(cls, symbols: Iterable[str]) -> "PhonemeVocabulary":
        return cls((cs.PAD,) + tuple(sorted(set(symbols) - {cs.PAD})))

    @classmethod
    def arpabet(cls, *, strip_stress: bool = True) -> "PhonemeVocabulary":
        """
        Return the 39-symbol ARPAbet vocabulary, or, if not ``strip_stress``,
        the vocabulary whose vowels carry each stress digit.
        """
        if strip_stress:
            return cls.from_symbols(cs.ARPABET)
        symbols = [s for s in cs.ARPABET if s not in cs.VOWELS]
        symbols += [v + d for v in cs.VOWELS for d in cs.STRESS_DIGITS]
        return cls.from_symbols(symbols)

    def __len__(self) -> int:
        return len(self.symbols)

    def __contains__(self, symbol: str) -> bool:
        return symbol in self._index

    def encode(self, symbol: str) -> int:
        try:
            return self._index[symbol]
        except KeyError:
            raise DomainError(f"Unknown phoneme symbol {symbol!r}") from None

    def decode(self, identifier: int) -> str:
        if not 0 <= identifier < len(self.symbols):
            raise DomainError(f"Phoneme identifier {identifier} out of range")
        return self.symbols[identifier]


class Lexicon(Mapping[str, tuple[tuple[str, ...], ...]]):
    """
    An immutable mapping from uppercase word to its pronunciations, each a
    non-empty tuple of phoneme symbols of the lexicon's vocabulary.
    Variant pronunciations are kept in file order; the first one is the
    headword entry.
    """

    def __init__(
        self,
        entries: Mapping[str, Iterable[Iterable[str]]],
        vocabulary: PhonemeVocabulary | None = None,
    ):
        self.vocabulary = vocabulary or PhonemeVocabulary.arpabet()
        d = {}
        for word, prons in entries.items():
            prons = tuple(tuple(p) for p in prons)
            if not prons or not all(prons):
                raise DomainError(f"Word {word!r} needs non-empty pronunciations")
            for pron in prons:
                for symbol in pron:
                    if symbol == cs.PAD or symbol not in self.vocabulary:
                        raise DomainError(f"Word {word!r} has unknown symbol {symbol!r}")
            d[word.upper()] = prons
        self._entries = MappingProxyType(d)

    def __getitem__(self, word: str) -> tuple[tuple[str, ...], ...]:
        return self._entries[word.upper()]

    def __contains__(self, word) -> bool:
        return isinstance(word, str) and word.upper() in self._entries

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Lexicon):
            return NotImplemented
        return self.vocabulary == other.vocabulary and dict(self._entries) == dict(
            other._entries
        )

    def __repr__(self) -> str:
        return f"Lexicon({len(self)} words, {len(self.vocabulary) - 1} phonemes)"


@dataclass(frozen=True)
class Query:
    """
    A keyword or phrase as a sequence of phoneme identifiers.
    ``text`` is the source word or space-joined phrase.
    """

    ids: tuple[int, ...]
    text: str

    def __post_init__(self):
        if not self.ids:
            raise DomainError("A query needs at least one phoneme")
        if any(i <= 0 for i in self.ids):
            raise DomainError(f"Query {self.text!r} has padding or negative identifiers")

    @property
    def n_p(self) -> int:
        return len(self.ids)

    @property
    def words(self) -> list[str]:
        return self.text.split()

    def symbols(self, vocabulary: PhonemeVocabulary) -> list[str]:
        return [vocabulary.decode(i) for i in self.ids]


def strip_stress(symbol: str) -> str:
    """
    Remove a trailing stress digit, e.g. ``'AE1'`` -> ``'AE'``.
    """
    if symbol and symbol[-1] in cs.STRESS_DIGITS:
        return symbol[:-1]
    return symbol


def parse_lexicon(
    source: str | Iterable[str],
    *,
    strip_stress_digits: bool = True,
    vocabulary: PhonemeVocabulary | None = None,
) -> Lexicon:
    """
    Parse CMU-dictionary text (a string or an iterable of lines, e.g. an open
    text file) and return a Lexicon.

    Skip blank lines and comment lines.
    Strip a trailing ``# ...`` comment from an entry.
    Uppercase words.
    If ``strip_stress_digits``, then map e.g. ``AE1`` to ``AE`` and use the
    39-symbol vocabulary; otherwise keep stress and use the stressed vocabulary.
    Both LF and CRLF line endings are accepted.
    Pronunciations are ordered by variant index, so the bare headword comes
    first wherever it appears in the file.

    Raise a LexiconParseError with the line number on an unknown phoneme
    symbol, an entry without phonemes, or a duplicate variant index.
    """
    if isinstance(source, str):
        source = io.StringIO(source)
    if vocabulary is None:
        vocabulary = PhonemeVocabulary.arpabet(strip_stress=strip_stress_digits)

    # word -> variant index -> phonemes
    variants: dict[str, dict[int, tuple[str, ...]]] = {}
    for line_number, line in enumerate(source, start=1):
        line = line.rstrip("\r\n").lstrip("\ufeff")
        if not line.strip() or line.startswith(cs.LEXICON_COMMENT):
            continue
        line = INLINE_COMMENT_PATTERN.sub("", line)
        fields = line.split()
        if len(fields) < 2:
            raise LexiconParseError(f"Entry {line.strip()!r} has no phonemes", line_number)

        head, phones = fields[0].upper(), fields[1:]
        match = VARIANT_PATTERN.match(head)
        if match:
            word, index = match["word"], int(match["index"])
        else:
            word, index = head, 1
        if index in variants.setdefault(word, {}):
            raise LexiconParseError(f"Duplicate variant ({index}) of {word}", line_number)

        if strip_stress_digits:
            phones = [strip_stress(p) for p in phones]
        for p in phones:
            if p not in vocabulary or p == cs.PAD:
                raise LexiconParseError(f"Unknown phoneme symbol {p!r}", line_number)
        variants[word][index] = tuple(phones)

    entries = {word: [v[i] for i in sorted(v)] for word, v in variants.items()}
    return Lexicon(entries, vocabulary)


def read_lexicon(path: str | pl.Path, **kwargs) -> Lexicon:
    """
    Read a CMU-format lexicon file (UTF-8) and return a Lexicon.
    Keyword arguments are passed to :func:`parse_lexicon`.
    """
    with pl.Path(path).open(encoding="utf-8", newline="") as src:
        lexicon = parse_lexicon(src, **kwargs)
    logger.debug("Read %s from %s", lexicon, path)
    return lexicon


def serialize_lexicon(lexicon: Lexicon) -> str:
    """
    Return the given Lexicon as CMU-dictionary text, one line per
    pronunciation, variants suffixed ``(2)``, ``(3)``, ... in order.
    """
    lines = []
    for word in lexicon:
        for i, pron in enumerate(lexicon[word], start=1):
            head = word if i == 1 else f"{word}({i})"
            lines.append(f"{head}  {' '.join(pron)}")
    return "\n".join(lines) + ("\n" if lines else "")


def write_lexicon(lexicon: Lexicon, path: str | pl.Path) -> None:
    pl.Path(path).write_text(serialize_lexicon(lexicon), encoding="utf-8")


def phonemize(word: str, lexicon: Lexicon) -> Query:
    """
    Return the Query for the first-listed pronunciation of the given word.
    Words are looked up verbatim after uppercasing, apostrophes included.

    Raise NotInLexicon if the word is absent; callers discard such samples.
    """
    if word not in lexicon:
        raise NotInLexicon(word)
    pron = lexicon[word][0]
    ids = tuple(lexicon.vocabulary.encode(p) for p in pron)
    return Query(ids=ids, text=word.lower())


def phonemize_phrase(words: Iterable[str], lexicon: Lexicon) -> Query:
    """
    Return the Query of a phrase: the concatenation of the first
    pronunciation of each word, in order.

    Raise a DomainError if no words are given and NotInLexicon if any word is
    absent.
    """
    words = list(words)
    if not words:
        raise DomainError("A phrase needs at least one word")
    queries = [phonemize(w, lexicon) for w in words]
    ids = tuple(i for q in queries for i in q.ids)
    return Query(ids=ids, text=" ".join(q.text for q in queries))
