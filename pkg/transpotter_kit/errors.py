"""
Exceptions raised across modules.

Each class subclasses the builtin a caller would naturally catch, so plain
``except ValueError`` keeps working, and carries a short ``code`` that the
command line prints as ``error[<code>]: <message>``.
"""

from __future__ import annotations


class ShapeError(ValueError):
    """Tensor or sequence extents that do not fit together."""

    code = "shape"


class DomainError(ValueError):
    """Argument outside the domain of an operation."""

    code = "domain"


class CapabilityError(ValueError):
    """Output requested from a model variant that does not produce it."""

    code = "capability"


class ConfigError(ValueError):
    """Invalid or unknown configuration."""

    code = "config"


class ManifestError(ValueError):
    """Clip manifest record violating the span rules."""

    code = "manifest"


class SamplingError(RuntimeError):
    """Sampler ran out of retries."""

    code = "sampling"


class FormatError(ValueError):
    """Malformed binary file."""

    code = "format"

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class LexiconParseError(ValueError):
    """Malformed pronunciation lexicon line."""

    code = "lexicon"

    def __init__(self, message: str, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class NotInLexicon(KeyError):
    """Word absent from the pronunciation lexicon."""

    code = "not-in-lexicon"

    def __init__(self, word: str):
        super().__init__(word)
        self.word = word

    def __str__(self) -> str:
        return f"{self.word!r} is not in the lexicon"


class NonFiniteError(ArithmeticError):
    """NaN or infinity where finite values are required."""

    code = "non-finite"


class GradCheckError(NonFiniteError):
    """Finite-difference check hit a non-finite loss."""

    code = "grad-check"

    def __init__(self, message: str, parameter: str, index: tuple[int, ...]):
        super().__init__(f"{message} at {parameter}{list(index)}")
        self.parameter = parameter
        self.index = index
