"""
Functions useful across modules.
"""

from __future__ import annotations

import logging
import math
import os

import json2html as j2h
import numpy as np

from . import constants as cs

logger = logging.getLogger(__name__)


def get_runs(x) -> np.ndarray:
    """
    Given a list of booleans (or 0-1 values), return a NumPy array of pairs
    (start index, end index + 1) of the runs of true values, that is,
    half-open frame spans.

    Example::

        >>> get_runs([0, 1, 1, 0, 1])
        array([[1, 3],
               [4, 5]])

    Return an empty ``(0, 2)`` array if there are no true values.
    Recipe comes from
    `Stack Overflow <http://stackoverflow.com/questions/1066758/find-length-of-sequences-of-identical-values-in-a-numpy-array>`_.
    """
    y = np.asarray(x, dtype=bool).astype(np.int8)
    # Bound y by zeros to detect runs properly
    bounded = np.hstack(([0], y, [0]))
    # Get 1 at run starts and -1 at run ends
    diffs = np.diff(bounded)
    run_starts = np.where(diffs > 0)[0]
    run_ends = np.where(diffs < 0)[0]
    return np.array([run_starts, run_ends], dtype=np.int64).T.reshape(-1, 2)


def spans_to_mask(spans, length: int) -> np.ndarray:
    """
    The inverse of :func:`get_runs`: given half-open ``(start, end)`` pairs,
    return a boolean array of the given length that is true exactly on the
    union of the spans clipped to ``[0, length)``.
    """
    mask = np.zeros(length, dtype=bool)
    for start, end in spans:
        mask[max(start, 0) : min(end, length)] = True
    return mask


def make_ids(n: int, prefix: str = "id_") -> list[str]:
    """
    Return a length ``n`` list of unique sequentially labelled strings for use as IDs.

    Example::

        >>> make_ids(11, prefix="s")
        ['s00', 's01', 's02', 's03', 's04', 's05', 's06', 's07', 's08', 's09', 's10']

    """
    if n < 1:
        result = []
    elif n == 1:
        result = [f"{prefix}0"]
    else:
        k = int(math.log10(n - 1)) + 1  # Number of digits for IDs
        result = [f"{prefix}{i:0{k}d}" for i in range(n)]

    return result


def make_html(d: dict) -> str:
    """
    Convert the given dictionary into an HTML table (string) with
    two columns: keys of dictionary, values of dictionary.
    """
    return j2h.json2html.convert(
        json=d, table_attributes="class='table table-condensed table-hover'"
    )


def get_num_workers(default: int | None = None) -> int:
    """
    Return the size of the evaluation worker pool: the value of the
    environment variable :const:`.constants.THREADS_ENV` if set, else
    ``default``, else the CPU count; never less than 1.
    """
    value = os.environ.get(cs.THREADS_ENV)
    if value:
        try:
            n = int(value)
        except ValueError:
            logger.warning("Ignoring non-integer %s=%r", cs.THREADS_ENV, value)
            n = default or os.cpu_count() or 1
    else:
        n = default or os.cpu_count() or 1
    return max(1, n)


def round_floats(d: dict, ndigits: int = 6) -> dict:
    """
    Round every float value of the given (possibly nested) dictionary to
    ``ndigits`` decimal places, leaving other values alone.
    Turn NaN floats into ``None`` so the result serializes as strict JSON.
    """
    result = {}
    for key, value in d.items():
        if isinstance(value, dict):
            result[key] = round_floats(value, ndigits)
        elif isinstance(value, float):
            result[key] = None if math.isnan(value) else round(value, ndigits)
        else:
            result[key] = value
    return result
