"""Word error rate, word accuracy and the results table.

WER is the Levenshtein alignment cost over words, ``(S + D + I) / N``.  When
several alignments share the minimum cost, the one with the most
substitutions is reported, so the (S, D, I) split is deterministic.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable, List, Mapping, Sequence, Union

import numpy as np

from .errors import ContractError, DegenerateInputError

Words = Union[str, Sequence[str]]

SNR_ROWS = ("clean", 10, 5, 0, -5, -10)
MODE_COLUMNS = ("A", "V", "AV", "VA", "VAV")


def _words(x: Words) -> List[str]:
    """Split on whitespace and case-fold; lists are case-folded item by item."""
    items = x.split() if isinstance(x, str) else list(x)
    return [w.lower() for w in items]


@dataclass(frozen=True)
class WerBreakdown:
    S: int
    D: int
    I: int
    N: int

    @property
    def errors(self) -> int:
        return self.S + self.D + self.I

    @property
    def wer(self) -> float:
        return self.errors / self.N


def wer(ref: Words, hyp: Words) -> WerBreakdown:
    """Minimum-cost word alignment, ties resolved toward more substitutions.

    Raises :class:`DegenerateInputError` on an empty reference.
    """
    r, h = _words(ref), _words(hyp)
    n, m = len(r), len(h)
    if n == 0:
        raise DegenerateInputError("WER is undefined for an empty reference")
    # each cell holds (cost, -substitutions, deletions, insertions); tuple order is the tie-break
    table = [[None] * (m + 1) for _ in range(n + 1)]
    table[0][0] = (0, 0, 0, 0)
    for i in range(1, n + 1):
        table[i][0] = (i, 0, i, 0)
    for j in range(1, m + 1):
        table[0][j] = (j, 0, 0, j)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            c, ns, d, ins = table[i - 1][j - 1]
            if r[i - 1] == h[j - 1]:
                diag = (c, ns, d, ins)
            else:
                diag = (c + 1, ns - 1, d, ins)
            c, ns, d, ins = table[i - 1][j]
            up = (c + 1, ns, d + 1, ins)
            c, ns, d, ins = table[i][j - 1]
            left = (c + 1, ns, d, ins + 1)
            table[i][j] = min(diag, up, left)
    _, ns, d, ins = table[n][m]
    return WerBreakdown(-ns, d, ins, n)


def corpus_wer(refs: Iterable[Words], hyps: Iterable[Words]) -> float:
    """Pooled WER: total edits over total reference words."""
    errors = total = 0
    refs, hyps = list(refs), list(hyps)
    if len(refs) != len(hyps):
        raise ContractError(f"{len(refs)} references but {len(hyps)} hypotheses")
    for r, h in zip(refs, hyps):
        c = wer(r, h)
        errors += c.errors
        total += c.N
    if total == 0:
        raise DegenerateInputError("WER is undefined for an empty reference")
    return errors / total


def word_accuracy(predicted: Sequence, labels: Sequence) -> float:
    """Fraction of exact matches (top-1 word classification)."""
    predicted, labels = np.asarray(predicted), np.asarray(labels)
    if predicted.shape != labels.shape:
        raise ContractError(f"{predicted.shape} predictions for {labels.shape} labels")
    if labels.size == 0:
        raise DegenerateInputError("accuracy of an empty set")
    return float(np.mean(predicted == labels))


def _row_key(snr) -> str:
    return "clean" if snr in (None, "clean") else str(int(snr))


def report_table(results: Mapping, rows: Sequence = SNR_ROWS,
                 columns: Sequence[str] = MODE_COLUMNS) -> List[List[str]]:
    """Percent WER cells (one decimal) keyed by ``results[(snr, mode)]`` as fractions.

    Missing cells are rendered as ``-`` and rows without any result are
    omitted, so empty results give the header alone.  The first row is the header.
    """
    lookup = {(_row_key(k[0]), k[1]): v for k, v in results.items()}
    table = [["SNR(dB)"] + list(columns)]
    for snr in rows:
        key = _row_key(snr)
        cells = [key]
        for mode in columns:
            value = lookup.get((key, mode))
            cells.append("-" if value is None else f"{100.0 * value:.1f}")
        if any(c != "-" for c in cells[1:]):
            table.append(cells)
    return table


def format_table(table: List[List[str]]) -> str:
    widths = [max(len(row[i]) for row in table) for i in range(len(table[0]))]
    return "\n".join("  ".join(cell.rjust(w) for cell, w in zip(row, widths)) for row in table)


def table_to_csv(table: List[List[str]]) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(table)
    return buf.getvalue()
