"""File formats: distribution-sequence JSON and sample-batch CSV."""
from __future__ import annotations

import csv
import json
from fractions import Fraction
from pathlib import Path

import numpy as np

from .core import DistributionSequence, ProbabilityVector, SampleBatch, ValidationError

BATCH_HEADER = ["source", "draw_index", "value"]


def read_sequence(path, exact: bool = False) -> DistributionSequence:
    """Load ``{"k": int, "T": int, "rows": [[...], ...]}``.

    With ``exact=True`` every number is parsed from its decimal text as a
    ``Fraction``, so ``0.1`` means exactly one tenth.
    """
    text = Path(path).read_text()
    try:
        doc = json.loads(text, parse_float=Fraction if exact else float)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc})") from None
    try:
        k, T, rows = int(doc["k"]), int(doc["T"]), doc["rows"]
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"{path}: missing field {exc}") from None
    if len(rows) != T:
        raise ValidationError(f"{path}: header says T={T} but {len(rows)} rows given")
    if any(len(r) != k for r in rows):
        raise ValidationError(f"{path}: every row must have length k={k}")
    if exact:
        return DistributionSequence([ProbabilityVector.from_fractions(r) for r in rows])
    return DistributionSequence.from_rows(rows)


def sequence_to_dict(seq: DistributionSequence) -> dict:
    return {"k": seq.k, "T": seq.T, "rows": seq.rows().tolist()}


def write_sequence(seq: DistributionSequence, path) -> None:
    Path(path).write_text(json.dumps(sequence_to_dict(seq)) + "\n")


def read_reference(path, exact: bool = False) -> ProbabilityVector:
    """A reference distribution is a sequence file with a single row."""
    seq = read_sequence(path, exact=exact)
    if seq.T != 1:
        raise ValidationError(f"{path}: a reference distribution file must hold exactly one row")
    return seq[0]


def read_batch(path, k: int | None = None) -> SampleBatch:
    """Load a ``source,draw_index,value`` CSV.

    Sources and draw indices are 1-based.  When ``k`` is omitted the largest
    observed value is used.
    """
    cells: dict[int, dict[int, int]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != BATCH_HEADER:
            raise ValidationError(f"{path}: header must be {','.join(BATCH_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                source, index, value = (int(x) for x in row)
            except ValueError:
                raise ValidationError(f"{path}:{lineno}: expected three integers") from None
            slot = cells.setdefault(source, {})
            if index in slot:
                raise ValidationError(f"{path}:{lineno}: duplicate draw {source},{index}")
            slot[index] = value
    if not cells:
        raise ValidationError(f"{path}: no samples")
    T = max(cells)
    if sorted(cells) != list(range(1, T + 1)):
        raise ValidationError(f"{path}: sources must be numbered 1..T without gaps")
    c = len(cells[1])
    for source, slot in cells.items():
        if sorted(slot) != list(range(1, c + 1)):
            raise ValidationError(f"{path}: source {source} must have draws 1..{c}")
    draws = np.array([[cells[t][j] for j in range(1, c + 1)] for t in range(1, T + 1)])
    if k is None:
        k = int(draws.max())
    return SampleBatch(draws, k)


def write_batch(batch: SampleBatch, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(BATCH_HEADER)
        for t in range(batch.T):
            for j in range(batch.c):
                writer.writerow([t + 1, j + 1, int(batch.draws[t, j])])
