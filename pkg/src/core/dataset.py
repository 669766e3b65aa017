from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Literal, Mapping, Sequence

import numpy as np
from scipy import sparse

from .errors import (
    EmptyUnlabeled,
    InvalidBudget,
    MalformedLine,
    MissingLabel,
    NonIncreasingIndex,
    UnmappedLabel,
)

logger = logging.getLogger(__name__)

Label = Literal[-1, 1]

# Public datasets use {-1,+1}, {0,1} and {1,2}; these tokens cover all three.
DEFAULT_LABEL_MAP: dict[str, int] = {"+1": 1, "1": 1, "-1": -1, "0": -1, "2": -1}


@dataclass(frozen=True)
class Example:
    """
    One data point: a sparse feature vector plus an optional ±1 label.

    Notes
    -----
    - `features` maps 1-based feature indices to values; absent indices read as 0.
    - Indices are kept in strictly increasing order so serialization is canonical.
    - On unlabeled data the label is only retained for evaluation; the learner never
      reads it.
    """

    features: Mapping[int, float] = field(default_factory=dict)
    label: Label | None = None

    def __post_init__(self) -> None:
        feats = dict(self.features)
        keys = list(feats)
        for prev, cur in zip(keys, keys[1:]):
            if cur <= prev:
                raise ValueError(f"feature indices must be strictly increasing ({prev}, {cur})")
        for idx, val in feats.items():
            if idx < 1:
                raise ValueError(f"feature index must be >= 1, got {idx}")
            if not math.isfinite(val):
                raise ValueError(f"feature {idx} has a non-finite value")
        if self.label not in (None, -1, 1):
            raise ValueError("`label` must be -1, +1 or None.")
        object.__setattr__(self, "features", feats)

    def value(self, index: int) -> float:
        """Feature value at a 1-based index (0.0 when missing)."""
        return self.features.get(index, 0.0)


@dataclass(frozen=True)
class DatasetSplit:
    """A labeled budget drawn from a labeled pool; everything else becomes unlabeled."""

    labeled: tuple[Example, ...]
    unlabeled: tuple[Example, ...]
    seed: int


# =======================
# Text formats
# =======================

def _map_label(token: str, label_map: Mapping[str, int], line_no: int) -> int:
    try:
        label = label_map[token]
    except KeyError:
        raise UnmappedLabel(token, line_no) from None
    if label not in (-1, 1):
        raise UnmappedLabel(token, line_no)
    return label


def _parse_svmlight_line(line: str, line_no: int, label_map: Mapping[str, int]) -> Example:
    body = line.split("#", 1)[0]
    tokens = body.split()
    label = _map_label(tokens[0], label_map, line_no)
    features: dict[int, float] = {}
    last = 0
    for tok in tokens[1:]:
        idx_text, sep, val_text = tok.partition(":")
        if not sep:
            raise MalformedLine(line_no, f"expected <index>:<value>, got {tok!r}")
        if idx_text == "qid":
            continue
        try:
            idx = int(idx_text)
            val = float(val_text)
        except ValueError:
            raise MalformedLine(line_no, f"cannot read feature token {tok!r}") from None
        if idx < 1:
            raise MalformedLine(line_no, f"feature index must be >= 1, got {idx}")
        if not math.isfinite(val):
            raise MalformedLine(line_no, f"non-finite value in {tok!r}")
        if idx <= last:
            raise NonIncreasingIndex(line_no, idx)
        features[idx] = val
        last = idx
    return Example(features=features, label=label)


def parse_svmlight(
    stream: IO[bytes] | bytes,
    label_map: Mapping[str, int] | None = None,
) -> list[Example]:
    """
    Parse svmlight/libsvm text: one `<label> <idx>:<val> ...` example per line.

    Parameters
    ----------
    stream : binary file object or bytes
        UTF-8 encoded text. Blank lines and `#` comments are skipped.
    label_map : Mapping[str, int], optional
        Label token -> ±1. Defaults to `DEFAULT_LABEL_MAP`. Any token not in the map
        (e.g. a third class) raises `UnmappedLabel`.

    Raises
    ------
    MalformedLine, NonIncreasingIndex, UnmappedLabel
        With the 1-based line number of the offending line.
    """
    lmap = DEFAULT_LABEL_MAP if label_map is None else label_map
    raw = stream if isinstance(stream, bytes) else stream.read()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedLine(0, f"input is not UTF-8 ({exc.reason})") from None

    examples: list[Example] = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.split("#", 1)[0].strip():
            continue
        examples.append(_parse_svmlight_line(line, line_no, lmap))
    logger.debug("parsed %d svmlight examples", len(examples))
    return examples


def serialize_svmlight(examples: Iterable[Example]) -> bytes:
    """Inverse of `parse_svmlight` under the default label map (exact float round-trip)."""
    lines = []
    for ex in examples:
        if ex.label is None:
            raise MissingLabel("svmlight output needs a label on every example")
        parts = ["+1" if ex.label == 1 else "-1"]
        parts.extend(f"{idx}:{val!r}" for idx, val in ex.features.items())
        lines.append(" ".join(parts))
    return ("\n".join(lines) + "\n").encode("utf-8") if lines else b""


def parse_csv(
    stream: IO[bytes] | bytes,
    label_map: Mapping[str, int] | None = None,
    header: bool | None = None,
) -> list[Example]:
    """
    Parse dense CSV where the last column is the label.

    Column k (0-based) becomes feature index k+1; zero entries are left out of the sparse
    map since a missing feature reads as 0 anyway. With `header=None` the first row is
    treated as a header when its label cell is not in the label map.
    """
    lmap = DEFAULT_LABEL_MAP if label_map is None else label_map
    raw = stream if isinstance(stream, bytes) else stream.read()
    reader = csv.reader(io.StringIO(raw.decode("utf-8")))
    examples: list[Example] = []
    for line_no, row in enumerate(reader, start=1):
        if not row or all(not cell.strip() for cell in row):
            continue
        label_token = row[-1].strip()
        if line_no == 1 and (header or (header is None and label_token not in lmap)):
            continue
        label = _map_label(label_token, lmap, line_no)
        features: dict[int, float] = {}
        for k, cell in enumerate(row[:-1], start=1):
            try:
                val = float(cell)
            except ValueError:
                raise MalformedLine(line_no, f"column {k} is not numeric: {cell!r}") from None
            if not math.isfinite(val):
                raise MalformedLine(line_no, f"column {k} is not finite")
            if val != 0.0:
                features[k] = val
        examples.append(Example(features=features, label=label))
    return examples


def load_examples(
    path: str | Path,
    fmt: Literal["svmlight", "csv"] = "svmlight",
    label_map: Mapping[str, int] | None = None,
) -> list[Example]:
    """Read a dataset file in the given format."""
    data = Path(path).read_bytes()
    examples = parse_csv(data, label_map) if fmt == "csv" else parse_svmlight(data, label_map)
    logger.info("loaded %d examples from %s", len(examples), path)
    return examples


def parse_label_map(text: str) -> dict[str, int]:
    """
    Parse a CLI label map such as ``"1=+1,2=-1"``.

    Values must be ``+1``/``1`` or ``-1``.
    """
    out: dict[str, int] = {}
    for item in filter(None, (s.strip() for s in text.split(","))):
        token, sep, value = item.partition("=")
        if not sep or value.strip() not in ("+1", "1", "-1"):
            raise ValueError(f"bad label-map entry {item!r}; expected <token>=+1 or <token>=-1")
        out[token.strip()] = -1 if value.strip() == "-1" else 1
    if not out:
        raise ValueError("label map is empty")
    return out


# =======================
# Splits and matrices
# =======================

def make_split(examples: Sequence[Example], m: int, seed: int) -> DatasetSplit:
    """
    Draw `m` labeled examples uniformly without replacement; the rest become unlabeled.

    Both parts keep the input order, so each is a subsequence of `examples`.
    """
    n = len(examples)
    if m <= 0 or m > n:
        raise InvalidBudget(f"labeled budget must be in 1..{n}, got {m}")
    if m == n:
        raise EmptyUnlabeled("the labeled budget uses every example; nothing left to predict on")
    if any(ex.label is None for ex in examples):
        raise MissingLabel("make_split needs a fully labeled pool")

    rng = np.random.default_rng(seed)
    chosen = np.zeros(n, dtype=bool)
    chosen[rng.choice(n, size=m, replace=False)] = True
    labeled = tuple(ex for ex, c in zip(examples, chosen) if c)
    unlabeled = tuple(ex for ex, c in zip(examples, chosen) if not c)
    return DatasetSplit(labeled=labeled, unlabeled=unlabeled, seed=seed)


def num_features(examples: Iterable[Example]) -> int:
    """Largest feature index present (0 for an all-empty set)."""
    return max((max(ex.features, default=0) for ex in examples), default=0)


def to_csr(examples: Sequence[Example], n_features: int) -> sparse.csr_matrix:
    """
    Stack examples into an (len, n_features) CSR matrix.

    Feature index k goes to column k-1; indices beyond `n_features` are dropped (a forest
    trained on `n_features` columns never routes on them).
    """
    indptr = [0]
    indices: list[int] = []
    data: list[float] = []
    for ex in examples:
        for idx, val in ex.features.items():
            if idx <= n_features:
                indices.append(idx - 1)
                data.append(val)
        indptr.append(len(indices))
    return sparse.csr_matrix(
        (np.asarray(data, dtype=np.float64), np.asarray(indices, dtype=np.int64), indptr),
        shape=(len(examples), n_features),
    )


def labels_of(examples: Sequence[Example]) -> np.ndarray:
    """Labels as a float array; raises `MissingLabel` if any example is unlabeled."""
    if any(ex.label is None for ex in examples):
        raise MissingLabel("every example needs a label here")
    return np.asarray([ex.label for ex in examples], dtype=np.float64)


def known_labels(examples: Sequence[Example]) -> np.ndarray | None:
    """Labels if every example carries one, else None."""
    if not examples or any(ex.label is None for ex in examples):
        return None
    return labels_of(examples)
