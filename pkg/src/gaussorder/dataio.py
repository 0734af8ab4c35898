"""File formats: edge lists, labeled pairs, graded pairs, synset maps,
checkpoints, and flat key=value config files.

All tabular inputs are UTF-8 TSV; blank lines and lines starting with '#'
are skipped; any malformed line raises ``ParseError`` with its line number.

Checkpoints are plain text.  Line one is the header::

    DOE1 <n> <d> <kind> <gamma> <seed>

followed by one line per node: the node name, d mean coordinates, then d
log-variances, written with full round-trip precision so that
load(save(x)) reproduces parameters bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .densities import DivergenceKind
from .errors import CheckpointError, DataError, ParseError
from .training import EmbeddingTable

CHECKPOINT_MAGIC = "DOE1"


def _data_lines(path):
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            yield line_no, line


def load_edges(path) -> list[tuple[str, str]]:
    """Read (child, parent) pairs from a two-column TSV, in file order."""
    edges = []
    for line_no, line in _data_lines(path):
        fields = line.split("\t")
        if len(fields) != 2:
            raise ParseError(path, line_no, f"expected 2 tab-separated fields, got {len(fields)}")
        child, parent = (f.strip() for f in fields)
        if not child or not parent:
            raise ParseError(path, line_no, "empty node name")
        edges.append((child, parent))
    if not edges:
        raise DataError(f"{path}: no edges found")
    return edges


def load_labeled_pairs(path) -> list[tuple[str, str, bool]]:
    """Read (u, v, label) rows from a three-column TSV with labels 0 or 1."""
    pairs = []
    for line_no, line in _data_lines(path):
        fields = line.split("\t")
        if len(fields) != 3:
            raise ParseError(path, line_no, f"expected 3 tab-separated fields, got {len(fields)}")
        u, v, label = (f.strip() for f in fields)
        if not u or not v:
            raise ParseError(path, line_no, "empty node name")
        if label not in ("0", "1"):
            raise ParseError(path, line_no, f"label must be 0 or 1, got {label!r}")
        pairs.append((u, v, label == "1"))
    if not pairs:
        raise DataError(f"{path}: no labeled pairs found")
    return pairs


def load_graded(path) -> list[tuple[str, str, float]]:
    """Read (word1, word2, gold score) rows."""
    rows = []
    for line_no, line in _data_lines(path):
        fields = line.split("\t")
        if len(fields) != 3:
            raise ParseError(path, line_no, f"expected 3 tab-separated fields, got {len(fields)}")
        w1, w2, score = (f.strip() for f in fields)
        try:
            gold = float(score)
        except ValueError:
            raise ParseError(path, line_no, f"score {score!r} is not a number") from None
        if not math.isfinite(gold):
            raise ParseError(path, line_no, f"score {score!r} is not finite")
        rows.append((w1, w2, gold))
    if not rows:
        raise DataError(f"{path}: no graded pairs found")
    return rows


def load_synset_map(path) -> dict[str, list[str]]:
    """Read word -> comma-separated synset names; an empty list is allowed."""
    mapping: dict[str, list[str]] = {}
    for line_no, line in _data_lines(path):
        fields = line.split("\t")
        if len(fields) != 2:
            raise ParseError(path, line_no, f"expected 2 tab-separated fields, got {len(fields)}")
        word, synsets = fields[0].strip(), fields[1].strip()
        if not word:
            raise ParseError(path, line_no, "empty word")
        mapping[word] = [s for s in (t.strip() for t in synsets.split(",")) if s]
    return mapping


@dataclass(frozen=True)
class Checkpoint:
    table: EmbeddingTable
    names: list[str]
    kind: DivergenceKind
    gamma: float
    seed: int

    def name_to_row(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.names)}


def save_checkpoint(
    table: EmbeddingTable,
    names: list[str],
    kind: DivergenceKind,
    gamma: float,
    seed: int,
    path,
) -> None:
    if len(names) != table.n:
        raise ValueError(f"{len(names)} names for {table.n} rows")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{CHECKPOINT_MAGIC} {table.n} {table.d} {kind} {float(gamma)!r} {int(seed)}\n")
        for i, name in enumerate(names):
            mean = " ".join(repr(float(x)) for x in table.means[i])
            log_var = " ".join(repr(float(x)) for x in table.log_vars[i])
            fh.write(f"{name} {mean} {log_var}\n")


def load_checkpoint(path) -> Checkpoint:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        tokens = header.split(" ")
        if len(tokens) != 6 or tokens[0] != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: bad header {header!r}")
        try:
            n, d = int(tokens[1]), int(tokens[2])
            kind = DivergenceKind.parse(tokens[3])
            gamma = float(tokens[4])
            seed = int(tokens[5])
        except ValueError as exc:
            raise CheckpointError(f"{path}: bad header {header!r}: {exc}") from None
        if n < 0 or d < 1:
            raise CheckpointError(f"{path}: bad header counts n={n} d={d}")

        names: list[str] = []
        means = np.empty((n, d))
        log_vars = np.empty((n, d))
        seen: set[str] = set()
        for i in range(n):
            line = fh.readline()
            if not line:
                raise CheckpointError(f"{path}: expected {n} records, found {i}")
            fields = line.rstrip("\n").split(" ")
            if len(fields) != 1 + 2 * d:
                raise CheckpointError(
                    f"{path}: record {i} has {len(fields)} fields, expected {1 + 2 * d}"
                )
            name = fields[0]
            if name in seen:
                raise CheckpointError(f"{path}: duplicate node name {name!r}")
            seen.add(name)
            try:
                values = [float(x) for x in fields[1:]]
            except ValueError as exc:
                raise CheckpointError(f"{path}: record {i}: {exc}") from None
            if not all(math.isfinite(x) for x in values):
                raise CheckpointError(f"{path}: record {i} contains a non-finite value")
            names.append(name)
            means[i] = values[:d]
            log_vars[i] = values[d:]
        if fh.readline():
            raise CheckpointError(f"{path}: trailing data after {n} records")
    return Checkpoint(EmbeddingTable(means, log_vars), names, kind, gamma, seed)


def load_config(path) -> dict[str, str]:
    """Flat ``key = value`` file; '#' starts a comment, blank lines ignored."""
    out: dict[str, str] = {}
    for line_no, line in _data_lines(path):
        key, sep, value = line.partition("=")
        if not sep:
            raise ParseError(path, line_no, "expected 'key = value'")
        key = key.strip()
        value = value.split("#", 1)[0].strip()
        if not key:
            raise ParseError(path, line_no, "empty key")
        out[key] = value
    return out


def write_tsv(path, rows, header: list[str] | None = None) -> None:
    """Write rows of stringifiable cells as TSV; ``path`` '-' means stdout."""
    import sys

    def emit(fh):
        if header:
            fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(str(c) for c in row) + "\n")

    if path == "-":
        emit(sys.stdout)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            emit(fh)


def resolve_pairs_to_ids(
    pairs: list[tuple[str, str, bool]], name_to_row: dict[str, int], what: str
):
    """Map named labeled pairs onto table rows; unknown names raise DataError."""
    resolved = []
    for u, v, label in pairs:
        if u not in name_to_row:
            raise DataError(f"{what}: unknown node {u!r}")
        if v not in name_to_row:
            raise DataError(f"{what}: unknown node {v!r}")
        resolved.append((name_to_row[u], name_to_row[v], label))
    return resolved
