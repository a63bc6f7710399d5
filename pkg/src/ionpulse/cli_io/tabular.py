"""Tab-separated numeric tables with a ``#``-prefixed metadata block.

Layout::

    # seed: 7
    # config_hash: "3f0c..."
    detuning_rad_per_ns<TAB>p_d_500
    -3.9269908169872414<TAB>0.0123...

Metadata values are JSON encoded; numbers are written with 17 significant
digits so that a write/read cycle reproduces every float exactly.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


@dataclass
class TabularDataset:
    header: list[str]
    rows: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.header = [str(h) for h in self.header]
        rows = np.asarray(self.rows, float)
        if rows.size == 0:
            rows = rows.reshape(0, len(self.header))
        if rows.ndim != 2 or rows.shape[1] != len(self.header):
            raise ValueError("rows must be rectangular with one column per header entry")
        self.rows = rows
        for h in self.header:
            if not h or any(c in h for c in "\t\n#"):
                raise ValueError(f"invalid column name {h!r}")

    def column(self, name: str) -> np.ndarray:
        try:
            return self.rows[:, self.header.index(name)]
        except ValueError:
            raise KeyError(f"no column {name!r}; columns are {self.header}") from None

    @classmethod
    def from_columns(cls, columns: dict[str, Sequence[float]], metadata=None):
        return cls(list(columns), np.column_stack([np.asarray(v, float)
                                                   for v in columns.values()]),
                   dict(metadata or {}))


def _fmt(x: float) -> str:
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return "%.17g" % x


def emit(data: TabularDataset) -> str:
    """Serialise ``data``; metadata keys keep their insertion order."""
    lines = [f"# {k}: {json.dumps(v, sort_keys=True)}" for k, v in data.metadata.items()]
    lines.append("\t".join(data.header))
    lines.extend("\t".join(_fmt(x) for x in row) for row in data.rows.tolist())
    return "\n".join(lines) + "\n"


def ingest(text: str) -> TabularDataset:
    """Parse the output of :func:`emit` (or any file in the same layout)."""
    metadata, body = {}, []
    for n, line in enumerate(text.splitlines(), 1):
        if line.startswith("#"):
            if body:
                raise ValueError(f"line {n}: metadata must precede the header")
            key, sep, value = line[1:].strip().partition(":")
            if not sep:
                raise ValueError(f"line {n}: metadata lines need 'key: value'")
            try:
                metadata[key.strip()] = json.loads(value)
            except json.JSONDecodeError:
                metadata[key.strip()] = value.strip()
        elif line.strip():
            body.append((n, line))
    if not body:
        raise ValueError("no header line")
    header = body[0][1].split("\t")
    rows = []
    for n, line in body[1:]:
        cells = line.split("\t")
        if len(cells) != len(header):
            raise ValueError(f"line {n}: expected {len(header)} columns, got {len(cells)}")
        try:
            rows.append([float(c) for c in cells])
        except ValueError:
            raise ValueError(f"line {n}: non-numeric cell") from None
    return TabularDataset(header, np.array(rows, float).reshape(-1, len(header)), metadata)
