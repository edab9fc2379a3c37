"""Raw channel values -> [0, 1] feature matrix.

Count channels are divided by the maximum of the same channel within the
project's ecosystem; flags and texts become 1 when the channel exists and 0
otherwise. Absent values count as non-existence.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .ingest import ProjectTable
from .knowledge import ChannelRegistry, ValueKind


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    values: np.ndarray  # (projects, channels), float64 in [0, 1]
    row_index: tuple[str, ...]
    col_index: tuple[str, ...]
    ecosystem_of_row: tuple[str, ...]
    # (channel, ecosystem) -> maximum raw count, for Count channels only
    maxima: dict[tuple[str, str], int] = field(default_factory=dict)
    provenance: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        self.values.setflags(write=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def column(self, channel: str) -> np.ndarray:
        return self.values[:, self.col_index.index(channel)]

    def rows_for(self, ids: Iterable[str]) -> np.ndarray:
        pos = self.positions()
        return self.values[[pos[i] for i in ids]]

    def positions(self) -> dict[str, int]:
        return {pid: k for k, pid in enumerate(self.row_index)}


def max_per_feature(table: ProjectTable, channel: str, registry: ChannelRegistry) -> dict[str, int]:
    """Per-ecosystem maximum of a Count channel over present values (0 if none)."""
    if registry.lookup(channel).value_kind is not ValueKind.COUNT:
        raise ValueError(f"{channel!r} is not a Count channel")
    maxima: dict[str, int] = {}
    for rec in table.records:
        value = rec.channel_values.get(channel)
        current = maxima.setdefault(rec.ecosystem, 0)
        if value is not None and value > current:
            maxima[rec.ecosystem] = value
    return maxima


def _indicator(value) -> float:
    # Absent (None), Flag(False) and empty text all mean "channel missing"
    return 1.0 if value else 0.0


def normalize_features(
    table: ProjectTable,
    registry: ChannelRegistry,
    channels: Sequence[str],
    reference: ProjectTable | None = None,
) -> FeatureMatrix:
    """Ratio-to-max for Count channels, 0/1 indicators for the rest.

    Maxima come from ``table`` itself, or from ``reference`` (typically the
    unfiltered input) when given; ``reference`` must contain every row of
    ``table`` so that no ratio exceeds 1.
    """
    if reference is not None:
        missing = set(table.ids) - set(reference.ids)
        if missing:
            raise ValueError(f"{len(missing)} project(s) missing from the reference table")
    source = table if reference is None else reference
    descriptors = registry.subset(channels)
    n = len(table.records)
    values = np.zeros((n, len(descriptors)), dtype=np.float64)
    maxima: dict[tuple[str, str], int] = {}
    ecosystems = [r.ecosystem for r in table.records]
    for j, ch in enumerate(descriptors):
        raw = [r.channel_values.get(ch.name) for r in table.records]
        if ch.value_kind is ValueKind.COUNT:
            per_eco = max_per_feature(source, ch.name, registry)
            for eco, m in per_eco.items():
                maxima[(ch.name, eco)] = m
            for k, (v, eco) in enumerate(zip(raw, ecosystems)):
                m = per_eco[eco]
                if v is not None and m > 0:
                    values[k, j] = v / m
        else:
            values[:, j] = [_indicator(v) for v in raw]
    return FeatureMatrix(
        values=values,
        row_index=tuple(r.id for r in table.records),
        col_index=tuple(ch.name for ch in descriptors),
        ecosystem_of_row=tuple(ecosystems),
        maxima=maxima,
        provenance=table.provenance + (f"normalize:maxima-{'after' if reference is None else 'before'}-filter",),
    )


def export_matrix(matrix: FeatureMatrix, path: str | Path, delimiter: str = ",") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        writer.writerow(["id", "ecosystem", *matrix.col_index])
        for pid, eco, row in zip(matrix.row_index, matrix.ecosystem_of_row, matrix.values):
            writer.writerow([pid, eco, *(f"{v:.6f}" for v in row)])
