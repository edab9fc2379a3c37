"""Cluster ranking, dominant channels, evolution and popularity reports."""

from __future__ import annotations

import csv
import enum
import io
import logging
import statistics
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .knowledge import ChannelRegistry, SeciDimension, registry_default
from .mapper import NerveGraph
from .normalize import FeatureMatrix

log = logging.getLogger(__name__)

THETA_DOMINANT = 0.5
THETA_STRONG = 0.8
DEFAULT_COMPONENTS = 3
FALLBACK_SHARE = 0.9


class DominanceLevel(enum.IntEnum):
    ABSENT = 0
    DOMINANT = 1
    STRONGLY_DOMINANT = 2

    @property
    def symbol(self) -> str:
        return {0: "-", 1: "✓", 2: "✓✓"}[self.value]

    @property
    def present(self) -> bool:
        return self is not DominanceLevel.ABSENT


def classify_mean(mean: float, theta1: float = THETA_DOMINANT, theta2: float = THETA_STRONG) -> DominanceLevel:
    if mean >= theta2:
        return DominanceLevel.STRONGLY_DOMINANT
    if mean >= theta1:
        return DominanceLevel.DOMINANT
    return DominanceLevel.ABSENT


def _check_thresholds(theta1: float, theta2: float) -> None:
    if not theta2 > theta1 > 0:
        raise ValueError(f"need theta2 > theta1 > 0, got {theta1}, {theta2}")


@dataclass(frozen=True)
class ClusterComponent:
    rank: int
    node_ids: tuple[int, ...]
    point_ids: tuple[str, ...]  # distinct, sorted
    total_points: int
    star_median: float


def _median(values) -> float:
    values = list(values)
    return float(statistics.median(values)) if values else float("nan")


def rank_components(graph: NerveGraph, stars: Mapping[str, int] | None = None) -> list[ClusterComponent]:
    """Connected components ranked by distinct point count.

    Ties go to the component with the smaller smallest point id.
    """
    n = len(graph.nodes)
    if n == 0:
        return []
    if graph.edges:
        a, b, _ = np.array(graph.edges, dtype=np.int64).T
    else:
        a = b = np.array([], dtype=np.int64)
    adj = coo_matrix((np.ones(len(a)), (a, b)), shape=(n, n))
    _, labels = connected_components(adj, directed=False)
    groups: dict[int, list[int]] = {}
    for node_id, lab in enumerate(labels):
        groups.setdefault(int(lab), []).append(node_id)
    comps = []
    for node_ids in groups.values():
        points = sorted({p for nid in node_ids for p in graph.nodes[nid].member_ids})
        comps.append((node_ids, points))
    comps.sort(key=lambda c: (-len(c[1]), c[1][0]))
    return [
        ClusterComponent(
            rank=r,
            node_ids=tuple(node_ids),
            point_ids=tuple(points),
            total_points=len(points),
            star_median=_median(stars[p] for p in points) if stars is not None else float("nan"),
        )
        for r, (node_ids, points) in enumerate(comps, 1)
    ]


def channel_means(point_ids: Sequence[str], matrix: FeatureMatrix) -> dict[str, float]:
    if not point_ids:
        raise ValueError("empty component")
    rows = matrix.rows_for(point_ids)
    return {ch: float(v) for ch, v in zip(matrix.col_index, rows.mean(axis=0))}


def dominant_features(
    comp: ClusterComponent | Sequence[str],
    matrix: FeatureMatrix,
    theta1: float = THETA_DOMINANT,
    theta2: float = THETA_STRONG,
) -> dict[str, DominanceLevel]:
    """Dominance level per channel from the mean over the component's points."""
    _check_thresholds(theta1, theta2)
    points = comp.point_ids if isinstance(comp, ClusterComponent) else tuple(comp)
    return {ch: classify_mean(m, theta1, theta2) for ch, m in channel_means(points, matrix).items()}


# -- layout helpers -------------------------------------------------------------------

def _dimension_of(channel: str, registry: ChannelRegistry) -> str:
    try:
        return registry.lookup(channel).dimension.value
    except KeyError:
        return ""


def _text_table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
    fmt = lambda r: "  ".join(str(x).ljust(w) for x, w in zip(r, widths)).rstrip()
    lines = [fmt(header), fmt(["-" * w for w in widths])]
    lines += [fmt(r) for r in rows]
    return "\n".join(lines) + "\n"


def _csv(header: Sequence[str], rows: Sequence[Sequence[object]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _ordered_by_dimension(channels: Sequence[str], registry: ChannelRegistry) -> list[str]:
    # Externalization columns first, then Combination, otherwise stable
    order = {SeciDimension.EXTERNALIZATION.value: 0, SeciDimension.COMBINATION.value: 1}
    return sorted(channels, key=lambda c: order.get(_dimension_of(c, registry), 2))


# -- evolution ------------------------------------------------------------------------

@dataclass(frozen=True)
class EvolutionRow:
    period: int
    rank: int
    nodes: int
    points: int
    levels: Mapping[str, DominanceLevel]


@dataclass(frozen=True)
class EvolutionReport:
    channels: tuple[str, ...]
    rows: tuple[EvolutionRow, ...]
    notes: tuple[str, ...] = ()

    @property
    def periods(self) -> list[int]:
        return sorted({r.period for r in self.rows})

    def row(self, period: int, rank: int) -> EvolutionRow:
        for r in self.rows:
            if r.period == period and r.rank == rank:
                return r
        raise KeyError((period, rank))

    def render_text(self, registry: ChannelRegistry | None = None) -> str:
        registry = registry or registry_default()
        cols = _ordered_by_dimension(self.channels, registry)
        dims = [_dimension_of(c, registry)[:3] for c in cols]
        header = ["Period", "Cluster", "#Nodes", "#Points"] + [f"{c} [{d}]" for c, d in zip(cols, dims)]
        rows = []
        last = None
        for r in self.rows:
            period = str(r.period) if r.period != last else ""
            last = r.period
            rows.append([period, str(r.rank), f"{r.nodes:,}", f"{r.points:,}"] + [r.levels[c].symbol for c in cols])
        text = "Dominant channels per period and cluster\n" + _text_table(header, rows)
        for note in self.notes:
            text += f"note: {note}\n"
        return text

    def render_csv(self) -> str:
        header = ["period", "cluster", "nodes", "points", *self.channels]
        rows = [
            [r.period, r.rank, r.nodes, r.points, *(r.levels[c].symbol for c in self.channels)]
            for r in self.rows
        ]
        return _csv(header, rows)


def evolution_report(
    slices: Mapping[int, tuple[NerveGraph, FeatureMatrix]],
    k: int = DEFAULT_COMPONENTS,
    theta1: float = THETA_DOMINANT,
    theta2: float = THETA_STRONG,
) -> EvolutionReport:
    """Top-``k`` components per period with their dominant channels."""
    if k < 1:
        raise ValueError("k must be >= 1")
    _check_thresholds(theta1, theta2)
    rows = []
    notes = []
    channels: tuple[str, ...] = ()
    for period in sorted(slices):
        graph, matrix = slices[period]
        channels = channels or tuple(matrix.col_index)
        comps = rank_components(graph)
        if len(comps) < k:
            notes.append(f"{period}: only {len(comps)} component(s)")
        for comp in comps[:k]:
            rows.append(
                EvolutionRow(
                    period=period,
                    rank=comp.rank,
                    nodes=len(comp.node_ids),
                    points=comp.total_points,
                    levels=dominant_features(comp, matrix, theta1, theta2),
                )
            )
    return EvolutionReport(channels, tuple(rows), tuple(notes))


# -- popularity ---------------------------------------------------------------------

@dataclass(frozen=True)
class PopularityGroup:
    label: str
    source: str  # "component" or "neighborhood"
    rank: int  # candidate order by point count
    node_ids: tuple[int, ...]
    point_ids: tuple[str, ...]
    star_median: float
    levels: Mapping[str, DominanceLevel]

    @property
    def total_points(self) -> int:
        return len(self.point_ids)


@dataclass(frozen=True)
class PopularityReport:
    channels: tuple[str, ...]
    groups: tuple[PopularityGroup, ...]
    label: str = ""
    fallback: bool = False
    warning: str | None = None

    def group(self, label: str) -> PopularityGroup:
        for g in self.groups:
            if g.label == label:
                return g
        raise KeyError(label)

    @property
    def popular(self) -> PopularityGroup:
        return self.groups[0]

    def render_text(self, registry: ChannelRegistry | None = None) -> str:
        registry = registry or registry_default()
        title = f"Dominant channels by popularity group{f' ({self.label})' if self.label else ''}\n"
        summary = _text_table(
            ["Group", "Source", "Candidate", "#Nodes", "#Points", "Star median"],
            [
                [g.label, g.source, str(g.rank), str(len(g.node_ids)), f"{g.total_points:,}", f"{g.star_median:g}"]
                for g in self.groups
            ],
        )
        rows = []
        for g in self.groups:
            for i, ch in enumerate(self.channels):
                rows.append([g.label if i == 0 else "", ch, _dimension_of(ch, registry), g.levels[ch].symbol])
        body = _text_table(["Group", "Feature", "Dimension", "Level"], rows)
        text = title + summary + "\n" + body
        if self.fallback:
            text += "note: one component holds most points; groups are node neighbourhoods\n"
        if self.warning:
            text += f"warning: {self.warning}\n"
        return text

    def render_csv(self) -> str:
        header = ["group", "source", "candidate", "nodes", "points", "star_median", *self.channels]
        rows = [
            [g.label, g.source, g.rank, len(g.node_ids), g.total_points, f"{g.star_median:g}",
             *(g.levels[c].symbol for c in self.channels)]
            for g in self.groups
        ]
        return _csv(header, rows)


def _neighbourhood_candidates(graph: NerveGraph, comp: ClusterComponent, k: int):
    """Greedy disjoint neighbourhoods around the largest nodes of ``comp``."""
    members = set(comp.node_ids)
    adj: dict[int, set[int]] = {n: set() for n in members}
    for a, b, _ in graph.edges:
        if a in members:
            adj[a].add(b)
            adj[b].add(a)
    assigned: set[int] = set()
    out = []
    for seed in sorted(members, key=lambda n: (-graph.nodes[n].size, n)):
        if len(out) == k:
            break
        if seed in assigned:
            continue
        group = {seed} | (adj[seed] - assigned)
        assigned |= group
        points = sorted({p for n in group for p in graph.nodes[n].member_ids})
        out.append((tuple(sorted(group)), tuple(points)))
    out.sort(key=lambda c: (-len(c[1]), c[1][0]))
    return out


def popularity_groups(
    graph: NerveGraph,
    matrix: FeatureMatrix,
    stars: Mapping[str, int],
    k: int = DEFAULT_COMPONENTS,
    theta1: float = THETA_DOMINANT,
    theta2: float = THETA_STRONG,
    fallback: bool = True,
    label: str = "",
) -> PopularityReport:
    """Label the candidate group with the highest star median as Popular.

    Candidates are the ``k`` largest nerve components.  When one component
    holds more than 90% of the points (and ``fallback`` is on), candidates are
    the ``k`` largest node neighbourhoods inside it instead.
    """
    _check_thresholds(theta1, theta2)
    comps = rank_components(graph, stars)
    if not comps:
        raise ValueError("graph has no components")
    total = len(graph.point_ids)
    used_fallback = False
    source = "component"
    candidates = [(c.node_ids, c.point_ids) for c in comps[:k]]
    if fallback and comps[0].total_points > FALLBACK_SHARE * total:
        neighbourhoods = _neighbourhood_candidates(graph, comps[0], k)
        if len(neighbourhoods) >= 2:
            candidates = neighbourhoods
            used_fallback = True
            source = "neighborhood"

    scored = []
    for rank, (node_ids, points) in enumerate(candidates, 1):
        scored.append((rank, node_ids, points, _median(stars[p] for p in points)))
    # highest median first; equal medians keep candidate order
    scored.sort(key=lambda s: (-s[3], s[0]))
    groups = []
    for i, (rank, node_ids, points, median) in enumerate(scored):
        groups.append(
            PopularityGroup(
                label="Popular" if i == 0 else f"NonPopular{i}",
                source=source,
                rank=rank,
                node_ids=node_ids,
                point_ids=points,
                star_median=median,
                levels=dominant_features(points, matrix, theta1, theta2),
            )
        )
    warning = None
    if len(groups) < 2:
        warning = "fewer than two candidate groups; popularity comparison is not meaningful"
        log.warning("%s%s", f"{label}: " if label else "", warning)
    return PopularityReport(tuple(matrix.col_index), tuple(groups), label, used_fallback, warning)


def render_popularity_table(reports: Sequence[PopularityReport], registry: ChannelRegistry | None = None) -> str:
    """Side-by-side table across ecosystems (one column per report)."""
    registry = registry or registry_default()
    if not reports:
        return ""
    channels = reports[0].channels
    labels: list[str] = []
    for rep in reports:
        for g in rep.groups:
            if g.label not in labels:
                labels.append(g.label)
    header = ["Topology Cluster", "Features", "Dimensions", *(r.label for r in reports)]
    rows = []
    for lab in labels:
        for i, ch in enumerate(channels):
            cells = []
            for rep in reports:
                try:
                    cells.append(rep.group(lab).levels[ch].symbol)
                except KeyError:
                    cells.append("")
            rows.append([lab if i == 0 else "", ch, _dimension_of(ch, registry), *cells])
    return "Dominant channels across ecosystems\n" + _text_table(header, rows)


def render_popularity_csv(reports: Sequence[PopularityReport]) -> str:
    header = ["ecosystem", "group", "channel", "level", "star_median", "points"]
    rows = []
    for rep in reports:
        for g in rep.groups:
            for ch in rep.channels:
                rows.append([rep.label, g.label, ch, g.levels[ch].symbol, f"{g.star_median:g}", g.total_points])
    return _csv(header, rows)


def render_components(
    comps: Sequence[ClusterComponent],
    matrix: FeatureMatrix,
    theta1: float = THETA_DOMINANT,
    theta2: float = THETA_STRONG,
) -> str:
    header = ["rank", "nodes", "points", "star_median", *matrix.col_index]
    rows = []
    for c in comps:
        levels = dominant_features(c, matrix, theta1, theta2)
        rows.append([c.rank, len(c.node_ids), c.total_points, f"{c.star_median:g}",
                     *(levels[ch].symbol for ch in matrix.col_index)])
    return _csv(header, rows)
