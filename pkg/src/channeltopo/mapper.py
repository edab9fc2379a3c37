"""Mapper nerve construction.

Filter coordinates are covered by overlapping axis-aligned boxes; the points
of every box are clustered with single linkage, and clusters that share a
point are joined by an edge.
"""

from __future__ import annotations

import itertools
import statistics
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial.distance import pdist

DEFAULT_INTERVALS = 10
DEFAULT_OVERLAP = 0.5
DEFAULT_HIST_BINS = 10


@dataclass(frozen=True)
class Bin:
    id: int
    index: tuple[int, ...]  # interval index per axis
    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def contains(self, coords: np.ndarray) -> np.ndarray:
        lo = np.asarray(self.lower)
        hi = np.asarray(self.upper)
        return np.all((coords >= lo) & (coords <= hi), axis=1)


@dataclass(frozen=True)
class Cover:
    dimension: int
    intervals_per_axis: int
    overlap_fraction: float
    bins: tuple[Bin, ...]

    def members(self, coords: np.ndarray) -> list[np.ndarray]:
        """Row indices falling into each bin (closed boxes)."""
        return [np.flatnonzero(b.contains(coords)) for b in self.bins]


def axis_windows(lo: float, hi: float, intervals: int, overlap: float) -> list[tuple[float, float]]:
    """Equal-width windows over [lo, hi] with consecutive windows sharing ``overlap``.

    The width w solves w * (1 - overlap) * (intervals - 1) + w = hi - lo.
    """
    span = hi - lo
    if span <= 0 or intervals == 1:
        return [(lo, hi)]
    width = span / (intervals - (intervals - 1) * overlap)
    stride = width * (1.0 - overlap)
    windows = [(lo + i * stride, lo + i * stride + width) for i in range(intervals)]
    # pin the outer edges so rounding never leaves the extremes uncovered
    windows[0] = (lo, windows[0][1])
    windows[-1] = (windows[-1][0], hi)
    return windows


def build_cover(coords: np.ndarray, intervals: int = DEFAULT_INTERVALS, overlap: float = DEFAULT_OVERLAP) -> Cover:
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim == 1:
        coords = coords[:, None]
    if intervals < 1:
        raise ValueError("intervals must be >= 1")
    if not 0 < overlap < 1:
        raise ValueError("overlap must lie in (0, 1)")
    dim = coords.shape[1]
    if dim not in (1, 2):
        raise ValueError("the cover supports 1-D or 2-D filters")
    if coords.shape[0] == 0:
        raise ValueError("cannot cover an empty point set")
    per_axis = [
        axis_windows(float(coords[:, d].min()), float(coords[:, d].max()), intervals, overlap)
        for d in range(dim)
    ]
    bins = []
    for bid, index in enumerate(itertools.product(*(range(len(w)) for w in per_axis))):
        lower = tuple(per_axis[d][i][0] for d, i in enumerate(index))
        upper = tuple(per_axis[d][i][1] for d, i in enumerate(index))
        bins.append(Bin(bid, tuple(index), lower, upper))
    return Cover(dim, intervals, overlap, tuple(bins))


def gap_threshold(heights: np.ndarray, hist_bins: int = DEFAULT_HIST_BINS,
                  diameter: float | None = None) -> float | None:
    """Left edge of the first empty bin in the histogram of merge heights.

    The histogram spans ``[0, diameter]``, where ``diameter`` is the largest
    in-bin pairwise distance (defaults to the largest height). Measuring gaps
    against the diameter keeps a sparse tail of merge heights from splitting
    off boundary points. ``None`` when the histogram has no gap (everything
    stays one cluster).
    """
    if heights.size == 0:
        return None
    hi = float(heights.max()) if diameter is None else float(diameter)
    if hi <= 0.0:
        return None
    counts, edges = np.histogram(heights, bins=hist_bins, range=(0.0, hi))
    # empty bins below the smallest height are not gaps
    first = int(np.flatnonzero(counts)[0])
    empty = first + np.flatnonzero(counts[first:] == 0)
    if empty.size == 0:
        return None
    return float(edges[empty[0]])


def cluster_bin(points: np.ndarray, hist_bins: int = DEFAULT_HIST_BINS) -> list[np.ndarray]:
    """Single-linkage clusters of ``points`` cut at the histogram gap.

    Returns positional index arrays (into ``points``), each sorted, ordered
    by their smallest index.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if n == 0:
        return []
    if n == 1:
        return [np.array([0])]
    dists = pdist(points)
    Z = linkage(dists, method="single")
    threshold = gap_threshold(Z[:, 2], hist_bins, float(dists.max()))
    if threshold is None:
        return [np.arange(n)]
    # merges strictly below the gap are kept; no height lies inside the gap
    labels = fcluster(Z, t=threshold, criterion="distance")
    groups: dict[int, list[int]] = {}
    for i, lab in enumerate(labels):
        groups.setdefault(int(lab), []).append(i)
    return sorted((np.array(g) for g in groups.values()), key=lambda g: int(g[0]))


@dataclass(frozen=True)
class ClusterNode:
    id: int
    bin_id: int
    member_ids: tuple[str, ...]  # sorted
    size: int
    feature_means: Mapping[str, float]
    star_median: float


@dataclass(frozen=True)
class NerveGraph:
    nodes: tuple[ClusterNode, ...]
    edges: tuple[tuple[int, int, int], ...]  # (a, b, shared_count), a < b
    channels: tuple[str, ...] = ()
    metadata: Mapping[str, object] = field(default_factory=dict)

    def node(self, node_id: int) -> ClusterNode:
        return self.nodes[node_id]

    @property
    def point_ids(self) -> set[str]:
        return {p for n in self.nodes for p in n.member_ids}


def _star_median(values: Sequence[int]) -> float:
    return float(statistics.median(values)) if values else 0.0


def build_nerve(
    cover: Cover,
    clusters: Sequence[Sequence[Sequence[str]]],
    features: np.ndarray | None = None,
    ids: Sequence[str] | None = None,
    channels: Sequence[str] = (),
    stars: Mapping[str, int] | None = None,
    min_node_size: int = 1,
) -> NerveGraph:
    """Assemble the nerve graph from per-bin clusters of point ids.

    ``clusters[b]`` lists the member-id groups found in ``cover.bins[b]``.
    When ``features``/``ids`` are given, nodes carry per-channel means of the
    member rows; ``stars`` supplies the per-node star median.
    """
    if len(clusters) != len(cover.bins):
        raise ValueError("need one cluster list per bin")
    pos = {pid: k for k, pid in enumerate(ids)} if ids is not None else {}
    raw = []
    for b, groups in zip(cover.bins, clusters):
        for g in groups:
            members = tuple(sorted(g))
            if len(members) >= min_node_size and members:
                raw.append((b.id, members))
    raw.sort(key=lambda t: (t[0], t[1][0]))

    nodes = []
    for nid, (bin_id, members) in enumerate(raw):
        means: dict[str, float] = {}
        if features is not None and channels:
            rows = features[[pos[m] for m in members]]
            means = {ch: float(v) for ch, v in zip(channels, rows.mean(axis=0))}
        median = _star_median([stars[m] for m in members]) if stars is not None else 0.0
        nodes.append(ClusterNode(nid, bin_id, members, len(members), means, median))

    by_point: dict[str, list[int]] = {}
    for node in nodes:
        for m in node.member_ids:
            by_point.setdefault(m, []).append(node.id)
    shared: dict[tuple[int, int], int] = {}
    for owners in by_point.values():
        for a, b in itertools.combinations(sorted(owners), 2):
            shared[(a, b)] = shared.get((a, b), 0) + 1
    edges = tuple((a, b, c) for (a, b), c in sorted(shared.items()))
    return NerveGraph(tuple(nodes), edges, tuple(channels))


def color_by_feature(graph: NerveGraph, channel: str) -> list[float]:
    """Per-node colour scalar: 1 (blue) = channel present, 0 (red) = absent."""
    if channel not in graph.channels:
        raise ValueError(f"channel {channel!r} is not among the graph's channels")
    return [float(n.feature_means[channel]) for n in graph.nodes]


def run_mapper(
    filter_coords: np.ndarray,
    features: np.ndarray,
    ids: Sequence[str],
    channels: Sequence[str],
    stars: Mapping[str, int] | None = None,
    intervals: int = DEFAULT_INTERVALS,
    overlap: float = DEFAULT_OVERLAP,
    cluster_space: str = "features",
    hist_bins: int = DEFAULT_HIST_BINS,
    min_node_size: int = 1,
) -> NerveGraph:
    """Cover the filter, cluster each bin, build the nerve.

    ``cluster_space`` picks the metric space for in-bin clustering: the
    normalized ``"features"`` (default) or the ``"filter"`` coordinates.
    """
    filter_coords = np.asarray(filter_coords, dtype=np.float64)
    if filter_coords.ndim == 1:
        filter_coords = filter_coords[:, None]
    if cluster_space not in ("features", "filter"):
        raise ValueError(f"unknown cluster space {cluster_space!r}")
    space = features if cluster_space == "features" else filter_coords
    cover = build_cover(filter_coords, intervals, overlap)
    clusters = []
    for rows in cover.members(filter_coords):
        groups = cluster_bin(space[rows], hist_bins)
        clusters.append([[ids[rows[i]] for i in g] for g in groups])
    graph = build_nerve(cover, clusters, features, ids, channels, stars, min_node_size)
    meta = {
        "intervals": intervals,
        "overlap": overlap,
        "cluster_space": cluster_space,
        "hist_bins": hist_bins,
        "min_node_size": min_node_size,
        "dimension": cover.dimension,
        "bin_shape": [max(b.index[d] for b in cover.bins) + 1 for d in range(cover.dimension)],
    }
    return NerveGraph(graph.nodes, graph.edges, graph.channels, meta)
