"""Nerve graph serialization (JSON, GraphML, DOT) and static SVG rendering."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape, quoteattr

import networkx as nx
import numpy as np

from .mapper import ClusterNode, NerveGraph, color_by_feature

JSON_FORMAT = "channeltopo-nerve"
JSON_VERSION = 1

RED = (255, 0, 0)  # channel absent
BLUE = (0, 0, 255)  # channel present

GRAPHML_NS = "http://graphml.graphdrawing.org/xmlns"
GRAPHML_XSD = "http://graphml.graphdrawing.org/xmlns/1.0/graphml.xsd"


# -- JSON -------------------------------------------------------------------------------

def graph_to_dict(graph: NerveGraph) -> dict:
    return {
        "format": JSON_FORMAT,
        "version": JSON_VERSION,
        "channels": list(graph.channels),
        "metadata": dict(graph.metadata),
        "nodes": [
            {
                "id": n.id,
                "bin_id": n.bin_id,
                "member_ids": list(n.member_ids),
                "size": n.size,
                "feature_means": dict(n.feature_means),
                "star_median": n.star_median,
            }
            for n in graph.nodes
        ],
        "edges": [list(e) for e in graph.edges],
    }


def graph_from_dict(data: dict) -> NerveGraph:
    if data.get("format") != JSON_FORMAT:
        raise ValueError("not a nerve graph document")
    nodes = tuple(
        ClusterNode(
            id=int(n["id"]),
            bin_id=int(n["bin_id"]),
            member_ids=tuple(n["member_ids"]),
            size=int(n["size"]),
            feature_means={k: float(v) for k, v in n["feature_means"].items()},
            star_median=float(n["star_median"]),
        )
        for n in data["nodes"]
    )
    edges = tuple((int(a), int(b), int(c)) for a, b, c in data["edges"])
    return NerveGraph(nodes, edges, tuple(data.get("channels", ())), dict(data.get("metadata", {})))


def export_json(graph: NerveGraph, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(graph_to_dict(graph), fh, indent=1, ensure_ascii=False)
        fh.write("\n")


def import_json(path: str | Path) -> NerveGraph:
    with open(path, encoding="utf-8") as fh:
        return graph_from_dict(json.load(fh))


# -- GraphML / DOT --------------------------------------------------------------------

def _node_colors(graph: NerveGraph, channels: Sequence[str]) -> dict[str, list[float]]:
    return {ch: color_by_feature(graph, ch) for ch in channels}


def _fmt(x: float) -> str:
    return repr(float(x))


def graphml_string(graph: NerveGraph, color_channels: Sequence[str] | None = None) -> str:
    channels = list(graph.channels if color_channels is None else color_channels)
    colors = _node_colors(graph, channels)
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<graphml xmlns="{GRAPHML_NS}" xmlns:xsi="http://www.w3.org/2001/XMLSchema-instance" '
        f'xsi:schemaLocation="{GRAPHML_NS} {GRAPHML_XSD}">',
        '  <key id="size" for="node" attr.name="size" attr.type="int"/>',
        '  <key id="bin" for="node" attr.name="bin" attr.type="int"/>',
        '  <key id="star_median" for="node" attr.name="star_median" attr.type="double"/>',
    ]
    for i, ch in enumerate(channels):
        out.append(f'  <key id="c{i}" for="node" attr.name={quoteattr("color:" + ch)} attr.type="double"/>')
    out.append('  <key id="shared_count" for="edge" attr.name="shared_count" attr.type="int"/>')
    out.append('  <graph id="nerve" edgedefault="undirected">')
    for k, n in enumerate(graph.nodes):
        out.append(f'    <node id="n{n.id}">')
        out.append(f'      <data key="size">{n.size}</data>')
        out.append(f'      <data key="bin">{n.bin_id}</data>')
        out.append(f'      <data key="star_median">{_fmt(n.star_median)}</data>')
        for i, ch in enumerate(channels):
            out.append(f'      <data key="c{i}">{_fmt(colors[ch][k])}</data>')
        out.append("    </node>")
    for j, (a, b, c) in enumerate(graph.edges):
        out.append(f'    <edge id="e{j}" source="n{a}" target="n{b}">')
        out.append(f'      <data key="shared_count">{c}</data>')
        out.append("    </edge>")
    out.append("  </graph>")
    out.append("</graphml>")
    return "\n".join(out) + "\n"


def dot_string(graph: NerveGraph, color_channels: Sequence[str] | None = None) -> str:
    channels = list(graph.channels if color_channels is None else color_channels)
    colors = _node_colors(graph, channels)
    fill = channels[0] if channels else None
    out = ["graph nerve {", '  node [shape=circle, style=filled, label=""];']
    for k, n in enumerate(graph.nodes):
        attrs = [f"size={n.size}", f"bin={n.bin_id}", f'star_median="{_fmt(n.star_median)}"']
        for ch in channels:
            attrs.append(f'"color:{_dot_escape(ch)}"="{_fmt(colors[ch][k])}"')
        if fill is not None:
            attrs.append(f'fillcolor="{ramp_hex(colors[fill][k])}"')
        out.append(f"  n{n.id} [{', '.join(attrs)}];")
    for a, b, c in graph.edges:
        out.append(f"  n{a} -- n{b} [shared_count={c}];")
    out.append("}")
    return "\n".join(out) + "\n"


def _dot_escape(text: str) -> str:
    return text.replace("\\", "\\\\").replace('"', '\\"')


def export_graph(graph: NerveGraph, fmt: str, path: str | Path, color_channels: Sequence[str] | None = None) -> Path:
    """Write ``graph`` as ``json``, ``graphml`` or ``dot``."""
    path = Path(path)
    fmt = fmt.lower()
    if fmt == "json":
        export_json(graph, path)
    elif fmt == "graphml":
        path.write_text(graphml_string(graph, color_channels), encoding="utf-8")
    elif fmt == "dot":
        path.write_text(dot_string(graph, color_channels), encoding="utf-8")
    else:
        raise ValueError(f"unknown graph format {fmt!r}")
    return path


# -- colour ramp ------------------------------------------------------------------------

_M_RGB2XYZ = np.array(
    [[0.4124564, 0.3575761, 0.1804375],
     [0.2126729, 0.7151522, 0.0721750],
     [0.0193339, 0.1191920, 0.9503041]]
)
_M_XYZ2RGB = np.linalg.inv(_M_RGB2XYZ)
_WHITE = _M_RGB2XYZ @ np.ones(3)


def _srgb_to_linear(c):
    c = np.asarray(c, dtype=float) / 255.0
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def _linear_to_srgb(c):
    c = np.clip(c, 0.0, 1.0)
    return np.where(c <= 0.0031308, 12.92 * c, 1.055 * c ** (1 / 2.4) - 0.055) * 255.0


def _lab_f(t):
    d = 6 / 29
    return np.where(t > d**3, np.cbrt(t), t / (3 * d * d) + 4 / 29)


def _lab_finv(t):
    d = 6 / 29
    return np.where(t > d, t**3, 3 * d * d * (t - 4 / 29))


def rgb_to_lab(rgb) -> np.ndarray:
    xyz = _M_RGB2XYZ @ _srgb_to_linear(rgb) / _WHITE
    fx, fy, fz = _lab_f(xyz)
    return np.array([116 * fy - 16, 500 * (fx - fy), 200 * (fy - fz)])


def lab_to_rgb(lab) -> np.ndarray:
    L, a, b = lab
    fy = (L + 16) / 116
    xyz = _lab_finv(np.array([fy + a / 500, fy, fy - b / 200])) * _WHITE
    return _linear_to_srgb(_M_XYZ2RGB @ xyz)


_RED_LAB = rgb_to_lab(RED)
_BLUE_LAB = rgb_to_lab(BLUE)
RAMP_DESCRIPTION = "linear interpolation in CIELAB (D65) from #ff0000 (0, channel absent) to #0000ff (1, channel present)"


def ramp_rgb(t: float) -> tuple[int, int, int]:
    t = min(1.0, max(0.0, float(t)))
    rgb = lab_to_rgb((1 - t) * _RED_LAB + t * _BLUE_LAB)
    return tuple(int(round(v)) for v in rgb)  # type: ignore[return-value]


def ramp_hex(t: float) -> str:
    return "#{:02x}{:02x}{:02x}".format(*ramp_rgb(t))


# -- SVG ---------------------------------------------------------------------------------

@dataclass(frozen=True)
class RenderSpec:
    color_channel: str
    layout: str = "force"  # "force" or "bingrid"
    node_scale: float = 1.0
    seed: int = 0
    width: int = 800
    height: int = 800
    iterations: int = 100


def _force_layout(graph: NerveGraph, spec: RenderSpec) -> np.ndarray:
    G = nx.Graph()
    G.add_nodes_from(n.id for n in graph.nodes)
    G.add_edges_from((a, b) for a, b, _ in graph.edges)
    pos = nx.spring_layout(G, seed=spec.seed, iterations=spec.iterations)
    return np.array([pos[n.id] for n in graph.nodes]).reshape(-1, 2)


def _bingrid_layout(graph: NerveGraph, spec: RenderSpec) -> np.ndarray:
    shape = list(graph.metadata.get("bin_shape") or [])
    if not shape:
        side = max(1, int(math.ceil(math.sqrt(max((n.bin_id for n in graph.nodes), default=0) + 1))))
        shape = [side, side]
    cols = shape[-1]
    rng = np.random.default_rng(spec.seed)
    xy = np.array([[n.bin_id % cols, n.bin_id // cols] for n in graph.nodes], dtype=float).reshape(-1, 2)
    return xy + rng.uniform(-0.3, 0.3, size=xy.shape)


def layout_positions(graph: NerveGraph, spec: RenderSpec) -> np.ndarray:
    if spec.layout == "force":
        return _force_layout(graph, spec)
    if spec.layout == "bingrid":
        return _bingrid_layout(graph, spec)
    raise ValueError(f"unknown layout {spec.layout!r}")


def svg_string(graph: NerveGraph, spec: RenderSpec) -> str:
    if spec.color_channel not in graph.channels:
        raise ValueError(f"channel {spec.color_channel!r} has no node statistics")
    colors = color_by_feature(graph, spec.color_channel)
    w, h, margin, legend_h = spec.width, spec.height, 40, 60
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
        "  <metadata>" + escape(json.dumps({
            "color_channel": spec.color_channel,
            "color_ramp": RAMP_DESCRIPTION,
            "layout": spec.layout,
            "seed": spec.seed,
            "nodes": len(graph.nodes),
            "edges": len(graph.edges),
        }, sort_keys=True)) + "</metadata>",
        f'  <rect x="0" y="0" width="{w}" height="{h}" fill="#ffffff"/>',
    ]
    # legend
    out.append('  <defs><linearGradient id="ramp" x1="0" x2="1" y1="0" y2="0">')
    for t in np.linspace(0, 1, 11):
        out.append(f'    <stop offset="{t:.1f}" stop-color="{ramp_hex(t)}"/>')
    out.append("  </linearGradient></defs>")
    out.append('  <g id="legend" font-family="sans-serif" font-size="12">')
    out.append(f'    <text x="{margin}" y="20">{escape(spec.color_channel)}</text>')
    out.append(f'    <rect x="{margin}" y="28" width="200" height="12" fill="url(#ramp)"/>')
    out.append(f'    <text x="{margin}" y="54">absent (0)</text>')
    out.append(f'    <text x="{margin + 200}" y="54" text-anchor="end">present (1)</text>')
    out.append("  </g>")

    if graph.nodes:
        pos = layout_positions(graph, spec)
        lo, hi = pos.min(axis=0), pos.max(axis=0)
        span = np.where(hi - lo > 0, hi - lo, 1.0)
        box = np.array([w - 2 * margin, h - 2 * margin - legend_h])
        xy = (pos - lo) / span * box + np.array([margin, margin + legend_h])
        xy[:, 0] = np.where(hi[0] - lo[0] > 0, xy[:, 0], w / 2)
        xy[:, 1] = np.where(hi[1] - lo[1] > 0, xy[:, 1], (h + legend_h) / 2)
        max_size = max(n.size for n in graph.nodes)
        radius = [spec.node_scale * 14.0 * math.sqrt(n.size / max_size) + 1.0 for n in graph.nodes]
        out.append('  <g id="edges" stroke="#999999" stroke-width="1">')
        for a, b, c in graph.edges:
            out.append(
                f'    <line x1="{xy[a, 0]:.2f}" y1="{xy[a, 1]:.2f}" x2="{xy[b, 0]:.2f}" y2="{xy[b, 1]:.2f}"'
                f' data-shared="{c}"/>'
            )
        out.append("  </g>")
        out.append('  <g id="nodes" stroke="#333333" stroke-width="0.5">')
        for k, n in enumerate(graph.nodes):
            out.append(
                f'    <circle id="node-{n.id}" cx="{xy[k, 0]:.2f}" cy="{xy[k, 1]:.2f}" r="{radius[k]:.2f}"'
                f' fill="{ramp_hex(colors[k])}" data-size="{n.size}" data-value="{colors[k]:.4f}"/>'
            )
        out.append("  </g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_svg(graph: NerveGraph, spec: RenderSpec, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(svg_string(graph, spec), encoding="utf-8")
    return path
