"""Stage composition, run directories and manifests for the CLI commands.

Every command writes its outputs into a run directory together with a
``manifest.json`` that records input digests, the full parameter set and the
tool version.  Passing that manifest back as ``--config`` replays the run;
all non-manifest outputs are byte-identical across replays.
"""

from __future__ import annotations

import contextlib
import dataclasses
import datetime as dt
import hashlib
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from . import __version__
from .analyze import (
    ClusterComponent,
    EvolutionReport,
    PopularityReport,
    evolution_report,
    popularity_groups,
    rank_components,
    render_components,
    render_popularity_csv,
    render_popularity_table,
)
from .embed import FilterEmbedding, TsneParams, export_embedding, export_kl_log, pca, tsne
from .export import RenderSpec, export_graph, render_svg
from .ingest import (
    DEFAULT_TOP_N,
    ProjectTable,
    Schema,
    filter_ecosystem,
    load_projects,
    slice_by_year,
    top_n_by_stars,
)
from .knowledge import (
    DEFAULT_ANALYSIS_CHANNELS,
    DEFAULT_POPULARITY_CHANNELS,
    ChannelRegistry,
    load_registry,
    registry_default,
)
from .mapper import NerveGraph, run_mapper
from .normalize import FeatureMatrix, export_matrix, normalize_features

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
GRAPH_FORMATS = ("graphml", "json", "dot", "svg")


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name and the cause."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@contextlib.contextmanager
def stage(name: str) -> Iterator[None]:
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


@dataclass(frozen=True)
class PipelineParams:
    """Every tunable of a run; flags and config keys map onto these fields."""

    channels: tuple[str, ...] = ()  # empty: every registry channel
    report_channels: tuple[str, ...] = ()  # empty: the command's table columns
    top_n: int = DEFAULT_TOP_N
    maxima_scope: str = "selected"  # count maxima over the top-N selection or the whole input
    # t-SNE
    perplexity: float = 30.0
    iterations: int = 1000
    learning_rate: float = 200.0
    exaggeration: float = 12.0
    exaggeration_iters: int = 250
    momentum_early: float = 0.5
    momentum_late: float = 0.8
    momentum_switch: int = 250
    seed: int = 0
    # cover and clustering
    intervals: int = 10
    overlap: float = 0.5
    hist_bins: int = 10
    cluster_space: str = "features"
    min_node_size: int = 1
    # analysis
    theta1: float = 0.5
    theta2: float = 0.8
    components: int = 3
    fallback: bool = True
    # outputs
    formats: tuple[str, ...] = ("graphml", "json", "svg")
    color_channel: str = ""  # empty: first report channel present in the graph
    layout: str = "force"
    node_scale: float = 1.0
    pca_components: int = 2
    # inputs
    schema: str = ""
    registry: str = ""
    delimiter: str = ""
    jobs: int = 1

    def __post_init__(self) -> None:
        for name in ("channels", "report_channels", "formats"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        bad = [f for f in self.formats if f not in GRAPH_FORMATS]
        if bad:
            raise ValueError(f"unknown output format(s) {bad}; choose from {GRAPH_FORMATS}")
        if self.cluster_space not in ("features", "filter"):
            raise ValueError(f"cluster_space must be 'features' or 'filter', got {self.cluster_space!r}")
        if self.maxima_scope not in ("selected", "input"):
            raise ValueError(f"maxima_scope must be 'selected' or 'input', got {self.maxima_scope!r}")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")

    def tsne_params(self, perplexity: float | None = None) -> TsneParams:
        return TsneParams(
            perplexity=self.perplexity if perplexity is None else perplexity,
            iterations=self.iterations,
            learning_rate=self.learning_rate,
            momentum_early=self.momentum_early,
            momentum_late=self.momentum_late,
            momentum_switch=self.momentum_switch,
            exaggeration=self.exaggeration,
            exaggeration_iters=self.exaggeration_iters,
            seed=self.seed,
        )

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(self).items()}

    @classmethod
    def from_dict(cls, data: Mapping[str, object]) -> "PipelineParams":
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ValueError(f"unknown parameter(s): {unknown}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in data.items()})

    def columns(self, command: str) -> tuple[str, ...]:
        """Report columns: explicit ones, else the table layout of ``command``."""
        if self.report_channels:
            return self.report_channels
        return DEFAULT_POPULARITY_CHANNELS if command == "compare" else DEFAULT_ANALYSIS_CHANNELS

    def replace(self, **changes) -> "PipelineParams":
        return dataclasses.replace(self, **changes)


# -- config & manifest files -------------------------------------------------------------

@dataclass
class RunConfig:
    """A parsed ``--config`` file: plain parameters or a previous run's manifest."""

    params: dict
    command: str | None = None
    arguments: dict = field(default_factory=dict)


def read_config(path: str | Path) -> RunConfig:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    if "params" in data:  # a manifest
        return RunConfig(dict(data["params"]), data.get("command"), dict(data.get("arguments", {})))
    return RunConfig(data)


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def run_digest(command: str, arguments: Mapping, input_digests: Sequence[str], params: PipelineParams) -> str:
    payload = {"command": command, "arguments": arguments, "inputs": list(input_digests), "params": params.to_dict()}
    return hashlib.sha256(_canonical_json(payload).encode()).hexdigest()


def make_run_dir(out_root: str | Path, digest: str, run_dir: str | Path | None = None) -> Path:
    if run_dir is not None:
        path = Path(run_dir)
        path.mkdir(parents=True, exist_ok=True)
        return path
    stamp = dt.datetime.now(dt.timezone.utc).strftime("%Y%m%dT%H%M%SZ")
    base = Path(out_root) / f"{stamp}-{digest[:12]}"
    path, k = base, 1
    while path.exists():
        path = base.with_name(f"{base.name}.{k}")
        k += 1
    path.mkdir(parents=True)
    return path


def write_manifest(
    run_dir: Path,
    command: str,
    arguments: Mapping,
    inputs: Sequence[Path],
    params: PipelineParams,
    outputs: Sequence[Path],
    duration: float,
    extra: Mapping | None = None,
) -> Path:
    inputs = list(inputs) + [Path(p) for p in (params.schema, params.registry) if p]
    manifest = {
        "tool": "channeltopo",
        "version": __version__,
        "command": command,
        "arguments": dict(arguments),
        "inputs": [{"path": str(Path(p).resolve()), "sha256": sha256_file(p)} for p in inputs],
        "params": params.to_dict(),
        "outputs": [
            {"path": str(Path(p).relative_to(run_dir)), "sha256": sha256_file(p)} for p in sorted(outputs)
        ],
        "effective": dict(extra or {}),
        "started_utc": dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"),
        "duration_seconds": round(duration, 3),
    }
    path = run_dir / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def verify_manifest(path: str | Path) -> list[str]:
    """Problems with a manifest: missing keys or output digests that no longer match."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        return [f"unreadable manifest: {exc}"]
    problems = [f"missing key {k!r}" for k in ("tool", "version", "command", "inputs", "params", "outputs",
                                               "duration_seconds") if k not in data]
    for entry in data.get("outputs", []):
        out = path.parent / entry["path"]
        if not out.exists():
            problems.append(f"missing output {entry['path']}")
        elif sha256_file(out) != entry["sha256"]:
            problems.append(f"digest mismatch for {entry['path']}")
    try:
        PipelineParams.from_dict(data.get("params", {}))
    except (TypeError, ValueError) as exc:
        problems.append(f"bad params: {exc}")
    return problems


# -- stages ------------------------------------------------------------------------------

def load_registry_for(params: PipelineParams) -> ChannelRegistry:
    with stage("registry"):
        return load_registry(params.registry) if params.registry else registry_default()


def load_input(path: str | Path, params: PipelineParams, registry: ChannelRegistry) -> ProjectTable:
    with stage("ingest"):
        schema = Schema.from_file(params.schema) if params.schema else None
        return load_projects(path, schema, registry, params.delimiter or None)


def effective_perplexity(perplexity: float, n_points: int) -> float:
    """Clamp the perplexity to (n - 1) / 3 so small slices stay embeddable."""
    cap = (n_points - 1) / 3.0
    return min(perplexity, cap)


@dataclass(frozen=True, eq=False)
class Topology:
    table: ProjectTable
    matrix: FeatureMatrix
    embedding: FilterEmbedding
    graph: NerveGraph
    components: tuple[ClusterComponent, ...]
    perplexity: float  # after clamping


def compute_topology(table: ProjectTable, registry: ChannelRegistry, params: PipelineParams) -> Topology:
    """top-N -> normalize -> t-SNE -> cover/cluster/nerve -> components."""
    full = table
    with stage("select"):
        table = top_n_by_stars(table, params.top_n)
        if len(table) < 5:
            raise ValueError(f"need at least 5 projects for an embedding, got {len(table)}")
    with stage("normalize"):
        channels = params.channels or registry.names
        reference = full if params.maxima_scope == "input" else None
        matrix = normalize_features(table, registry, channels, reference)
    with stage("embed"):
        perplexity = effective_perplexity(params.perplexity, len(table))
        if perplexity < params.perplexity:
            log.warning("perplexity clamped from %g to %g for %d points", params.perplexity, perplexity, len(table))
        embedding = tsne(matrix.values, params.tsne_params(perplexity))
    with stage("mapper"):
        graph = run_mapper(
            embedding.coords,
            matrix.values,
            matrix.row_index,
            matrix.col_index,
            table.stars_by_id(),
            intervals=params.intervals,
            overlap=params.overlap,
            cluster_space=params.cluster_space,
            hist_bins=params.hist_bins,
            min_node_size=params.min_node_size,
        )
    with stage("analyze"):
        comps = tuple(rank_components(graph, table.stars_by_id()))
    return Topology(table, matrix, embedding, graph, comps, perplexity)


def _color_channel(params: PipelineParams, graph: NerveGraph, columns: Sequence[str]) -> str:
    if params.color_channel:
        return params.color_channel
    for ch in columns:
        if ch in graph.channels:
            return ch
    return graph.channels[0] if graph.channels else ""


def write_topology(topo: Topology, outdir: Path, params: PipelineParams, command: str = "topology") -> list[Path]:
    """Graph files, embedding, features and the component report for one topology."""
    outdir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    columns = params.columns(command)
    with stage("export"):
        color = _color_channel(params, topo.graph, columns)
        color_channels = [c for c in columns if c in topo.graph.channels]
        for fmt in params.formats:
            if fmt == "svg":
                spec = RenderSpec(color, params.layout, params.node_scale, params.seed)
                written.append(render_svg(topo.graph, spec, outdir / "graph.svg"))
            else:
                written.append(export_graph(topo.graph, fmt, outdir / f"graph.{fmt}", color_channels))
        emb = outdir / "embedding.csv"
        export_embedding(topo.embedding, topo.matrix.row_index, emb)
        kl = outdir / "kl.csv"
        export_kl_log(topo.embedding, kl)
        feats = outdir / "features.csv"
        export_matrix(topo.matrix, feats)
        report = outdir / "components.csv"
        report.write_text(
            render_components(topo.components, topo.matrix, params.theta1, params.theta2), encoding="utf-8"
        )
        written += [emb, kl, feats, report]
    return written


def _summary(topo: Topology) -> dict:
    return {
        "projects": len(topo.table),
        "rejected_rows": topo.table.rejected,
        "perplexity": topo.perplexity,
        "final_kl": round(topo.embedding.final_objective, 10),
        "nodes": len(topo.graph.nodes),
        "edges": len(topo.graph.edges),
        "component_points": [c.total_points for c in topo.components],
    }


# -- commands ----------------------------------------------------------------------------

@dataclass
class RunResult:
    run_dir: Path
    manifest: Path
    outputs: list[Path]
    topologies: dict[str, Topology] = field(default_factory=dict)
    report: EvolutionReport | list[PopularityReport] | None = None


def _start(command: str, arguments: Mapping, inputs: Sequence[Path], params: PipelineParams,
           out_root: str | Path, run_dir: str | Path | None) -> Path:
    with stage("inputs"):
        aux = [Path(p) for p in (params.schema, params.registry) if p]
        digests = [sha256_file(p) for p in [*inputs, *aux]]
    return make_run_dir(out_root, run_digest(command, arguments, digests, params), run_dir)


def _topology_worker(args):
    table, registry, params = args
    return compute_topology(table, registry, params)


def _map_topologies(tables: Mapping[str, ProjectTable], registry: ChannelRegistry,
                    params: PipelineParams) -> dict[str, Topology]:
    keys = list(tables)
    jobs = [(tables[k], registry, params) for k in keys]
    if params.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(params.jobs, len(jobs))) as pool:
            results = list(pool.map(_topology_worker, jobs))
    else:
        results = [_topology_worker(j) for j in jobs]
    return dict(zip(keys, results))


def cmd_topology(input_path: str | Path, params: PipelineParams, out_root: str | Path = "runs",
                 run_dir: str | Path | None = None) -> RunResult:
    t0 = time.perf_counter()
    input_path = Path(input_path)
    arguments = {"inputs": [str(input_path.resolve())]}
    rdir = _start("topology", arguments, [input_path], params, out_root, run_dir)
    registry = load_registry_for(params)
    table = load_input(input_path, params, registry)
    topo = compute_topology(table, registry, params)
    outputs = write_topology(topo, rdir, params)
    manifest = write_manifest(rdir, "topology", arguments, [input_path], params, outputs,
                              time.perf_counter() - t0, {"topology": _summary(topo)})
    return RunResult(rdir, manifest, outputs, {"": topo})


def _split(inputs: Sequence[str], labels: Sequence[str], key_type) -> tuple[dict[str, Path], list[str]]:
    """Resolve ``LABEL=PATH`` inputs, or a single input sliced by ``labels``."""
    pairs: dict[str, Path] = {}
    plain = []
    for item in inputs:
        if "=" in item:
            label, path = item.split("=", 1)
            pairs[str(key_type(label))] = Path(path)
        else:
            plain.append(Path(item))
    if pairs and plain:
        raise ValueError("mix of LABEL=PATH and plain inputs")
    if plain and len(plain) != 1:
        raise ValueError("slicing needs exactly one plain input")
    return pairs, [str(key_type(x)) for x in labels]


def _slice_tables(inputs: Sequence[str], labels: Sequence[str], params: PipelineParams,
                  registry: ChannelRegistry, slicer, key_type, discover) -> tuple[dict[str, ProjectTable], list[Path]]:
    with stage("inputs"):
        pairs, labels = _split(inputs, labels, key_type)
    if pairs:
        tables = {k: load_input(p, params, registry) for k, p in pairs.items()}
        return tables, list(pairs.values())
    path = Path(inputs[0])
    table = load_input(path, params, registry)
    with stage("slice"):
        labels = labels or [str(x) for x in discover(table)]
        tables = {lab: slicer(table, key_type(lab)) for lab in labels}
        for lab, t in tables.items():
            if len(t) == 0:
                raise ValueError(f"slice {lab!r} is empty")
    return tables, [path]


def cmd_evolve(inputs: Sequence[str], params: PipelineParams, years: Sequence[int] = (),
               out_root: str | Path = "runs", run_dir: str | Path | None = None) -> RunResult:
    """One topology per year plus the combined evolution report.

    ``inputs`` holds ``YEAR=PATH`` items, or one path that is sliced by
    ``years`` (every creation year present when ``years`` is empty).
    """
    t0 = time.perf_counter()
    registry = load_registry_for(params)
    tables, paths = _slice_tables(
        inputs, [str(y) for y in years], params, registry, slice_by_year, int,
        lambda t: sorted({r.year for r in t.records}),
    )
    arguments = {"inputs": [_resolve_item(i) for i in inputs], "years": [int(y) for y in years]}
    rdir = _start("evolve", arguments, paths, params, out_root, run_dir)
    topologies = _map_topologies(tables, registry, params)
    outputs: list[Path] = []
    for year, topo in topologies.items():
        outputs += write_topology(topo, rdir / year, params, "evolve")
    with stage("report"):
        report = evolution_report(
            {int(y): (t.graph, _report_matrix(t.matrix, params.columns("evolve"))) for y, t in topologies.items()},
            params.components, params.theta1, params.theta2,
        )
        txt = rdir / "evolution.txt"
        txt.write_text(report.render_text(registry), encoding="utf-8")
        csv_path = rdir / "evolution.csv"
        csv_path.write_text(report.render_csv(), encoding="utf-8")
        outputs += [txt, csv_path]
    manifest = write_manifest(rdir, "evolve", arguments, paths, params, outputs, time.perf_counter() - t0,
                              {y: _summary(t) for y, t in topologies.items()})
    return RunResult(rdir, manifest, outputs, topologies, report)


def cmd_compare(inputs: Sequence[str], params: PipelineParams, ecosystems: Sequence[str] = (),
                out_root: str | Path = "runs", run_dir: str | Path | None = None) -> RunResult:
    """One topology and popularity report per ecosystem plus the side-by-side table."""
    t0 = time.perf_counter()
    registry = load_registry_for(params)
    tables, paths = _slice_tables(
        inputs, list(ecosystems), params, registry, filter_ecosystem, str, lambda t: t.ecosystems,
    )
    arguments = {"inputs": [_resolve_item(i) for i in inputs], "ecosystems": list(ecosystems)}
    rdir = _start("compare", arguments, paths, params, out_root, run_dir)
    topologies = _map_topologies(tables, registry, params)
    outputs: list[Path] = []
    reports = []
    for eco, topo in topologies.items():
        outputs += write_topology(topo, rdir / eco, params, "compare")
        with stage("report"):
            rep = popularity_groups(
                topo.graph, _report_matrix(topo.matrix, params.columns("compare")), topo.table.stars_by_id(),
                params.components, params.theta1, params.theta2, params.fallback, label=eco,
            )
            path = rdir / eco / "popularity.txt"
            path.write_text(rep.render_text(registry), encoding="utf-8")
            outputs.append(path)
            reports.append(rep)
    with stage("report"):
        txt = rdir / "popularity.txt"
        txt.write_text(render_popularity_table(reports, registry), encoding="utf-8")
        csv_path = rdir / "popularity.csv"
        csv_path.write_text(render_popularity_csv(reports), encoding="utf-8")
        outputs += [txt, csv_path]
    manifest = write_manifest(rdir, "compare", arguments, paths, params, outputs, time.perf_counter() - t0,
                              {e: _summary(t) for e, t in topologies.items()})
    return RunResult(rdir, manifest, outputs, topologies, reports)


def cmd_pca_baseline(input_path: str | Path, params: PipelineParams, out_root: str | Path = "runs",
                     run_dir: str | Path | None = None) -> RunResult:
    """PCA scatter in the t-SNE export format plus an explained-variance report."""
    t0 = time.perf_counter()
    input_path = Path(input_path)
    arguments = {"inputs": [str(input_path.resolve())]}
    rdir = _start("pca-baseline", arguments, [input_path], params, out_root, run_dir)
    registry = load_registry_for(params)
    full = load_input(input_path, params, registry)
    with stage("select"):
        table = top_n_by_stars(full, params.top_n)
    with stage("normalize"):
        reference = full if params.maxima_scope == "input" else None
        matrix = normalize_features(table, registry, params.channels or registry.names, reference)
    with stage("embed"):
        result = pca(matrix.values, params.pca_components)
    with stage("export"):
        emb = rdir / "pca_embedding.csv"
        export_embedding(result.embedding, matrix.row_index, emb)
        var = rdir / "explained_variance.csv"
        lines = ["component,explained_variance,explained_variance_ratio"]
        lines += [f"{k + 1},{v:.10g},{r:.10g}" for k, (v, r) in
                  enumerate(zip(result.explained_variance, result.explained_variance_ratio))]
        var.write_text("\n".join(lines) + "\n", encoding="utf-8")
        load = rdir / "loadings.csv"
        rows = ["channel," + ",".join(f"pc{k + 1}" for k in range(result.components.shape[0]))]
        rows += [f"{ch}," + ",".join(f"{v:.10g}" for v in col)
                 for ch, col in zip(matrix.col_index, result.components.T)]
        load.write_text("\n".join(rows) + "\n", encoding="utf-8")
    outputs = [emb, var, load]
    extra = {"explained_variance_ratio": [round(float(r), 12) for r in result.explained_variance_ratio],
             "projects": len(table)}
    manifest = write_manifest(rdir, "pca-baseline", arguments, [input_path], params, outputs,
                              time.perf_counter() - t0, extra)
    return RunResult(rdir, manifest, outputs)


def _report_matrix(matrix: FeatureMatrix, columns: Sequence[str]) -> FeatureMatrix:
    """Restrict a feature matrix to the report columns."""
    cols = [c for c in columns if c in matrix.col_index]
    if not cols or list(cols) == list(matrix.col_index):
        return matrix
    idx = [matrix.col_index.index(c) for c in cols]
    return dataclasses.replace(matrix, values=np.array(matrix.values[:, idx]), col_index=tuple(cols))


def _resolve_item(item: str) -> str:
    if "=" in item:
        label, path = item.split("=", 1)
        return f"{label}={Path(path).resolve()}"
    return str(Path(item).resolve())
