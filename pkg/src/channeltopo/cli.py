"""Command-line entry point: ``channeltopo <command> ...``.

Parameters come from, in increasing priority: built-in defaults, the config
file named by ``$CHANNELTOPO_CONFIG`` or ``--config``, and explicit flags.
A run manifest is itself a valid config; when a command is given no inputs,
the manifest's inputs are replayed.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

from . import __version__, fixtures
from .ingest import save_projects
from .knowledge import bundled_registry_path, load_registry, registry_from_records, validate_registry
from .pipeline import (
    PipelineParams,
    RunConfig,
    StageError,
    cmd_compare,
    cmd_evolve,
    cmd_pca_baseline,
    cmd_topology,
    read_config,
)

CONFIG_ENV = "CHANNELTOPO_CONFIG"

_HELP = {
    "channels": "feature channels (default: every registry channel)",
    "report_channels": "channel columns of the dominance reports",
    "top_n": "keep the N most-starred projects",
    "maxima_scope": "compute count maxima over the top-N selection or the whole input",
    "perplexity": "t-SNE perplexity (clamped to (n-1)/3 on small inputs)",
    "seed": "seed for t-SNE initialisation and layouts",
    "intervals": "cover intervals per axis",
    "overlap": "fraction shared by neighbouring cover intervals",
    "hist_bins": "histogram bins of the clustering gap heuristic",
    "cluster_space": "metric space for in-bin clustering",
    "min_node_size": "drop clusters with fewer members",
    "theta1": "Dominant threshold on channel means",
    "theta2": "StronglyDominant threshold on channel means",
    "components": "components (or groups) per report",
    "formats": "graph outputs to write",
    "color_channel": "channel colouring the SVG nodes",
    "layout": "SVG layout",
    "schema": "column-mapping file for the input export",
    "registry": "channel registry JSON (default: bundled)",
    "delimiter": "input delimiter (default: from schema, else comma)",
    "jobs": "worker processes for per-year / per-ecosystem runs",
}
_CHOICES = {
    "cluster_space": ("features", "filter"),
    "maxima_scope": ("selected", "input"),
    "layout": ("force", "bingrid"),
    "formats": ("graphml", "json", "dot", "svg"),
}


def _add_param_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("pipeline parameters")
    for f in dataclasses.fields(PipelineParams):
        flag = "--" + f.name.replace("_", "-")
        kwargs = {"dest": f.name, "default": None, "help": _HELP.get(f.name, f.name.replace("_", " "))}
        if f.name in _CHOICES:
            kwargs["choices"] = _CHOICES[f.name]
        if isinstance(f.default, bool):
            group.add_argument(flag, action=argparse.BooleanOptionalAction, **kwargs)
        elif isinstance(f.default, tuple):
            group.add_argument(flag, nargs="+", **kwargs)
        else:
            group.add_argument(flag, type=type(f.default), **kwargs)


def _common(parser: argparse.ArgumentParser, outputs: bool = True) -> None:
    parser.add_argument("--config", help=f"JSON config or run manifest (default: ${CONFIG_ENV})")
    if outputs:
        parser.add_argument("--out", default="runs", help="parent of timestamped run directories")
        parser.add_argument("--run-dir", help="write into this directory instead")
    _add_param_flags(parser)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="channeltopo", description="Mapper topologies of project channel data.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("topology", help="build one topology")
    p.add_argument("input", nargs="?", help="project export (omit to replay a manifest)")
    _common(p)

    p = sub.add_parser("evolve", help="one topology per year plus the evolution report")
    p.add_argument("inputs", nargs="*", help="YEAR=PATH items, or one PATH sliced by --years")
    p.add_argument("--years", nargs="+", type=int, default=None)
    _common(p)

    p = sub.add_parser("compare", help="one topology and popularity report per ecosystem")
    p.add_argument("inputs", nargs="*", help="ECOSYSTEM=PATH items, or one PATH split by --ecosystems")
    p.add_argument("--ecosystems", nargs="+", default=None)
    _common(p)

    p = sub.add_parser("pca-baseline", help="PCA scatter and explained variance")
    p.add_argument("input", nargs="?")
    _common(p)

    p = sub.add_parser("gen-fixture", help="write a seeded synthetic export")
    p.add_argument("preset", choices=fixtures.PRESETS)
    p.add_argument("output")
    p.add_argument("--n", type=int, default=None, help="size knob of the preset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--style", choices=("canonical", "librariesio"), default="canonical",
                   help="column layout of the written file")
    p.add_argument("--schema-out", help="also write the matching schema file")

    p = sub.add_parser("validate-registry", help="check a channel registry file")
    p.add_argument("path", nargs="?", help="registry JSON (default: bundled)")
    p.add_argument("--strict", action="store_true", help="also require the 13-channel 4/9 split")
    return parser


def _config_path(args) -> Path | None:
    path = args.config or os.environ.get(CONFIG_ENV)
    return Path(path) if path else None


_PATH_PARAMS = ("schema", "registry")


def resolve_params(args, config: RunConfig | None, config_dir: Path | None = None) -> PipelineParams:
    merged = dict(config.params) if config else {}
    for key in _PATH_PARAMS:
        if merged.get(key) and config_dir is not None:
            merged[key] = str((config_dir / merged[key]).resolve())
    for f in dataclasses.fields(PipelineParams):
        value = getattr(args, f.name, None)
        if value is not None:
            merged[f.name] = str(Path(value).resolve()) if f.name in _PATH_PARAMS and value else value
    return PipelineParams.from_dict(merged)


def _replayed(config: RunConfig | None, command: str, key: str):
    # only a manifest of the same command carries replayable inputs
    if config is None or config.command != command:
        return None
    return config.arguments.get(key)


def _run(args) -> int:
    cfg = _config_path(args)
    config = read_config(cfg) if cfg else None
    params = resolve_params(args, config, cfg.resolve().parent if cfg else None)
    cmd = args.command
    if cmd in ("topology", "pca-baseline"):
        path = args.input
        if path is None:
            inputs = _replayed(config, cmd, "inputs")
            if not inputs:
                raise ValueError("no input given and no manifest to replay")
            path = inputs[0]
        runner = cmd_topology if cmd == "topology" else cmd_pca_baseline
        result = runner(path, params, args.out, args.run_dir)
    elif cmd == "evolve":
        inputs = args.inputs or _replayed(config, cmd, "inputs") or []
        years = args.years if args.years is not None else (_replayed(config, cmd, "years") or [])
        if not inputs:
            raise ValueError("no inputs given and no manifest to replay")
        result = cmd_evolve(inputs, params, years, args.out, args.run_dir)
    else:
        inputs = args.inputs or _replayed(config, cmd, "inputs") or []
        ecos = args.ecosystems if args.ecosystems is not None else (_replayed(config, cmd, "ecosystems") or [])
        if not inputs:
            raise ValueError("no inputs given and no manifest to replay")
        result = cmd_compare(inputs, params, ecos, args.out, args.run_dir)
    print(result.run_dir)
    return 0


def _gen_fixture(args) -> int:
    table, _ = fixtures.generate(fixtures.preset(args.preset, args.n), seed=args.seed)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.style == "librariesio":
        fixtures.write_librariesio_csv(table, out)
        if args.schema_out:
            Path(args.schema_out).write_text(fixtures.librariesio_schema_text(), encoding="utf-8")
    else:
        save_projects(table, out)
    print(f"{out}: {len(table)} projects")
    return 0


def _validate_registry(args) -> int:
    path = Path(args.path) if args.path else bundled_registry_path()
    data = json.loads(path.read_text(encoding="utf-8"))
    records = data["channels"] if isinstance(data, dict) else data
    try:
        problems = validate_registry(registry_from_records(records), strict_cardinality=args.strict)
    except (ValueError, KeyError, TypeError) as exc:
        problems = [f"malformed registry: {exc}"]
    for p in problems:
        print(f"{path}: {p}")
    if problems:
        return 1
    reg = load_registry(path)
    print(f"{path}: {len(reg)} channels OK")
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        if args.command == "gen-fixture":
            return _gen_fixture(args)
        if args.command == "validate-registry":
            return _validate_registry(args)
        return _run(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
