from __future__ import annotations

import json
from pathlib import Path

import pytest

from channeltopo import cli
from channeltopo.ingest import load_projects
from channeltopo.knowledge import bundled_registry_path
from channeltopo.pipeline import read_config


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out.strip(), out.err


def test_flags_override_config(tmp_path, monkeypatch):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"perplexity": 12, "intervals": 7, "schema": "s.conf"}))
    args = cli.build_parser().parse_args(["topology", "x.csv", "--config", str(cfg), "--intervals", "9"])
    params = cli.resolve_params(args, read_config(cfg), tmp_path)
    assert params.perplexity == 12 and params.intervals == 9
    assert params.schema == str(tmp_path / "s.conf")  # relative to the config file


def test_flag_mapping_covers_all_kinds():
    args = cli.build_parser().parse_args(
        ["topology", "x.csv", "--no-fallback", "--formats", "json", "dot", "--theta1", "0.4", "--channels", "Wiki"]
    )
    params = cli.resolve_params(args, None)
    assert params.fallback is False and params.formats == ("json", "dot")
    assert params.theta1 == 0.4 and params.channels == ("Wiki",)


def test_env_var_names_the_config(tmp_path, monkeypatch, blobs_csv, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"iterations": 260, "formats": ["json"], "seed": 3}))
    monkeypatch.setenv(cli.CONFIG_ENV, str(cfg))
    code, out, _ = run(["topology", blobs_csv, "--out", tmp_path / "runs"], capsys)
    assert code == 0
    manifest = json.loads((Path(out) / "manifest.json").read_text())
    assert manifest["params"]["seed"] == 3 and manifest["params"]["iterations"] == 260


def test_replay_from_manifest(tmp_path, blobs_csv, capsys):
    code, first, _ = run(["topology", blobs_csv, "--iterations", "260", "--formats", "json", "svg",
                          "--run-dir", tmp_path / "a"], capsys)
    assert code == 0
    code, second, _ = run(["topology", "--config", tmp_path / "a" / "manifest.json", "--run-dir", tmp_path / "b"],
                          capsys)
    assert code == 0
    for name in ("graph.json", "graph.svg", "components.csv", "embedding.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_no_input_and_no_manifest(tmp_path, capsys):
    code, _, err = run(["topology", "--out", tmp_path], capsys)
    assert code == 2 and "no input" in err


def test_stage_error_exit_status(tmp_path, capsys):
    code, _, err = run(["topology", tmp_path / "missing.csv", "--out", tmp_path], capsys)
    assert code == 1 and "stage" in err


def test_gen_fixture_styles(tmp_path, capsys):
    code, out, _ = run(["gen-fixture", "blobs", tmp_path / "b.csv", "--n", "30", "--seed", "1"], capsys)
    assert code == 0 and "30 projects" in out
    assert len(load_projects(tmp_path / "b.csv")) == 30
    code, _, _ = run(["gen-fixture", "popularity", tmp_path / "p.csv", "--n", "30", "--style", "librariesio",
                      "--schema-out", tmp_path / "p.conf"], capsys)
    assert code == 0 and (tmp_path / "p.conf").exists()
    header = (tmp_path / "p.csv").read_text().splitlines()[0]
    assert header.startswith("ID,Platform,Name")


def test_validate_registry(tmp_path, capsys):
    code, out, _ = run(["validate-registry", "--strict"], capsys)
    assert code == 0 and "13 channels OK" in out
    data = json.loads(bundled_registry_path().read_text())
    records = data["channels"] if isinstance(data, dict) else data
    broken = tmp_path / "r.json"
    broken.write_text(json.dumps(records[:5]))
    assert run(["validate-registry", broken], capsys)[0] == 0
    assert run(["validate-registry", broken, "--strict"], capsys)[0] == 1
    garbage = tmp_path / "g.json"
    garbage.write_text(json.dumps([{"name": "x"}]))
    assert run(["validate-registry", garbage], capsys)[0] == 1


def test_bad_config_exit_status(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"unknown_knob": 1}))
    code, _, err = run(["topology", "x.csv", "--config", cfg], capsys)
    assert code == 2 and "unknown" in err


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as info:
        cli.main(["--version"])
    assert info.value.code == 0 and "channeltopo" in capsys.readouterr().out
