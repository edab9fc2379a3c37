from __future__ import annotations

import datetime as dt

import pytest
from hypothesis import HealthCheck, settings

from channeltopo.ingest import ProjectRecord, ProjectTable
from channeltopo.knowledge import registry_default

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def registry():
    return registry_default()


def make_record(pid, stars=10, ecosystem="npm", created="2015-01-01", **values):
    reg = registry_default()
    channel_values = {ch: None for ch in reg.names}
    channel_values.update(values)
    return ProjectRecord(pid, ecosystem, f"name-{pid}", dt.date.fromisoformat(created), stars, channel_values)


def make_table(records, channels=None):
    return ProjectTable(tuple(records), ("test",), channels or registry_default().names)


FAST = dict(iterations=300, formats=("graphml", "json", "dot", "svg"))


@pytest.fixture(scope="session")
def blobs_csv(tmp_path_factory):
    from channeltopo import fixtures
    from channeltopo.ingest import save_projects

    path = tmp_path_factory.mktemp("fixtures") / "blobs.csv"
    table, _ = fixtures.generate(fixtures.blobs_groups(300), seed=2)
    save_projects(table, path)
    return path


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
