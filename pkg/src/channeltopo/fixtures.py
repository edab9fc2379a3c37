"""Seeded synthetic ecosystems with planted channel profiles.

A profile gives, per channel, the probability that a project has it (flag and
text channels) or whether its count is high (count channels). Groups of
projects drawn from one profile form a blob in feature space, which is what
the acceptance fixtures plant and later try to recover.
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .ingest import ECOSYSTEMS, ProjectRecord, ProjectTable, format_cell
from .knowledge import ChannelRegistry, ValueKind, registry_default

_TEXT_VALUES = {
    "Security Audit": "SECURITY_AUDIT.md",
    "Changelog": "CHANGELOG.md",
    "Code of Conduct": "CODE_OF_CONDUCT.md",
    "Contributing Guidelines": "CONTRIBUTING.md",
    "License": "MIT",
}

# count ranges for "high" and "low" count profiles; equal widths keep each
# blob isotropic in count space (elongated blobs tend to tear under t-SNE)
_HIGH = (900, 1000)
_LOW = (0, 100)


@dataclass(frozen=True)
class Profile:
    name: str
    presence: Mapping[str, float]  # channel -> probability (count: P(high))

    def planted(self, channel: str) -> bool:
        return self.presence.get(channel, 0.0) >= 0.5


@dataclass(frozen=True)
class Group:
    profile: Profile
    size: int
    ecosystem: str = "npm"
    year: int = 2015
    star_median: float = 50.0
    star_spread: float = 0.5  # sigma of log-stars


def profile(name: str, present: Sequence[str], registry: ChannelRegistry | None = None,
            p_present: float = 1.0, p_absent: float = 0.0, overrides: Mapping[str, float] | None = None) -> Profile:
    registry = registry or registry_default()
    probs = {ch: (p_present if ch in present else p_absent) for ch in registry.names}
    probs.update(overrides or {})
    return Profile(name, probs)


def generate(groups: Sequence[Group], seed: int = 0, registry: ChannelRegistry | None = None,
             id_prefix: str = "p") -> tuple[ProjectTable, list[str]]:
    """Draw projects for every group; returns the table and per-project profile names."""
    registry = registry or registry_default()
    rng = np.random.default_rng(seed)
    records = []
    labels = []
    k = 0
    for g in groups:
        for _ in range(g.size):
            values = {}
            for ch in registry:
                p = g.profile.presence.get(ch.name, 0.0)
                hit = bool(rng.random() < p)
                if ch.value_kind is ValueKind.COUNT:
                    lo, hi = _HIGH if hit else _LOW
                    values[ch.name] = int(rng.integers(lo, hi + 1))
                elif ch.value_kind is ValueKind.FLAG:
                    values[ch.name] = hit
                else:
                    values[ch.name] = _TEXT_VALUES.get(ch.name, "present") if hit else None
            stars = int(round(g.star_median * float(np.exp(rng.normal(0.0, g.star_spread)))))
            day = dt.date(g.year, 1, 1) + dt.timedelta(days=int(rng.integers(0, 365)))
            pid = f"{id_prefix}{k:06d}"
            records.append(ProjectRecord(pid, g.ecosystem, f"{g.profile.name}-{k}", day, max(stars, 0), values))
            labels.append(g.profile.name)
            k += 1
    table = ProjectTable(tuple(records), (f"synthetic:seed={seed}",), registry.names)
    by_id = dict(zip((r.id for r in records), labels))
    return table, [by_id[pid] for pid in table.ids]


# -- presets ---------------------------------------------------------------------------

def blobs_groups(n: int = 2000, ecosystem: str = "npm", year: int = 2015) -> list[Group]:
    """Three pure channel profiles over all 13 channels."""
    a = profile("A", ["Readme", "Wiki", "Issue Tracker", "License", "Contributing Guidelines",
                      "Changelog", "# of Forks", "GitHub Pages"])
    b = profile("B", ["Readme", "Issue Tracker", "Fork", "Code of Conduct", "# of Open Issues"])
    c = profile("C", ["Wiki", "License", "Security Audit", "Security Threat Model", "# of Open Issues",
                      "# of Forks"])
    sizes = [n * 45 // 100, n * 35 // 100]
    sizes.append(n - sum(sizes))
    return [Group(p, s, ecosystem, year, star_median=m) for p, s, m in zip((a, b, c), sizes, (200, 60, 20))]


def decline_groups(per_year: int = 400, channel: str = "Contributing Guidelines",
                   rates: Sequence[float] = (0.9, 0.5, 0.1), years: Sequence[int] = (2015, 2016, 2017),
                   ecosystem: str = "npm") -> list[Group]:
    """One population per year whose ``channel`` adoption falls from 90% to 10%.

    Issue Tracker, Wiki and License stay present throughout.
    """
    groups = []
    stable = ["Readme", "Wiki", "Issue Tracker", "License"]
    for year, rate in zip(years, rates):
        prof = profile(f"Y{year}", stable, overrides={channel: rate})
        groups.append(Group(prof, per_year, ecosystem, year, star_median=100))
    return groups


POPULAR_CHANNELS = ("Code of Conduct", "Contributing Guidelines", "Issue Tracker", "License", "Wiki")


def popularity_groups(per_ecosystem: int = 150, ecosystems: Sequence[str] = ECOSYSTEMS,
                      year: int = 2016) -> list[Group]:
    """Per ecosystem: a high-star group with the popular channel set and two low-star groups."""
    popular = profile("Popular", POPULAR_CHANNELS + ("Readme",))
    np1 = profile("NonPopular1", ["Issue Tracker", "Wiki", "Readme", "# of Open Issues"])
    np2 = profile("NonPopular2", ["Issue Tracker", "License", "Fork", "# of Forks"])
    groups = []
    third = per_ecosystem // 3
    for eco in ecosystems:
        groups += [
            Group(popular, third, eco, year, star_median=2000),
            Group(np1, third, eco, year, star_median=40),
            Group(np2, per_ecosystem - 2 * third, eco, year, star_median=15),
        ]
    return groups


def librariesio_groups(n: int = 500) -> list[Group]:
    """Noisy, mixed-ecosystem, multi-year sample resembling a real export."""
    registry = registry_default()
    bases = [
        profile("docs-heavy", ["Readme", "Wiki", "Issue Tracker", "License", "Contributing Guidelines",
                               "Changelog", "GitHub Pages", "# of Forks"], registry, 0.85, 0.1),
        profile("minimal", ["Readme", "Issue Tracker", "License"], registry, 0.8, 0.05),
        profile("forked", ["Readme", "Fork", "Issue Tracker", "Wiki", "# of Open Issues"], registry, 0.8, 0.1),
    ]
    groups = []
    years = (2014, 2015, 2016, 2017, 2018)
    k = 0
    base_size = n // (len(ECOSYSTEMS) * len(years))
    for i, eco in enumerate(ECOSYSTEMS):
        for j, year in enumerate(years):
            size = base_size + (1 if k < n - base_size * len(ECOSYSTEMS) * len(years) else 0)
            prof = bases[(i + j) % len(bases)]
            groups.append(Group(prof, size, eco, year, star_median=[900, 120, 40][(i + j) % 3], star_spread=1.2))
            k += 1
    return groups


PRESETS = ("blobs", "decline", "popularity", "librariesio")


def preset(name: str, n: int | None = None) -> list[Group]:
    if name == "blobs":
        return blobs_groups(n or 2000)
    if name == "decline":
        return decline_groups(n or 400)
    if name == "popularity":
        return popularity_groups(n or 150)
    if name == "librariesio":
        return librariesio_groups(n or 500)
    raise ValueError(f"unknown fixture preset {name!r}; choose from {PRESETS}")


# -- libraries.io-style export -----------------------------------------------------------

# channel -> (column, cell encoding) in the projects-with-repository-fields export
LIBRARIESIO_COLUMNS = {
    "GitHub Pages": "Repository Pages enabled?",
    "Readme": "Repository Readme filename",
    "Security Audit": "Repository Security Audit filename",
    "Wiki": "Repository Wiki enabled?",
    "Changelog": "Repository Changelog filename",
    "Code of Conduct": "Repository Code of Conduct filename",
    "Contributing Guidelines": "Repository Contributing guidelines filename",
    "Fork": "Repository Fork?",
    "Issue Tracker": "Repository Issues enabled?",
    "License": "Repository License",
    "Security Threat Model": "Repository Security Threat Model filename",
    "# of Forks": "Repository Forks Count",
    "# of Open Issues": "Repository Open Issues Count",
}
_FILENAME_FLAGS = {"Readme": "README.md", "Security Threat Model": "SECURITY.md"}
_PLATFORM_SPELLING = {"Go": "Go", "npm": "NPM", "Packagist": "Packagist", "RubyGems": "Rubygems",
                      "PyPI": "Pypi", "Bower": "Bower", "Maven": "Maven"}

LIBRARIESIO_HEADER = [
    "ID", "Platform", "Name", "Created Timestamp", "Description", "Repository Stars Count",
    "Repository Name with Owner", *LIBRARIESIO_COLUMNS.values(),
]


def librariesio_schema_text() -> str:
    lines = [
        "# projects_with_repository_fields export (libraries.io)",
        "id = ID",
        "ecosystem = Platform",
        "name = Name",
        "created = Created Timestamp",
        "stars = Repository Stars Count",
    ]
    lines += [f"channel.{ch} = {col}" for ch, col in LIBRARIESIO_COLUMNS.items()]
    lines += [f"presence.{ch} = true" for ch in _FILENAME_FLAGS]
    return "\n".join(lines) + "\n"


def write_librariesio_csv(table: ProjectTable, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LIBRARIESIO_HEADER)
        for k, rec in enumerate(table.records):
            cells = []
            for ch in LIBRARIESIO_COLUMNS:
                v = rec.channel_values.get(ch)
                if ch in _FILENAME_FLAGS:
                    cells.append(_FILENAME_FLAGS[ch] if v else "")
                else:
                    cells.append(format_cell(v))
            writer.writerow([
                rec.id, _PLATFORM_SPELLING.get(rec.ecosystem, rec.ecosystem), rec.name,
                f"{rec.created.isoformat()} 12:00:00 UTC", "synthetic sample", rec.stars,
                f"example/{rec.name}", *cells,
            ])
