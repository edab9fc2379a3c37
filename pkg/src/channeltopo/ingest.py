"""Load and filter tabular project exports.

Raw channel values are kept as plain Python values:

    Count -> int, Flag -> bool, Text -> str, Absent -> None

``None`` is never confused with ``False``: a project without a value for a
channel is Absent, a project that reports "false" carries ``Flag(False)``.
"""

from __future__ import annotations

import csv
import datetime as dt
import logging
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Optional, Union

from .knowledge import ChannelRegistry, ValueKind, registry_default

log = logging.getLogger(__name__)

RawValue = Optional[Union[int, bool, str]]
ABSENT = None

ECOSYSTEMS = ("Go", "npm", "Packagist", "RubyGems", "PyPI", "Bower", "Maven")
_ECOSYSTEM_ALIASES = {e.lower(): e for e in ECOSYSTEMS}

REQUIRED_FIELDS = ("id", "ecosystem", "name", "created", "stars")
DEFAULT_TOP_N = 10_000

_TRUE = {"true", "t", "yes", "y", "1"}
_FALSE = {"false", "f", "no", "n", "0"}


class SchemaError(ValueError):
    """The input header does not satisfy the column mapping."""


def canonical_ecosystem(name: str) -> str:
    """Map platform spellings (``NPM``, ``Pypi``, ``Rubygems``) onto the known names.

    Unknown platforms are passed through unchanged.
    """
    name = name.strip()
    return _ECOSYSTEM_ALIASES.get(name.lower(), name)


@dataclass(frozen=True)
class ProjectRecord:
    id: str
    ecosystem: str
    name: str
    created: dt.date
    stars: int
    channel_values: Mapping[str, RawValue]

    @property
    def year(self) -> int:
        return self.created.year


def _sort_key(rec: ProjectRecord):
    return (-rec.stars, rec.id)


@dataclass(frozen=True)
class ProjectTable:
    """Immutable, deterministically ordered set of projects.

    Records are always held sorted by stars descending, then id ascending.
    """

    records: tuple[ProjectRecord, ...]
    provenance: tuple[str, ...] = ()
    channels: tuple[str, ...] = ()
    rejected: int = 0

    def __post_init__(self) -> None:
        ordered = tuple(sorted(self.records, key=_sort_key))
        object.__setattr__(self, "records", ordered)
        ids = [r.id for r in ordered]
        if len(set(ids)) != len(ids):
            dupes = sorted(i for i, c in Counter(ids).items() if c > 1)
            raise ValueError(f"duplicate project ids: {dupes[:5]}")

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.records]

    @property
    def ecosystems(self) -> list[str]:
        return sorted({r.ecosystem for r in self.records})

    def derive(self, records: Iterable[ProjectRecord], note: str) -> "ProjectTable":
        return replace(self, records=tuple(records), provenance=self.provenance + (note,))

    def stars_by_id(self) -> dict[str, int]:
        return {r.id: r.stars for r in self.records}


# -- schema -------------------------------------------------------------------

@dataclass
class Schema:
    """Column mapping from an export's header to project fields.

    ``channels`` maps registry channel name -> column name.  Channels listed in
    ``presence`` are read as flags by presence: any non-empty cell that is not
    a boolean token counts as true (e.g. a ``README.md`` filename column).
    """

    columns: dict[str, str]
    channels: dict[str, str]
    presence: set[str] = field(default_factory=set)
    delimiter: str = ","

    @classmethod
    def canonical(cls, registry: ChannelRegistry | None = None) -> "Schema":
        registry = registry or registry_default()
        return cls(
            columns={f: f for f in REQUIRED_FIELDS},
            channels={name: name for name in registry.names},
        )

    @classmethod
    def parse(cls, text: str) -> "Schema":
        """Parse ``key = column`` lines.

        Keys are the required fields, ``delimiter``, ``channel.<name>`` and
        ``presence.<name>`` (value true/false).
        """
        columns: dict[str, str] = {}
        channels: dict[str, str] = {}
        presence: set[str] = set()
        delimiter = ","
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith(("#", ";")):
                continue
            if "=" not in line:
                raise SchemaError(f"schema line {lineno}: expected key = column")
            key, value = (s.strip() for s in line.split("=", 1))
            if key in REQUIRED_FIELDS:
                columns[key] = value
            elif key == "delimiter":
                delimiter = {"tab": "\t", "\\t": "\t", "comma": ","}.get(value, value)
            elif key.startswith("channel."):
                channels[key[len("channel."):]] = value
            elif key.startswith("presence."):
                if value.lower() in _TRUE:
                    presence.add(key[len("presence."):])
            else:
                raise SchemaError(f"schema line {lineno}: unknown key {key!r}")
        return cls(columns=columns, channels=channels, presence=presence, delimiter=delimiter)

    @classmethod
    def from_file(cls, path: str | Path) -> "Schema":
        return cls.parse(Path(path).read_text(encoding="utf-8"))

    def check(self, header: Iterable[str], registry: ChannelRegistry) -> None:
        header = set(header)
        missing_keys = [f for f in REQUIRED_FIELDS if f not in self.columns]
        if missing_keys:
            raise SchemaError(f"schema does not map required field(s): {missing_keys}")
        missing = [self.columns[f] for f in REQUIRED_FIELDS if self.columns[f] not in header]
        if missing:
            raise SchemaError(f"missing required column(s): {missing}")
        unknown = [c for c in self.channels if c not in registry]
        if unknown:
            raise SchemaError(f"schema maps unknown channel(s): {unknown}")
        if not any(col in header for col in self.channels.values()):
            raise SchemaError("no channel column present in the input")


# -- cell parsing ---------------------------------------------------------------

_TZ_SUFFIX = re.compile(r"\s*(UTC|Z)$", re.IGNORECASE)


def parse_date(text: str) -> dt.date:
    """ISO-8601 date or datetime; a trailing ``Z``/``UTC`` is tolerated."""
    text = _TZ_SUFFIX.sub("", text.strip())
    if not text:
        raise ValueError("empty date")
    try:
        return dt.date.fromisoformat(text)
    except ValueError:
        return dt.datetime.fromisoformat(text).date()


def parse_stars(text: str) -> int:
    value = int(text.strip())
    if value < 0:
        raise ValueError(f"negative star count {value}")
    return value


def parse_cell(text: str | None, kind: ValueKind, presence: bool = False) -> RawValue:
    """Parse one channel cell; unparseable cells become Absent."""
    if text is None:
        return ABSENT
    text = text.strip()
    if not text:
        return False if presence else ABSENT
    if kind is ValueKind.COUNT:
        try:
            value = int(float(text)) if "." in text else int(text)
        except ValueError:
            return ABSENT
        return value if value >= 0 else ABSENT
    if kind is ValueKind.FLAG:
        low = text.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        return True if presence else ABSENT
    return text


def format_cell(value: RawValue) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


# -- loading --------------------------------------------------------------------

def load_projects(
    path: str | Path,
    schema: Schema | None = None,
    registry: ChannelRegistry | None = None,
    delimiter: str | None = None,
) -> ProjectTable:
    """Read a delimiter-separated export into a :class:`ProjectTable`.

    Rows with an unparseable star count or creation date, an empty id or
    ecosystem, or a repeated id are rejected and counted in ``table.rejected``.
    Channels the schema does not map are recorded as Absent for every row.
    """
    registry = registry or registry_default()
    schema = schema or Schema.canonical(registry)
    delim = delimiter or schema.delimiter
    path = Path(path)
    records: list[ProjectRecord] = []
    reasons: Counter[str] = Counter()
    seen: set[str] = set()
    cols = schema.columns
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter=delim)
        if reader.fieldnames is None:
            raise SchemaError(f"{path}: no header row")
        schema.check(reader.fieldnames, registry)
        mapped = {
            name: col for name, col in schema.channels.items() if col in reader.fieldnames
        }
        for row in reader:
            pid = (row.get(cols["id"]) or "").strip()
            eco = canonical_ecosystem(row.get(cols["ecosystem"]) or "")
            if not pid or not eco:
                reasons["missing id/ecosystem"] += 1
                continue
            if pid in seen:
                reasons["duplicate id"] += 1
                continue
            try:
                stars = parse_stars(row.get(cols["stars"]) or "")
            except ValueError:
                reasons["bad stars"] += 1
                continue
            try:
                created = parse_date(row.get(cols["created"]) or "")
            except ValueError:
                reasons["bad date"] += 1
                continue
            values = {}
            for ch in registry:
                col = mapped.get(ch.name)
                cell = row.get(col) if col is not None else None
                values[ch.name] = parse_cell(cell, ch.value_kind, ch.name in schema.presence)
            seen.add(pid)
            records.append(
                ProjectRecord(
                    id=pid,
                    ecosystem=eco,
                    name=(row.get(cols["name"]) or "").strip(),
                    created=created,
                    stars=stars,
                    channel_values=values,
                )
            )
    rejected = sum(reasons.values())
    log.info("loaded %d rows from %s (%d rejected %s)", len(records), path, rejected, dict(reasons))
    return ProjectTable(
        records=tuple(records),
        provenance=(f"load:{path}",),
        channels=registry.names,
        rejected=rejected,
    )


def save_projects(table: ProjectTable, path: str | Path, delimiter: str = ",") -> None:
    """Write ``table`` in the canonical schema (readable by ``load_projects``)."""
    channels = list(table.channels)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        writer.writerow(list(REQUIRED_FIELDS) + channels)
        for rec in table.records:
            writer.writerow(
                [rec.id, rec.ecosystem, rec.name, rec.created.isoformat(), rec.stars]
                + [format_cell(rec.channel_values.get(ch)) for ch in channels]
            )


# -- filtering --------------------------------------------------------------------

def top_n_by_stars(table: ProjectTable, n: int = DEFAULT_TOP_N) -> ProjectTable:
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    return table.derive(table.records[:n], f"top_n_by_stars:{n}")


def slice_by_year(table: ProjectTable, year: int) -> ProjectTable:
    return table.derive((r for r in table.records if r.year == year), f"slice_by_year:{year}")


def filter_ecosystem(table: ProjectTable, ecosystem: str) -> ProjectTable:
    eco = canonical_ecosystem(ecosystem)
    return table.derive((r for r in table.records if r.ecosystem == eco), f"ecosystem:{eco}")


@dataclass(frozen=True)
class StarStats:
    count: int
    min: int
    max: int
    median: int
    mean: float


def lower_median(values: list[int]) -> int:
    ordered = sorted(values)
    return ordered[(len(ordered) - 1) // 2]


def summary_stats(table: ProjectTable) -> dict[str, StarStats]:
    """Per-ecosystem star statistics; the median of an even count is the lower middle."""
    groups: dict[str, list[int]] = {}
    for rec in table.records:
        groups.setdefault(rec.ecosystem, []).append(rec.stars)
    return {
        eco: StarStats(
            count=len(stars),
            min=min(stars),
            max=max(stars),
            median=lower_median(stars),
            mean=sum(stars) / len(stars),
        )
        for eco, stars in sorted(groups.items())
        if stars
    }
