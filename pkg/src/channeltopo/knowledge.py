"""Knowledge-form taxonomy for communication channels.

Each channel carries a set of tacit (T) / explicit (E) knowledge codes and a
SECI dimension. The dimension follows from the codes: a channel that carries
any tacit code externalizes knowledge, a purely explicit one combines it.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Sequence


class KnowledgeKind(enum.Enum):
    TACIT = "T"
    EXPLICIT = "E"


# Tacit knowledge: T1..T11, explicit knowledge: E1..E10.
CODE_DESCRIPTIONS: dict[str, str] = {
    "T1": "Subjective, cognitive, experiential learning",
    "T2": "Personal",
    "T3": "Context sensitive/specific",
    "T4": "Dynamically created",
    "T5": "Internalized",
    "T6": "Difficult to capture and codify",
    "T7": "Difficult to share",
    "T8": "Has high value",
    "T9": "Hard to document",
    "T10": "Hard to transfer/teach/learn",
    "T11": "Involves a lot of human interpretation",
    "E1": "Objective, rational, technical",
    "E2": "Structured",
    "E3": "Fixed content",
    "E4": "Context independent",
    "E5": "Externalized",
    "E6": "Easily documented",
    "E7": "Easy to codify",
    "E8": "Easy to share",
    "E9": "Easily to transferred/taught/learned",
    "E10": "Exists in high volumes",
}

_MAX_INDEX = {KnowledgeKind.TACIT: 11, KnowledgeKind.EXPLICIT: 10}


@dataclass(frozen=True)
class KnowledgeCode:
    kind: KnowledgeKind
    index: int

    def __post_init__(self) -> None:
        if not 1 <= self.index <= _MAX_INDEX[self.kind]:
            raise ValueError(f"knowledge code index out of range: {self.kind.value}{self.index}")

    @classmethod
    def parse(cls, text: str) -> "KnowledgeCode":
        text = text.strip().upper()
        try:
            kind = KnowledgeKind(text[:1])
            index = int(text[1:])
        except ValueError:
            raise ValueError(f"not a knowledge code: {text!r}") from None
        return cls(kind, index)

    @property
    def is_tacit(self) -> bool:
        return self.kind is KnowledgeKind.TACIT

    @property
    def description(self) -> str:
        return CODE_DESCRIPTIONS[str(self)]

    def __str__(self) -> str:
        return f"{self.kind.value}{self.index}"

    def __lt__(self, other: "KnowledgeCode") -> bool:
        # T before E, then by index
        return (self.kind is KnowledgeKind.EXPLICIT, self.index) < (
            other.kind is KnowledgeKind.EXPLICIT,
            other.index,
        )


def codes(*names: str) -> frozenset[KnowledgeCode]:
    return frozenset(KnowledgeCode.parse(n) for n in names)


# Only these distinctions were used when labelling channels.
IDENTIFIABLE_CODES = codes("T2", "T3", "T4", "E2", "E3", "E4")


class SeciDimension(enum.Enum):
    SOCIALIZATION = "Socialization"  # tacit -> tacit
    EXTERNALIZATION = "Externalization"  # tacit -> explicit
    COMBINATION = "Combination"  # explicit -> explicit
    INTERNALIZATION = "Internalization"  # explicit -> tacit


ASSIGNABLE_DIMENSIONS = (SeciDimension.EXTERNALIZATION, SeciDimension.COMBINATION)


class ValueKind(enum.Enum):
    COUNT = "Count"
    FLAG = "Flag"
    TEXT = "Text"


def derive_dimension(code_set: Iterable[KnowledgeCode]) -> SeciDimension:
    """Externalization if any tacit code is present, Combination otherwise."""
    code_set = frozenset(code_set)
    if not code_set:
        raise ValueError("cannot derive a SECI dimension from an empty code set")
    if any(c.is_tacit for c in code_set):
        return SeciDimension.EXTERNALIZATION
    return SeciDimension.COMBINATION


@dataclass(frozen=True)
class ChannelDescriptor:
    name: str
    codes: frozenset[KnowledgeCode]
    dimension: SeciDimension
    value_kind: ValueKind
    rationale: str = ""

    def code_string(self) -> str:
        return ", ".join(str(c) for c in sorted(self.codes))


class ChannelRegistry(Sequence[ChannelDescriptor]):
    """Ordered, immutable collection of channel descriptors."""

    def __init__(self, channels: Iterable[ChannelDescriptor]):
        self._channels = tuple(channels)
        self._by_name: dict[str, ChannelDescriptor] = {}
        for ch in self._channels:
            self._by_name.setdefault(ch.name, ch)

    def __getitem__(self, i):  # type: ignore[override]
        return self._channels[i]

    def __len__(self) -> int:
        return len(self._channels)

    def __iter__(self) -> Iterator[ChannelDescriptor]:
        return iter(self._channels)

    def __contains__(self, name: object) -> bool:
        return name in self._by_name

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ChannelRegistry) and self._channels == other._channels

    def __hash__(self) -> int:
        return hash(self._channels)

    def __repr__(self) -> str:
        return f"ChannelRegistry({[c.name for c in self._channels]!r})"

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self._channels)

    def lookup(self, name: str) -> ChannelDescriptor:
        try:
            return self._by_name[name]
        except KeyError:
            raise KeyError(f"unknown channel: {name!r}") from None

    def subset(self, names: Iterable[str]) -> list[ChannelDescriptor]:
        """Descriptors for ``names`` in registry order."""
        wanted = set(names)
        unknown = wanted - set(self._by_name)
        if unknown:
            raise ValueError(f"unknown channel(s): {sorted(unknown)}")
        return [c for c in self._channels if c.name in wanted]


def _channel(name, code_names, dimension, kind):
    code_set = codes(*code_names)
    # the rationale is the gloss of the assigned codes
    rationale = "; ".join(c.description for c in sorted(code_set))
    return ChannelDescriptor(name, code_set, dimension, kind, rationale)


_EXT = SeciDimension.EXTERNALIZATION
_COMB = SeciDimension.COMBINATION

_DEFAULT_CHANNELS = (
    _channel("GitHub Pages", ("T2", "T3"), _EXT, ValueKind.FLAG),
    _channel("Readme", ("T3", "T4"), _EXT, ValueKind.FLAG),
    _channel("Security Audit", ("T2", "E3"), _EXT, ValueKind.TEXT),
    _channel("Wiki", ("T2", "T3"), _EXT, ValueKind.FLAG),
    _channel("Changelog", ("E2", "E3"), _COMB, ValueKind.TEXT),
    _channel("Code of Conduct", ("E2", "E3"), _COMB, ValueKind.TEXT),
    _channel("Contributing Guidelines", ("E2", "E3", "E4"), _COMB, ValueKind.TEXT),
    _channel("Fork", ("E2", "E3", "E4"), _COMB, ValueKind.FLAG),
    _channel("Issue Tracker", ("E2", "E4"), _COMB, ValueKind.FLAG),
    _channel("License", ("E2", "E3"), _COMB, ValueKind.TEXT),
    _channel("Security Threat Model", ("E2", "E3", "E4"), _COMB, ValueKind.FLAG),
    _channel("# of Forks", ("E2", "E4"), _COMB, ValueKind.COUNT),
    _channel("# of Open Issues", ("E2", "E4"), _COMB, ValueKind.COUNT),
)

# Columns of the evolution table; used as the default analysis subset.
DEFAULT_ANALYSIS_CHANNELS = (
    "GitHub Pages",
    "Security Audit",
    "Wiki",
    "Changelog",
    "Contributing Guidelines",
    "Fork",
    "Issue Tracker",
    "License",
)

# Columns of the cross-ecosystem popularity table.
DEFAULT_POPULARITY_CHANNELS = (
    "Code of Conduct",
    "Contributing Guidelines",
    "Issue Tracker",
    "License",
    "Wiki",
)

DEFAULT_REGISTRY_SIZE = 13
DEFAULT_DIMENSION_COUNTS = {_EXT: 4, _COMB: 9}


def registry_default() -> ChannelRegistry:
    return ChannelRegistry(_DEFAULT_CHANNELS)


def validate_registry(reg: Iterable[ChannelDescriptor], strict_cardinality: bool = False) -> list[str]:
    """Return a list of human-readable violations; empty means valid.

    With ``strict_cardinality`` the registry must also have the default shape
    (13 channels, 4 Externalization and 9 Combination).
    """
    violations: list[str] = []
    channels = list(reg)
    seen: set[str] = set()
    for ch in channels:
        if ch.name in seen:
            violations.append(f"duplicate channel name: {ch.name!r}")
        seen.add(ch.name)
        if not ch.name.strip():
            violations.append("channel with empty name")
        if not ch.codes:
            violations.append(f"{ch.name!r}: no knowledge codes")
            continue
        stray = sorted(c for c in ch.codes if c not in IDENTIFIABLE_CODES)
        if stray:
            violations.append(f"{ch.name!r}: codes outside T2-T4/E2-E4: {', '.join(map(str, stray))}")
        if ch.dimension not in ASSIGNABLE_DIMENSIONS:
            violations.append(f"{ch.name!r}: dimension {ch.dimension.value} is not assignable to channels")
        elif ch.dimension is not derive_dimension(ch.codes):
            violations.append(
                f"{ch.name!r}: dimension {ch.dimension.value} contradicts codes {ch.code_string()}"
            )
    if strict_cardinality:
        if len(channels) != DEFAULT_REGISTRY_SIZE:
            violations.append(f"expected {DEFAULT_REGISTRY_SIZE} channels, found {len(channels)}")
        for dim, expected in DEFAULT_DIMENSION_COUNTS.items():
            found = sum(1 for c in channels if c.dimension is dim)
            if found != expected:
                violations.append(f"expected {expected} {dim.value} channels, found {found}")
    return violations


# -- registry data files -----------------------------------------------------

def registry_to_records(reg: Iterable[ChannelDescriptor]) -> list[dict]:
    return [
        {
            "name": ch.name,
            "codes": [str(c) for c in sorted(ch.codes)],
            "dimension": ch.dimension.value,
            "value_kind": ch.value_kind.value,
            "rationale": ch.rationale,
        }
        for ch in reg
    ]


def registry_from_records(records: Iterable[dict]) -> ChannelRegistry:
    channels = []
    for rec in records:
        try:
            channels.append(
                ChannelDescriptor(
                    name=str(rec["name"]),
                    codes=frozenset(KnowledgeCode.parse(c) for c in rec["codes"]),
                    dimension=SeciDimension(rec["dimension"]),
                    value_kind=ValueKind(rec["value_kind"]),
                    rationale=str(rec.get("rationale", "")),
                )
            )
        except KeyError as exc:
            raise ValueError(f"registry record missing field {exc}") from None
    return ChannelRegistry(channels)


def load_registry(path: str | Path) -> ChannelRegistry:
    """Load a registry override file, rejecting it if it fails validation."""
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    records = data["channels"] if isinstance(data, dict) else data
    reg = registry_from_records(records)
    violations = validate_registry(reg)
    if violations:
        raise ValueError(f"invalid registry file {path}: " + "; ".join(violations))
    return reg


def save_registry(reg: Iterable[ChannelDescriptor], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"channels": registry_to_records(reg)}, fh, indent=2)
        fh.write("\n")


def bundled_registry_path() -> Path:
    return Path(str(resources.files("channeltopo") / "data" / "registry.json"))
