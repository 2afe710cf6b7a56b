"""Incident records, link ingestion, temporal splitting and triplet generation.

File formats: incidents are UTF-8 JSONL with keys
``id,title,topology,monitor_id,failure_type,owning_service,workload,severity,created_at``
(created_at = integer epoch seconds); links are JSONL with keys
``parent_id,child_id,link_type,created_at`` where link_type is one of
``duplicate|related|responsible``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

DEFAULT_NEGATIVE_WINDOW_SECS = 14_400  # 4 h lookback for negative sampling
DEFAULT_SAME_SERVICE_KEEP = 0.25

INCIDENT_KEYS = (
    "id",
    "title",
    "topology",
    "monitor_id",
    "failure_type",
    "owning_service",
    "workload",
    "severity",
    "created_at",
)
LINK_KEYS = ("parent_id", "child_id", "link_type", "created_at")


class ParseError(ValueError):
    """A line in an incident or link file could not be ingested."""


class UnknownIncidentError(KeyError):
    """An incident id does not resolve in the accompanying incident set."""


class LinkType(str, Enum):
    DUPLICATE = "duplicate"
    RELATED = "related"
    RESPONSIBLE = "responsible"


class LinkScope(str, Enum):
    """Whether a pair spans one service, two services in one workload, or two workloads."""

    WITHIN_SERVICE = "within_service"
    CROSS_SERVICE = "cross_service"
    CROSS_WORKLOAD = "cross_workload"


@dataclass(frozen=True)
class Incident:
    """One alert record as ingested from the incident file."""

    id: str
    title: str
    topology: str
    monitor_id: str
    failure_type: str
    owning_service: str
    workload: str
    severity: int
    created_at: int

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("incident id must be non-empty")
        if self.severity not in (1, 2, 3):
            raise ValueError(f"incident {self.id!r}: severity must be 1-3, got {self.severity}")
        if not self.owning_service:
            raise ValueError(f"incident {self.id!r}: owning_service must be non-empty")
        if self.created_at <= 0:
            raise ValueError(f"incident {self.id!r}: created_at must be positive")


@dataclass(frozen=True)
class IncidentLink:
    """A labeled parent/child relationship between two incidents."""

    parent_id: str
    child_id: str
    link_type: LinkType
    created_at: int

    def __post_init__(self) -> None:
        if self.parent_id == self.child_id:
            raise ValueError(f"link endpoints must differ, got {self.parent_id!r} twice")


@dataclass(frozen=True)
class Triplet:
    """Anchor with one linked (positive) and one unlinked in-window (negative) incident."""

    anchor: str
    positive: str
    negative: str

    def __post_init__(self) -> None:
        if len({self.anchor, self.positive, self.negative}) != 3:
            raise ValueError("triplet ids must be distinct")


@dataclass
class Dataset:
    """Incident map plus link list; every link endpoint must resolve."""

    incidents: dict[str, Incident]
    links: list[IncidentLink]
    split_cutoff: int | None = None

    def __post_init__(self) -> None:
        for link in self.links:
            for endpoint in (link.parent_id, link.child_id):
                if endpoint not in self.incidents:
                    raise UnknownIncidentError(endpoint)


@dataclass
class IngestResult:
    incidents: list[Incident]
    skipped_severity4: int = 0


@dataclass
class TripletResult:
    triplets: list[Triplet]
    dropped_no_negative: int = 0
    downsampled_out: int = 0


def _required(obj: dict, key: str, line_no: int, path: str | Path) -> object:
    if key not in obj:
        raise ParseError(f"{path}:{line_no}: missing mandatory field {key!r}")
    return obj[key]


def parse_incident_file(path: str | Path) -> IngestResult:
    """Read an incident JSONL file, skipping (and counting) severity-4 records.

    Malformed JSON or a missing mandatory field raises ParseError naming the line.
    """
    result = IngestResult(incidents=[])
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{line_no}: malformed JSON: {exc.msg}") from exc
            record = {key: _required(obj, key, line_no, path) for key in INCIDENT_KEYS}
            if record["severity"] == 4:
                result.skipped_severity4 += 1
                continue
            try:
                result.incidents.append(Incident(**record))  # type: ignore[arg-type]
            except (ValueError, TypeError) as exc:
                raise ParseError(f"{path}:{line_no}: {exc}") from exc
    return result


def parse_link_file(path: str | Path) -> list[IncidentLink]:
    """Read a link JSONL file; raises ParseError with the offending line number."""
    links: list[IncidentLink] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{line_no}: malformed JSON: {exc.msg}") from exc
            record = {key: _required(obj, key, line_no, path) for key in LINK_KEYS}
            try:
                link_type = LinkType(record["link_type"])
            except ValueError as exc:
                raise ParseError(
                    f"{path}:{line_no}: link_type must be one of "
                    f"{[t.value for t in LinkType]}, got {record['link_type']!r}"
                ) from exc
            try:
                links.append(
                    IncidentLink(
                        parent_id=str(record["parent_id"]),
                        child_id=str(record["child_id"]),
                        link_type=link_type,
                        created_at=int(record["created_at"]),  # type: ignore[call-overload]
                    )
                )
            except ValueError as exc:
                raise ParseError(f"{path}:{line_no}: {exc}") from exc
    return links


def load_dataset(data_dir: str | Path, split_cutoff: int | None = None) -> Dataset:
    """Load ``incidents.jsonl`` + ``links.jsonl`` from a data directory."""
    data_dir = Path(data_dir)
    ingest = parse_incident_file(data_dir / "incidents.jsonl")
    links = parse_link_file(data_dir / "links.jsonl")
    incidents = {inc.id: inc for inc in ingest.incidents}
    return Dataset(incidents=incidents, links=links, split_cutoff=split_cutoff)


def temporal_split(
    dataset: Dataset, cutoff: int
) -> tuple[list[IncidentLink], list[IncidentLink]]:
    """Partition links by creation time: train < cutoff <= test (half-open train side)."""
    train = [link for link in dataset.links if link.created_at < cutoff]
    test = [link for link in dataset.links if link.created_at >= cutoff]
    return train, test


def pair_scope(a: Incident, b: Incident) -> LinkScope:
    """Scope of any incident pair: same service, same workload, or neither."""
    if a.owning_service == b.owning_service:
        return LinkScope.WITHIN_SERVICE
    if a.workload != b.workload:
        return LinkScope.CROSS_WORKLOAD
    return LinkScope.CROSS_SERVICE


def link_scope(link: IncidentLink, incidents: dict[str, Incident]) -> LinkScope:
    """Classify a link's scope from its endpoint incidents."""
    for endpoint in (link.parent_id, link.child_id):
        if endpoint not in incidents:
            raise UnknownIncidentError(endpoint)
    return pair_scope(incidents[link.parent_id], incidents[link.child_id])


def linked_pairs(links: list[IncidentLink]) -> set[frozenset[str]]:
    """Unordered endpoint pairs of a link set (direction is ignored for labels)."""
    return {frozenset((link.parent_id, link.child_id)) for link in links}


def generate_triplets(
    train_links: list[IncidentLink],
    incidents: dict[str, Incident],
    negative_window: int = DEFAULT_NEGATIVE_WINDOW_SECS,
    downsample_same_service: float = DEFAULT_SAME_SERVICE_KEEP,
    seed: int = 0,
) -> TripletResult:
    """One triplet per retained positive pair.

    Within-service positives are kept with probability ``downsample_same_service``.
    The negative is drawn uniformly from unlinked incidents reported within
    ``negative_window`` seconds of the anchor; pairs with no eligible negative
    are dropped and counted. Deterministic for fixed inputs and seed.
    """
    if negative_window <= 0:
        raise ValueError("negative_window must be positive")
    if not 0.0 <= downsample_same_service <= 1.0:
        raise ValueError("downsample_same_service must be in [0, 1]")

    rng = np.random.default_rng(seed)
    pairs = linked_pairs(train_links)
    neighbors: dict[str, set[str]] = {}
    for link in train_links:
        neighbors.setdefault(link.parent_id, set()).add(link.child_id)
        neighbors.setdefault(link.child_id, set()).add(link.parent_id)

    by_time = sorted(incidents.values(), key=lambda inc: (inc.created_at, inc.id))
    times = np.array([inc.created_at for inc in by_time], dtype=np.int64)

    result = TripletResult(triplets=[])
    seen: set[frozenset[str]] = set()
    for link in train_links:
        key = frozenset((link.parent_id, link.child_id))
        if key in seen:
            continue
        seen.add(key)
        anchor = incidents[link.parent_id]
        positive = incidents[link.child_id]
        if pair_scope(anchor, positive) is LinkScope.WITHIN_SERVICE:
            if rng.random() >= downsample_same_service:
                result.downsampled_out += 1
                continue
        lo = int(np.searchsorted(times, anchor.created_at - negative_window, side="left"))
        hi = int(np.searchsorted(times, anchor.created_at + negative_window, side="right"))
        linked_to_anchor = neighbors.get(anchor.id, set())
        eligible = [
            inc.id
            for inc in by_time[lo:hi]
            if inc.id != anchor.id and inc.id != positive.id and inc.id not in linked_to_anchor
        ]
        if not eligible:
            result.dropped_no_negative += 1
            continue
        negative = eligible[int(rng.integers(len(eligible)))]
        result.triplets.append(Triplet(anchor=anchor.id, positive=positive.id, negative=negative))
    return result
