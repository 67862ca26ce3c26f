"""Logical data lake: zone catalog, metadata, storage tiers and tiering.

Every stored object has exactly one :class:`CatalogEntry`. Payloads live in
one tier's key/value store at a time; the catalog is what queries see, so an
object moved to the cloud stays discoverable from the edge.
"""

from __future__ import annotations

import csv
import io
import json
import math
import threading
from dataclasses import asdict, dataclass, field, replace
from enum import Enum, IntEnum
from typing import Callable, Iterable, Mapping


class Zone(IntEnum):
    INGESTION = 0
    DISTILLATION = 1
    PROCESSING = 2
    INSIGHTS = 3

    @property
    def label(self) -> str:
        return self.name.capitalize()

    @classmethod
    def from_label(cls, text: str) -> "Zone":
        return cls[text.upper()]

    def successor(self) -> "Zone":
        if self is Zone.INSIGHTS:
            raise TerminalZoneError("Insights is the terminal zone")
        return Zone(self + 1)


class Tier(Enum):
    DEVICE = "device"
    EDGE = "edge"
    CLOUD = "cloud"

    @property
    def label(self) -> str:
        return self.name.capitalize()

    @classmethod
    def from_label(cls, text: str) -> "Tier":
        return cls[text.upper()]


class LakeError(Exception):
    pass


class ObjectNotFound(LakeError, KeyError):
    def __str__(self):
        return f"object not found: {self.args[0]!r}"


class TerminalZoneError(LakeError):
    pass


class PartialTransferError(LakeError):
    """Some items of a transfer failed; the rest were moved.

    ``moved`` holds the updated entries and ``failures`` maps object id to reason.
    """

    def __init__(self, moved, failures):
        super().__init__(f"{len(failures)} item(s) not transferred: {sorted(failures)}")
        self.moved = moved
        self.failures = failures


@dataclass(frozen=True)
class Lineage:
    parents: tuple[int, ...] = ()
    transform: str | None = None


@dataclass(frozen=True)
class CatalogEntry:
    object_id: int
    zone: Zone
    tier: Tier
    location: str
    size: int
    created_at: float
    source: str
    lineage: Lineage
    access_history: tuple[float, ...]
    tags: Mapping[str, str]
    meta_features: Mapping[str, float] | None = None

    @property
    def parents(self) -> tuple[int, ...]:
        return self.lineage.parents

    @property
    def access_count(self) -> int:
        return len(self.access_history)


@dataclass(frozen=True)
class TierPolicy:
    hot_access_threshold: int
    window: float
    cold_age: float

    def __post_init__(self):
        if not (self.hot_access_threshold > 0 and self.window > 0 and self.cold_age > 0):
            raise ValueError("tier policy parameters must be strictly positive")


@dataclass(frozen=True)
class TransferJob:
    object_id: int
    source: Tier
    target: Tier


@dataclass(frozen=True)
class TransferBatch:
    batch: int
    target: Tier
    object_ids: tuple[int, ...]


@dataclass(frozen=True)
class LineageEdge:
    parent: int
    child: int
    transform: str


@dataclass
class LineageGraph:
    root: int
    nodes: dict[int, CatalogEntry] = field(default_factory=dict)
    edges: list[LineageEdge] = field(default_factory=list)

    def incoming(self, object_id: int) -> list[LineageEdge]:
        return [e for e in self.edges if e.child == object_id]

    def render(self) -> str:
        """Indented ancestry, root first; shared ancestors are printed once per path."""
        lines = []

        def walk(oid, depth, via):
            e = self.nodes[oid]
            prefix = "  " * depth
            arrow = f" <-[{via}]-" if via else ""
            lines.append(f"{prefix}{arrow}{oid} {e.zone.label} {e.tier.label} {e.source}".rstrip())
            for edge in sorted(self.incoming(oid), key=lambda x: x.parent):
                walk(edge.parent, depth + 1, edge.transform)

        walk(self.root, 0, None)
        return "\n".join(lines)


class DataLake:
    """Catalog plus per-tier payload storage.

    All mutating operations hold one lock, so every entry update is atomic
    with respect to queries.
    """

    def __init__(self):
        self._lock = threading.RLock()
        self._entries: dict[int, CatalogEntry] = {}
        self._storage: dict[Tier, dict[str, bytes]] = {t: {} for t in Tier}
        self._next_id = 1
        self.transfer_log: list[TransferBatch] = []

    # -- storage helpers ---------------------------------------------------

    @staticmethod
    def _location(tier: Tier, object_id: int) -> str:
        return f"{tier.value}://objects/{object_id:08d}"

    def _store(self, tier: Tier, object_id: int, payload: bytes) -> str:
        loc = self._location(tier, object_id)
        self._storage[tier][loc] = payload
        return loc

    def _get(self, object_id: int) -> CatalogEntry:
        try:
            return self._entries[object_id]
        except KeyError:
            raise ObjectNotFound(object_id) from None

    # -- catalog operations ------------------------------------------------

    def ingest(
        self,
        payload: bytes,
        source: str,
        tags: Mapping[str, str] | None = None,
        t: float = 0.0,
    ) -> CatalogEntry:
        if not payload:
            raise ValueError("cannot ingest an empty payload")
        return self._create(
            payload, Zone.INGESTION, str(source), Lineage(), tags or {}, t, Tier.EDGE
        )

    def promote(
        self,
        object_id: int,
        transform: str,
        payload: bytes,
        t: float | None = None,
        tags: Mapping[str, str] | None = None,
    ) -> CatalogEntry:
        """Derive a new entry in the next zone from ``object_id``."""
        with self._lock:
            src = self._get(object_id)
            zone = src.zone.successor()
            return self.derive([object_id], transform, payload, zone=zone, t=t, tags=tags)

    def derive(
        self,
        parent_ids: Iterable[int],
        transform: str,
        payload: bytes,
        zone: Zone | None = None,
        t: float | None = None,
        tags: Mapping[str, str] | None = None,
        tier: Tier = Tier.EDGE,
    ) -> CatalogEntry:
        """Create an entry computed from several parents.

        ``zone`` defaults to the successor of the most mature parent and may
        never be at or below it.
        """
        parents = tuple(dict.fromkeys(parent_ids))
        if not parents:
            raise ValueError("derive needs at least one parent")
        if not payload:
            raise ValueError("derived payload must be non-empty")
        with self._lock:
            entries = [self._get(p) for p in parents]
            top = max(e.zone for e in entries)
            if zone is None:
                zone = top.successor()
            elif zone <= top:
                raise ValueError(f"zone {zone.label} does not advance past {top.label}")
            if t is None:
                t = max(e.created_at for e in entries)
            return self._create(
                payload, zone, transform, Lineage(parents, transform), tags or {}, t, tier
            )

    def _create(self, payload, zone, source, lineage, tags, t, tier) -> CatalogEntry:
        if t < 0 or not math.isfinite(t):
            raise ValueError("time must be finite and non-negative")
        with self._lock:
            oid = self._next_id
            self._next_id += 1
            loc = self._store(tier, oid, bytes(payload))
            entry = CatalogEntry(
                object_id=oid,
                zone=zone,
                tier=tier,
                location=loc,
                size=len(payload),
                created_at=float(t),
                source=source,
                lineage=lineage,
                access_history=(float(t),),
                tags=dict(tags),
            )
            self._entries[oid] = entry
            return entry

    def get(self, object_id: int) -> CatalogEntry:
        with self._lock:
            return self._get(object_id)

    def __len__(self):
        return len(self._entries)

    def __contains__(self, object_id):
        return object_id in self._entries

    def read(self, object_id: int, t: float | None = None) -> bytes:
        """Return the payload; records an access when ``t`` is given."""
        with self._lock:
            if t is not None:
                self.record_access(object_id, t)
            e = self._get(object_id)
            return self._storage[e.tier][e.location]

    def record_access(self, object_id: int, t: float) -> CatalogEntry:
        with self._lock:
            e = self._get(object_id)
            if t < e.access_history[-1]:
                raise ValueError(
                    f"access at t={t} precedes last access at t={e.access_history[-1]}"
                )
            e = replace(e, access_history=e.access_history + (float(t),))
            self._entries[object_id] = e
            return e

    def annotate(self, object_id: int, meta_features: Mapping[str, float]) -> CatalogEntry:
        with self._lock:
            e = self._get(object_id)
            merged = dict(e.meta_features or {})
            merged.update({k: float(v) for k, v in meta_features.items()})
            e = replace(e, meta_features=merged)
            self._entries[object_id] = e
            return e

    def transfer(self, object_ids: Iterable[int], target: Tier, batch_size: int) -> list[CatalogEntry]:
        """Move payloads to ``target`` in batches, touching only tier and location.

        Bad items are skipped and reported through :class:`PartialTransferError`
        after every good item has been moved. Items already on ``target`` are
        returned unchanged and take no batch slot.
        """
        if batch_size < 1:
            raise ValueError("batch_size must be a positive integer")
        ids = list(object_ids)
        moved: list[CatalogEntry] = []
        failures: dict[int, str] = {}
        valid = []
        with self._lock:
            for oid in ids:
                e = self._entries.get(oid)
                if e is None:
                    failures[oid] = "not found"
                elif e.tier is target:
                    moved.append(e)
                else:
                    valid.append(oid)
        for start in range(0, len(valid), batch_size):
            chunk = valid[start:start + batch_size]
            with self._lock:
                for oid in chunk:
                    e = self._entries[oid]
                    data = self._storage[e.tier].pop(e.location)
                    loc = self._store(target, oid, data)
                    e = replace(e, tier=target, location=loc)
                    self._entries[oid] = e
                    moved.append(e)
                self.transfer_log.append(
                    TransferBatch(len(self.transfer_log), target, tuple(chunk))
                )
        if failures:
            raise PartialTransferError(moved, failures)
        return moved

    def apply_tiering(self, policy: TierPolicy, now: float) -> list[TransferJob]:
        """Propose Edge->Cloud demotions and Cloud->Edge promotions.

        Accesses are counted over ``[now - window, now]``, creation included.
        """
        jobs = []
        with self._lock:
            for oid in sorted(self._entries):
                e = self._entries[oid]
                lo = now - policy.window
                hits = sum(1 for ts in e.access_history if lo <= ts <= now)
                age = now - e.created_at
                if e.tier is Tier.EDGE:
                    if hits < policy.hot_access_threshold and age >= policy.cold_age:
                        jobs.append(TransferJob(oid, Tier.EDGE, Tier.CLOUD))
                elif e.tier is Tier.CLOUD:
                    if hits >= policy.hot_access_threshold:
                        jobs.append(TransferJob(oid, Tier.CLOUD, Tier.EDGE))
        return jobs

    def execute(self, jobs: Iterable[TransferJob], batch_size: int) -> list[CatalogEntry]:
        jobs = list(jobs)
        moved = []
        for target in (Tier.CLOUD, Tier.EDGE, Tier.DEVICE):
            ids = [j.object_id for j in jobs if j.target is target]
            if ids:
                moved.extend(self.transfer(ids, target, batch_size))
        return moved

    def query_catalog(
        self,
        predicate: Callable[[CatalogEntry], bool] | None = None,
        *,
        zone: Zone | None = None,
        tier: Tier | None = None,
        source: str | None = None,
        tags: Mapping[str, str] | None = None,
    ) -> list[CatalogEntry]:
        with self._lock:
            snapshot = [self._entries[k] for k in sorted(self._entries)]
        out = []
        for e in snapshot:
            if zone is not None and e.zone != zone:
                continue
            if tier is not None and e.tier is not tier:
                continue
            if source is not None and e.source != source:
                continue
            if tags and any(e.tags.get(k) != v for k, v in tags.items()):
                continue
            if predicate is not None and not predicate(e):
                continue
            out.append(e)
        return out

    def lineage_of(self, object_id: int) -> LineageGraph:
        with self._lock:
            graph = LineageGraph(root=object_id)
            graph.nodes[object_id] = self._get(object_id)
            stack = [object_id]
            while stack:
                oid = stack.pop()
                e = graph.nodes[oid]
                for p in e.parents:
                    graph.edges.append(LineageEdge(p, oid, e.lineage.transform or ""))
                    if p not in graph.nodes:
                        graph.nodes[p] = self._get(p)
                        stack.append(p)
        graph.edges.sort(key=lambda x: (x.child, x.parent))
        return graph

    def stats(self) -> dict[str, int]:
        with self._lock:
            entries = list(self._entries.values())
        out = {f"zone.{z.label}": 0 for z in Zone}
        out.update({f"tier.{t.label}": 0 for t in Tier})
        for e in entries:
            out[f"zone.{e.zone.label}"] += 1
            out[f"tier.{e.tier.label}"] += 1
        out["entries"] = len(entries)
        out["transfer_batches"] = len(self.transfer_log)
        out["objects_transferred"] = sum(len(b.object_ids) for b in self.transfer_log)
        return out

    # -- persistence of metadata (payloads are not persisted) ---------------

    def dump_metadata(self) -> str:
        rows = []
        for e in self.query_catalog():
            d = asdict(e)
            d["zone"] = e.zone.label
            d["tier"] = e.tier.label
            rows.append(d)
        return json.dumps({"entries": rows}, sort_keys=True, indent=1)

    @classmethod
    def load_metadata(cls, text: str) -> "DataLake":
        """Rebuild a catalog-only lake (no payloads) from :meth:`dump_metadata`."""
        lake = cls()
        for d in json.loads(text)["entries"]:
            e = CatalogEntry(
                object_id=d["object_id"],
                zone=Zone.from_label(d["zone"]),
                tier=Tier.from_label(d["tier"]),
                location=d["location"],
                size=d["size"],
                created_at=d["created_at"],
                source=d["source"],
                lineage=Lineage(tuple(d["lineage"]["parents"]), d["lineage"]["transform"]),
                access_history=tuple(d["access_history"]),
                tags=d["tags"],
                meta_features=d["meta_features"],
            )
            lake._entries[e.object_id] = e
            lake._next_id = max(lake._next_id, e.object_id + 1)
        return lake


CATALOG_HEADER = (
    "object_id", "zone", "tier", "location", "created_at", "source",
    "parents", "access_count", "tags",
)


def catalog_csv(entries: Iterable[CatalogEntry]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CATALOG_HEADER)
    for e in entries:
        w.writerow((
            e.object_id,
            e.zone.label,
            e.tier.label,
            e.location,
            repr(e.created_at),
            e.source,
            ";".join(str(p) for p in e.parents),
            e.access_count,
            ";".join(f"{k}={v}" for k, v in sorted(e.tags.items())),
        ))
    return buf.getvalue()
