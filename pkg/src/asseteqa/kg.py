"""FMEA knowledge graph: loading, structural validation and label lookups.

The interchange format is line-delimited JSON, one record per line::

    {"record": "entity", "id": "fm:comp3", "kind": "failure_mode", "name": "...", "attributes": {...}}
    {"record": "relation", "subject": "fm:comp3", "predicate": "indicated_by", "object": "sensor:vibration"}

Relations whose predicate is in :data:`LITERAL_PREDICATES` carry a literal
string object; every other object is an entity id.
"""

from __future__ import annotations

import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Iterable

from .facts import HEALTHY, dumps

logger = logging.getLogger(__name__)

ENTITY_KINDS = ("asset_category", "asset_class", "component", "failure_mode", "sensor", "action")
KNOWN_PREDICATES = ("affects", "component_of", "indicated_by", "mitigated_by", "description", "involves")
LITERAL_PREDICATES = frozenset({"description", "alias"})
SEVERITIES = ("low", "medium", "high", "very_high")
INDICATOR_PREFIX = "indicator:"


class KgError(ValueError):
    """Raised when a KG file cannot be loaded."""


@dataclass(frozen=True, order=True)
class KgEntity:
    id: str
    kind: str
    name: str
    attributes: tuple[tuple[str, str], ...] = ()

    def attr(self, key: str, default: str | None = None) -> str | None:
        for k, v in self.attributes:
            if k == key:
                return v
        return default

    def to_record(self) -> dict[str, Any]:
        return {
            "record": "entity",
            "id": self.id,
            "kind": self.kind,
            "name": self.name,
            "attributes": dict(self.attributes),
        }


@dataclass(frozen=True, order=True)
class KgRelation:
    subject: str
    predicate: str
    object: str

    @property
    def literal(self) -> bool:
        return self.predicate in LITERAL_PREDICATES

    @property
    def known_predicate(self) -> bool:
        return self.predicate in KNOWN_PREDICATES

    def to_record(self) -> dict[str, Any]:
        return {"record": "relation", "subject": self.subject, "predicate": self.predicate, "object": self.object}


@dataclass
class FailureProfile:
    failure_label: str
    display_name: str
    description: str
    equipment_category: str
    associated_sensors: list[str]
    typical_indicators: dict[str, str]
    recommended_actions: list[str]
    severity: str
    asset_name: str | None = None

    def to_fact_json(self) -> dict[str, Any]:
        """Nested layout used inside episode facts (``iso_metadata`` block)."""
        return {
            "failure_label": self.failure_label,
            "display_name": self.display_name,
            "asset_name": self.asset_name,
            "iso_metadata": {
                "failure_mode": self.failure_label,
                "name": self.display_name,
                "description": self.description,
                "equipment_category": self.equipment_category,
                "associated_sensors": list(self.associated_sensors),
                "typical_indicators": dict(self.typical_indicators),
                "recommended_actions": list(self.recommended_actions),
                "severity": self.severity,
            },
        }

    @classmethod
    def from_fact_json(cls, d: dict[str, Any]) -> FailureProfile:
        meta = d.get("iso_metadata", {})
        return cls(
            failure_label=d["failure_label"],
            display_name=meta.get("name", d.get("display_name", d["failure_label"])),
            description=meta.get("description", ""),
            equipment_category=meta.get("equipment_category", ""),
            associated_sensors=list(meta.get("associated_sensors", [])),
            typical_indicators=dict(meta.get("typical_indicators", {})),
            recommended_actions=list(meta.get("recommended_actions", [])),
            severity=meta.get("severity", "medium"),
            asset_name=d.get("asset_name"),
        )


@dataclass
class AssetProfile:
    asset_name: str
    equipment_category: str = ""
    equipment_class_type: str = ""
    unit_subunit: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "asset_name": self.asset_name,
            "equipment_category": self.equipment_category,
            "equipment_class_type": self.equipment_class_type,
            "unit_subunit": list(self.unit_subunit),
        }


@dataclass
class ValidationReport:
    n_entities: int
    n_relations: int
    entities_by_kind: dict[str, int]
    relations_by_predicate: dict[str, int]
    dangling: list[KgRelation]
    duplicate_ids: list[str]
    modes_without_sensors: list[str]
    cycle_warnings: list[list[str]]

    @property
    def ok(self) -> bool:
        return not self.dangling and not self.duplicate_ids

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_entities": self.n_entities,
            "n_relations": self.n_relations,
            "entities_by_kind": self.entities_by_kind,
            "relations_by_predicate": self.relations_by_predicate,
            "dangling": [r.to_record() for r in self.dangling],
            "duplicate_ids": self.duplicate_ids,
            "modes_without_sensors": self.modes_without_sensors,
            "cycle_warnings": self.cycle_warnings,
            "ok": self.ok,
        }


def fold(text: str) -> str:
    return " ".join(text.split()).casefold()


class KnowledgeGraph:
    """Immutable entity/relation multiset with lookup indices built once."""

    def __init__(self, entities: Iterable[KgEntity], relations: Iterable[KgRelation]):
        self._entity_list = sorted(entities)
        self.relations: tuple[KgRelation, ...] = tuple(sorted(relations))
        self.entities: dict[str, KgEntity] = {}
        for e in self._entity_list:
            self.entities.setdefault(e.id, e)
        self._out: dict[tuple[str, str], list[str]] = defaultdict(list)
        self._in: dict[tuple[str, str], list[str]] = defaultdict(list)
        for r in self.relations:
            self._out[(r.subject, r.predicate)].append(r.object)
            if not r.literal:
                self._in[(r.object, r.predicate)].append(r.subject)
        self._canonical: dict[str, str] = {}
        self._synonyms: dict[str, set[str]] = defaultdict(set)
        for e in self.failure_modes():
            label = self.failure_label_of(e)
            self._canonical.setdefault(fold(label), label)
            self._synonyms[fold(e.name)].add(label)
            for alias in self._out.get((e.id, "alias"), ()):
                self._synonyms[fold(alias)].add(label)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return self._entity_list == other._entity_list and self.relations == other.relations

    def __len__(self) -> int:
        return len(self._entity_list)

    @property
    def entity_list(self) -> list[KgEntity]:
        return list(self._entity_list)

    def of_kind(self, kind: str) -> list[KgEntity]:
        return [e for e in self.entities.values() if e.kind == kind]

    def failure_modes(self) -> list[KgEntity]:
        return self.of_kind("failure_mode")

    def objects(self, subject: str, predicate: str) -> list[str]:
        return list(self._out.get((subject, predicate), ()))

    def subjects(self, obj: str, predicate: str) -> list[str]:
        return list(self._in.get((obj, predicate), ()))

    @staticmethod
    def failure_label_of(entity: KgEntity) -> str:
        return entity.attr("failure_label") or entity.id

    def find_by_name(self, kind: str, name: str) -> KgEntity | None:
        key = fold(name)
        for e in sorted(self.of_kind(kind)):
            if fold(e.name) == key or fold(e.id) == key:
                return e
        return None

    # -- label normalisation -------------------------------------------------

    def normalize_label(self, label: str) -> str:
        key = fold(label)
        if key in self._canonical:
            return self._canonical[key]
        candidates = self._synonyms.get(key)
        if candidates:
            return min(candidates)
        return key

    def resolve_failure_modes(self, name: str) -> list[KgEntity]:
        """Every failure-mode entity whose label, display name or alias matches."""
        key = fold(name)
        labels = set(self._synonyms.get(key, ()))
        if key in self._canonical:
            labels.add(self._canonical[key])
        return sorted(e for e in self.failure_modes() if self.failure_label_of(e) in labels)

    # -- profiles ------------------------------------------------------------

    def _entity_names(self, ids: Iterable[str]) -> list[str]:
        return [self.entities[i].name for i in sorted(ids) if i in self.entities]

    def _mode_assets(self, mode: KgEntity) -> set[str]:
        assets: set[str] = set()
        for comp in self.objects(mode.id, "affects"):
            target = self.entities.get(comp)
            if target is None:
                continue
            if target.kind == "asset_class":
                assets.add(fold(target.name))
            for cls_id in self.objects(comp, "component_of"):
                cls = self.entities.get(cls_id)
                if cls is not None and cls.kind == "asset_class":
                    assets.add(fold(cls.name))
        return assets

    def profile_of(self, mode: KgEntity, asset_name: str | None = None) -> FailureProfile:
        indicators = {
            k[len(INDICATOR_PREFIX):]: v for k, v in mode.attributes if k.startswith(INDICATOR_PREFIX)
        }
        return FailureProfile(
            failure_label=self.failure_label_of(mode),
            display_name=mode.name,
            description=mode.attr("description", "") or "",
            equipment_category=mode.attr("equipment_category", "") or "",
            associated_sensors=self._entity_names(self.objects(mode.id, "indicated_by")),
            typical_indicators=indicators,
            recommended_actions=self._entity_names(self.objects(mode.id, "mitigated_by")),
            severity=mode.attr("severity", "medium") or "medium",
            asset_name=asset_name,
        )

    def failure_profile(self, label: str, asset_name: str | None = None) -> FailureProfile | None:
        """Profile for ``label`` (canonical or display name), optionally narrowed to an asset.

        When narrowing by asset leaves no candidate, the asset filter is dropped
        rather than returning nothing.
        """
        canonical = self.normalize_label(label)
        if canonical == HEALTHY:
            return None
        modes = [e for e in self.failure_modes() if self.failure_label_of(e) == canonical]
        if not modes:
            return None
        if asset_name is not None:
            narrowed = [m for m in modes if fold(asset_name) in self._mode_assets(m)]
            modes = narrowed or modes
        return self.profile_of(sorted(modes)[0], asset_name)

    def asset_profile(self, asset_name: str) -> AssetProfile | None:
        cls = self.find_by_name("asset_class", asset_name)
        if cls is None:
            return None
        return AssetProfile(
            asset_name=cls.name,
            equipment_category=cls.attr("equipment_category", "") or "",
            equipment_class_type=cls.attr("equipment_class_type", "") or "",
            unit_subunit=self._entity_names(self.subjects(cls.id, "component_of")),
        )

    def sensor_description(self, sensor_name: str) -> str | None:
        sensor = self.find_by_name("sensor", sensor_name)
        if sensor is None:
            return None
        return sensor.attr("description")


# -- io --------------------------------------------------------------------


def _parse_record(rec: Any, where: str) -> KgEntity | KgRelation:
    if not isinstance(rec, dict):
        raise KgError(f"{where}: record is not a JSON object")
    kind = rec.get("record")
    if kind == "entity":
        try:
            eid, ekind = rec["id"], rec["kind"]
        except KeyError as exc:
            raise KgError(f"{where}: entity missing field {exc.args[0]!r}") from None
        if not isinstance(eid, str) or not eid:
            raise KgError(f"{where}: entity id must be a nonempty string")
        if ekind not in ENTITY_KINDS:
            raise KgError(f"{where}: unknown entity kind {ekind!r} for {eid!r}")
        attrs = rec.get("attributes") or {}
        if not isinstance(attrs, dict):
            raise KgError(f"{where}: attributes must be an object")
        return KgEntity(
            id=eid,
            kind=ekind,
            name=str(rec.get("name", eid)),
            attributes=tuple(sorted((str(k), str(v)) for k, v in attrs.items())),
        )
    if kind == "relation":
        try:
            return KgRelation(str(rec["subject"]), str(rec["predicate"]), str(rec["object"]))
        except KeyError as exc:
            raise KgError(f"{where}: relation missing field {exc.args[0]!r}") from None
    raise KgError(f"{where}: unknown record type {kind!r}")


def load_kg(path: str | Path, strict: bool = True) -> KnowledgeGraph:
    """Read a KG file. With ``strict`` dangling relations are an error."""
    entities: list[KgEntity] = []
    relations: list[KgRelation] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise KgError(f"{where}: invalid JSON ({exc.msg})") from None
            item = _parse_record(rec, where)
            if isinstance(item, KgEntity):
                if item.id in seen:
                    raise KgError(f"{where}: duplicate entity id {item.id!r}")
                seen.add(item.id)
                entities.append(item)
            else:
                relations.append(item)
    kg = KnowledgeGraph(entities, relations)
    if strict:
        report = validate_kg(kg)
        if report.dangling:
            missing = sorted(
                {r.subject for r in report.dangling if r.subject not in kg.entities}
                | {r.object for r in report.dangling if not r.literal and r.object not in kg.entities}
            )
            raise KgError(f"{path}: relations reference unknown entity ids: {', '.join(missing)}")
    return kg


def dump_kg(kg: KnowledgeGraph, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for e in kg.entity_list:
            fh.write(dumps(e.to_record()) + "\n")
        for r in kg.relations:
            fh.write(dumps(r.to_record()) + "\n")


def bundled_kg_path() -> Path:
    return Path(str(resources.files("asseteqa").joinpath("data/fmea_kg.jsonl")))


def load_bundled_kg() -> KnowledgeGraph:
    return load_kg(bundled_kg_path())


# -- validation ------------------------------------------------------------


def _component_of_cycles(kg: KnowledgeGraph) -> list[list[str]]:
    graph: dict[str, list[str]] = defaultdict(list)
    for r in kg.relations:
        if r.predicate == "component_of":
            graph[r.subject].append(r.object)
    cycles: list[list[str]] = []
    state: dict[str, int] = {}
    stack: list[str] = []

    def visit(node: str) -> None:
        state[node] = 1
        stack.append(node)
        for nxt in graph.get(node, ()):
            if state.get(nxt) == 1:
                cycles.append(stack[stack.index(nxt):] + [nxt])
            elif nxt not in state:
                visit(nxt)
        stack.pop()
        state[node] = 2

    for node in sorted(graph):
        if node not in state:
            visit(node)
    return cycles


def validate_kg(kg: KnowledgeGraph) -> ValidationReport:
    ids = [e.id for e in kg.entity_list]
    counts: dict[str, int] = defaultdict(int)
    for i in ids:
        counts[i] += 1
    by_kind: dict[str, int] = defaultdict(int)
    for e in kg.entity_list:
        by_kind[e.kind] += 1
    by_pred: dict[str, int] = defaultdict(int)
    dangling = []
    for r in kg.relations:
        by_pred[r.predicate] += 1
        if r.subject not in kg.entities or (not r.literal and r.object not in kg.entities):
            dangling.append(r)
    no_sensors = sorted(
        KnowledgeGraph.failure_label_of(m)
        for m in kg.failure_modes()
        if not any(o in kg.entities for o in kg.objects(m.id, "indicated_by"))
    )
    return ValidationReport(
        n_entities=len(ids),
        n_relations=len(kg.relations),
        entities_by_kind=dict(sorted(by_kind.items())),
        relations_by_predicate=dict(sorted(by_pred.items())),
        dangling=dangling,
        duplicate_ids=sorted(i for i, c in counts.items() if c > 1),
        modes_without_sensors=no_sensors,
        cycle_warnings=_component_of_cycles(kg),
    )


def failure_profile(kg: KnowledgeGraph, label: str, asset_name: str | None = None) -> FailureProfile | None:
    return kg.failure_profile(label, asset_name)


def normalize_label(kg: KnowledgeGraph | None, label: str) -> str:
    if kg is None:
        return fold(label)
    return kg.normalize_label(label)
