"""Episode fact records and their JSONL form.

An :class:`EpisodeFact` is one asset's telemetry restricted to a fixed
window, with engineered features, a label and provenance. The JSON layout
follows the extractor output (``fact_id``, ``features`` as a list of
``{"name", "value"}`` pairs, nested ``provenance``); timestamps are kept as
``YYYY-MM-DD HH:MM:SS`` strings so they sort lexicographically.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Any, Iterable, Iterator

TS_FORMAT = "%Y-%m-%d %H:%M:%S"
HOUR_FORMAT = "%Y-%m-%dT%H"

FAILURE_WINDOW = "failure_window"
HEALTHY_WINDOW = "healthy_window"
HEALTHY = "healthy"

SENSOR_STATS = ("mean", "std", "min", "max", "trend")


def format_ts(ts: datetime) -> str:
    return ts.strftime(TS_FORMAT)


def parse_ts(text: str) -> datetime:
    return datetime.strptime(text, TS_FORMAT)


def dumps(obj: Any) -> str:
    """Canonical single-line JSON used for every artifact we write."""
    return json.dumps(obj, ensure_ascii=False, allow_nan=False)


@dataclass
class NamedFeature:
    name: str
    value: float | None

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, "value": self.value}


@dataclass
class Provenance:
    telemetry_source_file: str
    telemetry_time_range: tuple[str, str]
    failure_source_file: str | None = None
    failure_index: int | None = None
    errors_source_file: str | None = None
    maint_source_file: str | None = None
    machines_source_file: str | None = None
    telemetry_points_in_window: int = 0
    errors_in_window: int = 0
    maint_events_in_window: int = 0

    def source_files(self) -> set[str]:
        files = {
            self.telemetry_source_file,
            self.failure_source_file,
            self.errors_source_file,
            self.maint_source_file,
            self.machines_source_file,
        }
        files.discard(None)
        return files  # type: ignore[return-value]

    def to_dict(self) -> dict[str, Any]:
        return {
            "telemetry_source_file": self.telemetry_source_file,
            "telemetry_time_range": list(self.telemetry_time_range),
            "failure_source_file": self.failure_source_file,
            "failure_index": self.failure_index,
            "errors_source_file": self.errors_source_file,
            "maint_source_file": self.maint_source_file,
            "machines_source_file": self.machines_source_file,
            "telemetry_points_in_window": self.telemetry_points_in_window,
            "errors_in_window": self.errors_in_window,
            "maint_events_in_window": self.maint_events_in_window,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> Provenance:
        start, end = d["telemetry_time_range"]
        return cls(
            telemetry_source_file=d["telemetry_source_file"],
            telemetry_time_range=(start, end),
            failure_source_file=d.get("failure_source_file"),
            failure_index=d.get("failure_index"),
            errors_source_file=d.get("errors_source_file"),
            maint_source_file=d.get("maint_source_file"),
            machines_source_file=d.get("machines_source_file"),
            telemetry_points_in_window=int(d.get("telemetry_points_in_window", 0)),
            errors_in_window=int(d.get("errors_in_window", 0)),
            maint_events_in_window=int(d.get("maint_events_in_window", 0)),
        )


@dataclass
class EpisodeFact:
    fact_id: str
    dataset: str
    source_file: str
    asset_id: str
    machine_id: int
    episode_type: str
    failure_component: str | None
    failure_time: str | None
    start_time: str
    end_time: str
    label: str
    features: list[NamedFeature]
    provenance: Provenance
    row_index: int
    asset_profile: dict[str, Any] | None = None
    failure_profile: dict[str, Any] | None = None
    sensor_profiles: list[dict[str, Any]] | None = None

    @property
    def is_failure(self) -> bool:
        return self.episode_type == FAILURE_WINDOW

    def feature_map(self) -> dict[str, float | None]:
        return {f.name: f.value for f in self.features}

    def feature(self, name: str) -> float | None:
        for f in self.features:
            if f.name == name:
                return f.value
        return None

    def has_feature(self, name: str) -> bool:
        return any(f.name == name for f in self.features)

    def sensors(self) -> list[str]:
        """Sensor names in feature order, recovered from ``<sensor>_mean`` etc."""
        seen: list[str] = []
        for f in self.features:
            base, _, stat = f.name.rpartition("_")
            if stat in SENSOR_STATS and base and base not in seen:
                seen.append(base)
        return seen

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "fact_id": self.fact_id,
            "dataset": self.dataset,
            "source_file": self.source_file,
            "asset_id": self.asset_id,
            "machineID": self.machine_id,
            "episode_type": self.episode_type,
            "failure_component": self.failure_component,
            "failure_time": self.failure_time,
            "start_time": self.start_time,
            "end_time": self.end_time,
            "label": self.label,
            "features": [f.to_dict() for f in self.features],
        }
        if self.asset_profile is not None:
            d["asset_profile"] = self.asset_profile
        if self.failure_profile is not None:
            d["failure_profile"] = self.failure_profile
        if self.sensor_profiles is not None:
            d["sensor_profiles"] = self.sensor_profiles
        d["provenance"] = self.provenance.to_dict()
        d["row_index"] = self.row_index
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> EpisodeFact:
        return cls(
            fact_id=d["fact_id"],
            dataset=d["dataset"],
            source_file=d["source_file"],
            asset_id=d["asset_id"],
            machine_id=int(d.get("machineID", -1)),
            episode_type=d["episode_type"],
            failure_component=d.get("failure_component"),
            failure_time=d.get("failure_time"),
            start_time=d["start_time"],
            end_time=d["end_time"],
            label=d["label"],
            features=[NamedFeature(f["name"], f["value"]) for f in d["features"]],
            provenance=Provenance.from_dict(d["provenance"]),
            row_index=int(d["row_index"]),
            asset_profile=d.get("asset_profile"),
            failure_profile=d.get("failure_profile"),
            sensor_profiles=d.get("sensor_profiles"),
        )

    def to_json(self) -> str:
        return dumps(self.to_dict())


def write_facts(facts: Iterable[EpisodeFact], path: str | Path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for fact in facts:
            fh.write(fact.to_json())
            fh.write("\n")
            n += 1
    return n


def read_facts(path: str | Path) -> Iterator[EpisodeFact]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield EpisodeFact.from_dict(json.loads(line))


def read_jsonl(path: str | Path) -> list[dict[str, Any]]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_jsonl(rows: Iterable[dict[str, Any]], path: str | Path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(dumps(row))
            fh.write("\n")
            n += 1
    return n


def fmt_num(value: float) -> str:
    """Render a number compactly (6 significant digits) for prompts and answers."""
    if float(value).is_integer() and abs(value) < 1e15:
        return f"{float(value):.1f}"
    return format(float(value), ".6g")
