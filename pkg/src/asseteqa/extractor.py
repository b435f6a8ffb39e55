"""Telemetry → episode facts.

Reads the five PdM-style tables (telemetry, failures, errors, maintenance,
machines), builds one failure-centred window per failure row plus strided
healthy windows per machine, and computes the named feature vector for each
window. Windows are half-open, ``(t - window_hours, t]``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .facts import (
    FAILURE_WINDOW,
    HEALTHY,
    HEALTHY_WINDOW,
    HOUR_FORMAT,
    EpisodeFact,
    NamedFeature,
    Provenance,
    format_ts,
)
from .kg import KnowledgeGraph

logger = logging.getLogger(__name__)

NO_MAINTENANCE = -1.0

REQUIRED_COLUMNS = {
    "telemetry": ("datetime", "machineID"),
    "failures": ("datetime", "machineID", "failure"),
    "errors": ("datetime", "machineID", "errorID"),
    "maint": ("datetime", "machineID", "comp"),
    "machines": ("machineID", "model", "age"),
}


class ExtractionError(ValueError):
    """Malformed input table; the message carries a file/row locator."""


@dataclass
class ExtractorConfig:
    window_hours: float = 24.0
    horizon_hours: float = 24.0
    max_healthy_per_machine: int = 50
    dataset: str = "pdm"
    trend_on_hours: bool = False

    def __post_init__(self) -> None:
        if not self.window_hours > 0:
            raise ValueError("window_hours must be positive")
        if not self.horizon_hours > 0:
            raise ValueError("horizon_hours must be positive")
        if self.max_healthy_per_machine < 0:
            raise ValueError("max_healthy_per_machine must be non-negative")


@dataclass
class RawTables:
    telemetry: pd.DataFrame
    failures: pd.DataFrame
    errors: pd.DataFrame
    maint: pd.DataFrame
    machines: pd.DataFrame
    files: dict[str, str] = field(default_factory=dict)

    @property
    def sensors(self) -> list[str]:
        return [c for c in self.telemetry.columns if c not in ("datetime", "machineID", "src_row")]

    @property
    def components(self) -> list[str]:
        comps = set(self.maint["comp"].astype(str)) | set(self.failures["failure"].astype(str))
        return sorted(comps)

    @property
    def models(self) -> list[str]:
        return sorted(set(self.machines["model"].astype(str)))


def _read_table(path: str | Path, kind: str) -> pd.DataFrame:
    try:
        df = pd.read_csv(path)
    except FileNotFoundError:
        raise ExtractionError(f"{path}: file not found") from None
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise ExtractionError(f"{path}: {exc}") from None
    missing = [c for c in REQUIRED_COLUMNS[kind] if c not in df.columns]
    if missing:
        raise ExtractionError(f"{path}: missing column(s) {', '.join(missing)}")
    df["src_row"] = np.arange(len(df))
    if "datetime" in df.columns:
        parsed = pd.to_datetime(df["datetime"], format="mixed", errors="coerce")
        bad = parsed.isna()
        if bad.any():
            i = int(np.flatnonzero(bad.to_numpy())[0])
            raise ExtractionError(
                f"{path}: row {i + 2}: unparseable timestamp {df['datetime'].iloc[i]!r}"
            )
        df["datetime"] = parsed.dt.floor("s")
    return df


def load_tables(
    telemetry: str | Path,
    failures: str | Path,
    errors: str | Path,
    maint: str | Path,
    machines: str | Path,
) -> RawTables:
    paths = {"telemetry": telemetry, "failures": failures, "errors": errors, "maint": maint, "machines": machines}
    frames = {k: _read_table(p, k) for k, p in paths.items()}
    tel = frames["telemetry"]
    sensors = [c for c in tel.columns if c not in ("datetime", "machineID", "src_row")]
    for s in sensors:
        tel[s] = pd.to_numeric(tel[s], errors="coerce")
    tel = tel.sort_values(["machineID", "datetime", "src_row"], kind="mergesort").reset_index(drop=True)
    frames["telemetry"] = tel
    return RawTables(files={k: Path(p).name for k, p in paths.items()}, **frames)


# -- feature primitives ----------------------------------------------------


def sensor_descriptors(values: Sequence[float], positions: Sequence[float] | None = None) -> dict[str, float | None]:
    """mean/std/min/max/trend of one sensor's samples inside a window.

    ``std`` uses the population denominator. ``trend`` is the least-squares
    slope against sample index, or against ``positions`` (e.g. elapsed hours)
    when given. Missing samples (NaN) are dropped first.
    """
    v = np.asarray(values, dtype=float)
    x = np.arange(len(v), dtype=float) if positions is None else np.asarray(positions, dtype=float)
    keep = ~np.isnan(v)
    v, x = v[keep], x[keep]
    if positions is None:
        x = np.arange(len(v), dtype=float)
    n = len(v)
    if n == 0:
        return {"mean": None, "std": None, "min": None, "max": None, "trend": None}
    mean = float(v.mean())
    out: dict[str, float | None] = {
        "mean": mean,
        "std": float(v.std()),
        "min": float(v.min()),
        "max": float(v.max()),
        "trend": None,
    }
    if n >= 2:
        dx = x - x.mean()
        denom = float(dx @ dx)
        out["trend"] = float(dx @ (v - mean) / denom) if denom > 0 else None
    return out


def _hour_key(ts: datetime) -> str:
    return ts.strftime(HOUR_FORMAT)


@dataclass
class _MachineData:
    times: np.ndarray  # datetime64[ns], sorted
    rows: np.ndarray
    values: np.ndarray  # (n, n_sensors)
    error_times: np.ndarray
    error_ids: np.ndarray
    maint_times: np.ndarray
    maint_comps: np.ndarray
    failure_times: np.ndarray
    model: str | None
    age: float | None


class FactExtractor:
    """Builds facts from loaded tables; one instance per table set."""

    def __init__(self, tables: RawTables, cfg: ExtractorConfig):
        self.tables = tables
        self.cfg = cfg
        self.sensors = tables.sensors
        self.components = tables.components
        self.models = tables.models
        self._window = np.timedelta64(int(round(cfg.window_hours * 3600)), "s")
        self._horizon = np.timedelta64(int(round(cfg.horizon_hours * 3600)), "s")
        self._machines: dict[int, _MachineData] = {}

    def _machine(self, machine_id: int) -> _MachineData:
        if machine_id in self._machines:
            return self._machines[machine_id]
        t = self.tables
        tel = t.telemetry[t.telemetry["machineID"] == machine_id]
        err = t.errors[t.errors["machineID"] == machine_id].sort_values(["datetime", "src_row"], kind="mergesort")
        mnt = t.maint[t.maint["machineID"] == machine_id].sort_values(["datetime", "src_row"], kind="mergesort")
        fail = t.failures[t.failures["machineID"] == machine_id]
        meta = t.machines[t.machines["machineID"] == machine_id]
        model = str(meta["model"].iloc[0]) if len(meta) else None
        age = float(meta["age"].iloc[0]) if len(meta) and pd.notna(meta["age"].iloc[0]) else None
        data = _MachineData(
            times=tel["datetime"].to_numpy(dtype="datetime64[ns]"),
            rows=tel["src_row"].to_numpy(),
            values=tel[self.sensors].to_numpy(dtype=float),
            error_times=err["datetime"].to_numpy(dtype="datetime64[ns]"),
            error_ids=err["errorID"].astype(str).to_numpy(),
            maint_times=mnt["datetime"].to_numpy(dtype="datetime64[ns]"),
            maint_comps=mnt["comp"].astype(str).to_numpy(),
            failure_times=np.sort(fail["datetime"].to_numpy(dtype="datetime64[ns]")),
            model=model,
            age=age,
        )
        self._machines[machine_id] = data
        return data

    def _features(self, m: _MachineData, t: np.datetime64) -> tuple[list[NamedFeature], dict[str, int]]:
        lo_t = t - self._window
        lo = int(np.searchsorted(m.times, lo_t, side="right"))
        hi = int(np.searchsorted(m.times, t, side="right"))
        feats: list[NamedFeature] = []
        positions = None
        if self.cfg.trend_on_hours:
            positions = (m.times[lo:hi] - m.times[lo]) / np.timedelta64(1, "h") if hi > lo else []
        for j, sensor in enumerate(self.sensors):
            desc = sensor_descriptors(m.values[lo:hi, j], positions)
            for stat in ("mean", "std", "min", "max", "trend"):
                feats.append(NamedFeature(f"{sensor}_{stat}", desc[stat]))

        elo = int(np.searchsorted(m.error_times, lo_t, side="right"))
        ehi = int(np.searchsorted(m.error_times, t, side="right"))
        window_errors = m.error_ids[elo:ehi]
        feats.append(NamedFeature("error_count_last_window", float(len(window_errors))))
        feats.append(NamedFeature("distinct_error_types_last_window", float(len(set(window_errors.tolist())))))

        for comp in self.components:
            before = m.maint_times[(m.maint_comps == comp) & (m.maint_times < t)]
            if len(before):
                hours = float((t - before.max()) / np.timedelta64(1, "h"))
            else:
                hours = NO_MAINTENANCE
            feats.append(NamedFeature(f"hours_since_last_maint_{comp}", hours))

        feats.append(NamedFeature("machine_age", m.age))
        for model in self.models:
            flag = None if m.model is None else float(m.model == model)
            feats.append(NamedFeature(f"model_{model}", flag))

        mlo = int(np.searchsorted(m.maint_times, lo_t, side="right"))
        mhi = int(np.searchsorted(m.maint_times, t, side="right"))
        counts = {"telemetry": hi - lo, "errors": ehi - elo, "maint": mhi - mlo}
        return feats, counts

    def _fact(
        self,
        machine_id: int,
        t: np.datetime64,
        episode_type: str,
        component: str | None,
        row_index: int,
        failure_index: int | None,
    ) -> EpisodeFact:
        m = self._machine(machine_id)
        feats, counts = self._features(m, t)
        end = pd.Timestamp(t).to_pydatetime()
        start = end - timedelta(hours=self.cfg.window_hours)
        files = self.tables.files
        tag = component if episode_type == FAILURE_WINDOW else HEALTHY
        return EpisodeFact(
            fact_id=f"{self.cfg.dataset}_m{machine_id}_{tag}_{_hour_key(end)}",
            dataset=self.cfg.dataset,
            source_file=files.get("telemetry", ""),
            asset_id=f"machine_{machine_id}",
            machine_id=int(machine_id),
            episode_type=episode_type,
            failure_component=component,
            failure_time=format_ts(end) if episode_type == FAILURE_WINDOW else None,
            start_time=format_ts(start),
            end_time=format_ts(end),
            label=component if episode_type == FAILURE_WINDOW else HEALTHY,  # type: ignore[arg-type]
            features=feats,
            provenance=Provenance(
                telemetry_source_file=files.get("telemetry", ""),
                telemetry_time_range=(format_ts(start), format_ts(end)),
                failure_source_file=files.get("failures") if episode_type == FAILURE_WINDOW else None,
                failure_index=failure_index,
                errors_source_file=files.get("errors"),
                maint_source_file=files.get("maint"),
                machines_source_file=files.get("machines"),
                telemetry_points_in_window=counts["telemetry"],
                errors_in_window=counts["errors"],
                maint_events_in_window=counts["maint"],
            ),
            row_index=row_index,
        )

    def failure_episodes(self) -> list[EpisodeFact]:
        facts = []
        for row in self.tables.failures.itertuples(index=False):
            t = np.datetime64(row.datetime, "ns")
            facts.append(
                self._fact(int(row.machineID), t, FAILURE_WINDOW, str(row.failure), int(row.src_row), int(row.src_row))
            )
        return facts

    def healthy_episodes(self) -> list[EpisodeFact]:
        facts = []
        cap = self.cfg.max_healthy_per_machine
        if cap == 0:
            return facts
        for machine_id in sorted(self.tables.telemetry["machineID"].unique()):
            m = self._machine(int(machine_id))
            n = len(m.times)
            if n == 0:
                continue
            stride = max(1, math.ceil(n / cap))
            accepted = 0
            for i in range(0, n, stride):
                t = m.times[i]
                lo = int(np.searchsorted(m.failure_times, t, side="left"))
                if lo < len(m.failure_times) and m.failure_times[lo] <= t + self._horizon:
                    continue
                facts.append(self._fact(int(machine_id), t, HEALTHY_WINDOW, None, int(m.rows[i]), None))
                accepted += 1
                if accepted >= cap:
                    break
        return facts


def _sort_unique(facts: list[EpisodeFact]) -> list[EpisodeFact]:
    out: dict[str, EpisodeFact] = {}
    for f in facts:
        if f.fact_id in out:
            logger.warning("duplicate fact_id %s dropped (row %d)", f.fact_id, f.row_index)
            continue
        out[f.fact_id] = f
    return sorted(out.values(), key=lambda f: (f.asset_id, f.end_time, f.fact_id))


def extract_failure_episodes(tables: RawTables, cfg: ExtractorConfig) -> list[EpisodeFact]:
    return _sort_unique(FactExtractor(tables, cfg).failure_episodes())


def sample_healthy_episodes(tables: RawTables, cfg: ExtractorConfig) -> list[EpisodeFact]:
    return _sort_unique(FactExtractor(tables, cfg).healthy_episodes())


def extract_facts(tables: RawTables, cfg: ExtractorConfig, kg: KnowledgeGraph | None = None) -> list[EpisodeFact]:
    """Failure and healthy episodes, enriched when a KG is given, in output order."""
    ex = FactExtractor(tables, cfg)
    facts = _sort_unique(ex.failure_episodes() + ex.healthy_episodes())
    if kg is not None:
        facts = [enrich_with_kg(f, kg) for f in facts]
    logger.info("extracted %d facts (%d failure windows)", len(facts), sum(f.is_failure for f in facts))
    return facts


def machine_model(fact: EpisodeFact) -> str | None:
    for f in fact.features:
        if f.name.startswith("model_") and f.value == 1.0:
            return f.name[len("model_"):]
    return None


def enrich_with_kg(fact: EpisodeFact, kg: KnowledgeGraph) -> EpisodeFact:
    model = machine_model(fact)
    asset = kg.asset_profile(model) if model else None
    profile = None
    if fact.is_failure:
        fp = kg.failure_profile(fact.label, model)
        profile = fp.to_fact_json() if fp else None
    sensors = []
    for sensor in fact.sensors():
        desc = kg.sensor_description(sensor)
        if desc is not None:
            sensors.append({"sensor_name": sensor, "description": desc})
    return replace(
        fact,
        asset_profile=asset.to_dict() if asset else None,
        failure_profile=profile,
        sensor_profiles=sensors or None,
    )
