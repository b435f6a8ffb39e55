"""Seeded generator for PdM-schema telemetry tables.

Component ``c`` of a machine fails once the hours since its last
maintenance exceed ``threshold[c]`` plus a fresh uniform jitter; the failed
part is replaced (a maintenance row at the failure instant) and the clock
restarts. Occasional preventive maintenance also resets the clock. During the
last ``degrade_hours`` before a failure the component's indicator sensors
drift, and error events become more frequent.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np
import pandas as pd

from .facts import TS_FORMAT

logger = logging.getLogger(__name__)

TABLE_FILES = {
    "telemetry": "PdM_telemetry.csv",
    "failures": "PdM_failures.csv",
    "errors": "PdM_errors.csv",
    "maint": "PdM_maint.csv",
    "machines": "PdM_machines.csv",
}


@dataclass(frozen=True)
class SensorSpec:
    mean: float
    noise: float


def _default_sensors() -> dict[str, SensorSpec]:
    return {
        "volt": SensorSpec(170.0, 15.0),
        "rotate": SensorSpec(450.0, 50.0),
        "pressure": SensorSpec(100.0, 10.0),
        "vibration": SensorSpec(40.0, 5.0),
    }


def _default_thresholds() -> dict[str, float]:
    return {"comp1": 600.0, "comp2": 750.0, "comp3": 900.0, "comp4": 1050.0}


def _default_drift() -> dict[str, dict[str, float]]:
    # shift applied at full strength at the failure instant, ramping up linearly
    return {
        "comp1": {"volt": 12.0},
        "comp2": {"rotate": -45.0},
        "comp3": {"vibration": 6.0},
        "comp4": {"rotate": -30.0, "vibration": 4.0},
    }


@dataclass(frozen=True)
class SyntheticSpec:
    n_machines: int = 10
    hours: int = 2880
    start: str = "2015-01-01 06:00:00"
    seed: int = 7
    sensors: dict[str, SensorSpec] = field(default_factory=_default_sensors)
    thresholds: dict[str, float] = field(default_factory=_default_thresholds)
    jitter_hours: float = 240.0
    drift: dict[str, dict[str, float]] = field(default_factory=_default_drift)
    degrade_hours: int = 24
    preventive_rate: float = 1.0 / 2500.0
    error_rate: float = 0.004
    degraded_error_rate: float = 0.06
    n_error_types: int = 5
    models: tuple[str, ...] = ("model1", "model2", "model3", "model4")
    max_age: int = 20

    def __post_init__(self) -> None:
        if self.n_machines <= 0 or self.hours <= 0:
            raise ValueError("n_machines and hours must be positive")
        if self.degrade_hours < 0 or self.jitter_hours < 0:
            raise ValueError("degrade_hours and jitter_hours must be >= 0")
        unknown = set(self.drift) - set(self.thresholds)
        if unknown:
            raise ValueError(f"drift given for unknown components: {sorted(unknown)}")


@dataclass
class SyntheticTables:
    telemetry: pd.DataFrame
    failures: pd.DataFrame
    errors: pd.DataFrame
    maint: pd.DataFrame
    machines: pd.DataFrame

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {}
        for key, fname in TABLE_FILES.items():
            path = out / fname
            getattr(self, key).to_csv(path, index=False, lineterminator="\n")
            paths[key] = path
        return paths


def _simulate_machine(spec: SyntheticSpec, rng: np.random.Generator, t0: datetime, machine_id: int):
    comps = sorted(spec.thresholds)
    # initial maintenance before the record starts, so every clock is defined
    since = {c: float(rng.integers(0, int(spec.thresholds[c]))) for c in comps}
    limit = {c: spec.thresholds[c] + rng.uniform(0, spec.jitter_hours) for c in comps}
    maint = [(t0 - timedelta(hours=since[c]), machine_id, c) for c in comps]
    failures: list[tuple[int, str]] = []
    for h in range(spec.hours):
        over = [(since[c] - limit[c], c) for c in comps if since[c] > limit[c]]
        if over:
            _, comp = max(over)
            failures.append((h, comp))
            maint.append((t0 + timedelta(hours=h), machine_id, comp))
            since[comp] = 0.0
            limit[comp] = spec.thresholds[comp] + rng.uniform(0, spec.jitter_hours)
        for c in comps:
            if since[c] > 0 and rng.random() < spec.preventive_rate:
                maint.append((t0 + timedelta(hours=h), machine_id, c))
                since[c] = 0.0
        for c in comps:
            since[c] += 1.0
    return failures, maint


def generate(spec: SyntheticSpec | None = None) -> SyntheticTables:
    spec = spec or SyntheticSpec()
    rng = np.random.default_rng(spec.seed)
    t0 = datetime.strptime(spec.start, TS_FORMAT)
    sensors = list(spec.sensors)
    error_types = [f"error{i}" for i in range(1, spec.n_error_types + 1)]
    comp_error = {c: error_types[i % len(error_types)] for i, c in enumerate(sorted(spec.thresholds))}
    times = np.array([t0 + timedelta(hours=h) for h in range(spec.hours)])

    tel_parts, fail_rows, err_rows, maint_rows, machine_rows = [], [], [], [], []
    for m in range(1, spec.n_machines + 1):
        model = spec.models[int(rng.integers(0, len(spec.models)))]
        machine_rows.append((m, model, int(rng.integers(0, spec.max_age + 1))))
        failures, maint = _simulate_machine(spec, rng, t0, m)
        maint_rows.extend(maint)

        values = {s: rng.normal(spec.sensors[s].mean, spec.sensors[s].noise, spec.hours) for s in sensors}
        degraded = np.zeros(spec.hours, dtype=bool)
        degraded_comp: dict[int, str] = {}
        for h, comp in failures:
            fail_rows.append((times[h], m, comp))
            lo = max(0, h - spec.degrade_hours + 1)
            ramp = np.linspace(1.0 / (h - lo + 1), 1.0, h - lo + 1)
            for sensor, shift in spec.drift.get(comp, {}).items():
                values[sensor][lo : h + 1] += shift * ramp
            degraded[lo : h + 1] = True
            for k in range(lo, h + 1):
                degraded_comp[k] = comp

        base_hits = rng.random(spec.hours) < spec.error_rate
        base_types = rng.integers(0, len(error_types), spec.hours)
        deg_hits = rng.random(spec.hours) < spec.degraded_error_rate
        for h in range(spec.hours):
            if base_hits[h]:
                err_rows.append((times[h], m, error_types[base_types[h]]))
            elif degraded[h] and deg_hits[h]:
                err_rows.append((times[h], m, comp_error[degraded_comp[h]]))

        frame = pd.DataFrame({"datetime": times, "machineID": m})
        for s in sensors:
            frame[s] = np.round(values[s], 6)
        tel_parts.append(frame)

    def stamp(df: pd.DataFrame) -> pd.DataFrame:
        df = df.sort_values(["datetime", "machineID"], kind="mergesort").reset_index(drop=True)
        df["datetime"] = pd.to_datetime(df["datetime"]).dt.strftime(TS_FORMAT)
        return df

    telemetry = stamp(pd.concat(tel_parts, ignore_index=True))
    failures_df = stamp(pd.DataFrame(fail_rows, columns=["datetime", "machineID", "failure"]))
    errors_df = stamp(pd.DataFrame(err_rows, columns=["datetime", "machineID", "errorID"]))
    maint_df = stamp(pd.DataFrame(maint_rows, columns=["datetime", "machineID", "comp"]))
    machines_df = pd.DataFrame(machine_rows, columns=["machineID", "model", "age"])
    logger.info(
        "synthesized %d machines x %d h: %d failures, %d errors, %d maintenance rows",
        spec.n_machines, spec.hours, len(failures_df), len(errors_df), len(maint_df),
    )
    return SyntheticTables(telemetry, failures_df, errors_df, maint_df, machines_df)


def write_synthetic(out_dir: str | Path, spec: SyntheticSpec | None = None) -> dict[str, Path]:
    return generate(spec).write(out_dir)
