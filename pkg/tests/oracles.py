"""Independent brute-force recomputations used as test oracles."""

from __future__ import annotations

import math
import random
from datetime import timedelta
from fractions import Fraction
from math import comb
from pathlib import Path

import numpy as np
import pandas as pd

from asseteqa.facts import EpisodeFact, format_ts, parse_ts


def read_raw(directory: Path) -> dict[str, pd.DataFrame]:
    out = {}
    for kind in ("telemetry", "failures", "errors", "maint", "machines"):
        df = pd.read_csv(directory / f"PdM_{kind}.csv")
        if "datetime" in df.columns:
            df["datetime"] = pd.to_datetime(df["datetime"], format="mixed")
        out[kind] = df
    return out


def recompute_features(raw: dict[str, pd.DataFrame], fact: EpisodeFact, window_hours: float = 24.0) -> dict[str, float | None]:
    """Every feature of ``fact`` from a linear scan of the raw rows."""
    mid = fact.machine_id
    end = pd.Timestamp(parse_ts(fact.end_time))
    start = end - timedelta(hours=window_hours)
    out: dict[str, float | None] = {}

    tel = raw["telemetry"]
    rows = tel[(tel["machineID"] == mid) & (tel["datetime"] > start) & (tel["datetime"] <= end)]
    rows = rows.sort_values("datetime", kind="mergesort")
    sensors = [c for c in tel.columns if c not in ("datetime", "machineID")]
    for s in sensors:
        vals = [float(v) for v in rows[s] if not math.isnan(float(v))]
        n = len(vals)
        if n == 0:
            out.update({f"{s}_{k}": None for k in ("mean", "std", "min", "max", "trend")})
            continue
        mean = math.fsum(vals) / n
        out[f"{s}_mean"] = mean
        out[f"{s}_std"] = math.sqrt(math.fsum((v - mean) ** 2 for v in vals) / n)
        out[f"{s}_min"] = min(vals)
        out[f"{s}_max"] = max(vals)
        out[f"{s}_trend"] = float(np.polyfit(np.arange(n, dtype=float), vals, 1)[0]) if n >= 2 else None

    err = raw["errors"]
    werr = err[(err["machineID"] == mid) & (err["datetime"] > start) & (err["datetime"] <= end)]
    out["error_count_last_window"] = float(len(werr))
    out["distinct_error_types_last_window"] = float(werr["errorID"].astype(str).nunique())

    maint = raw["maint"]
    comps = sorted(set(maint["comp"].astype(str)) | set(raw["failures"]["failure"].astype(str)))
    for comp in comps:
        prior = maint[(maint["machineID"] == mid) & (maint["comp"].astype(str) == comp) & (maint["datetime"] < end)]
        if len(prior):
            out[f"hours_since_last_maint_{comp}"] = (end - prior["datetime"].max()).total_seconds() / 3600.0
        else:
            out[f"hours_since_last_maint_{comp}"] = -1.0

    machines = raw["machines"]
    meta = machines[machines["machineID"] == mid]
    out["machine_age"] = float(meta["age"].iloc[0])
    for model in sorted(set(machines["model"].astype(str))):
        out[f"model_{model}"] = float(str(meta["model"].iloc[0]) == model)
    return out


def close(a: float | None, b: float | None, rel: float = 1e-9, abs_tol: float = 1e-9) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return math.isclose(a, b, rel_tol=rel, abs_tol=abs_tol)


def mcnemar_exact_bruteforce(b: int, c: int) -> Fraction:
    """Two-sided exact binomial p with exact rational arithmetic."""
    n = b + c
    k = min(b, c)
    tail = sum(Fraction(comb(n, i), 2**n) for i in range(k + 1))
    return min(Fraction(1), 2 * tail)


# -- store query oracles ------------------------------------------------------------

_OPS = {
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    "=": lambda a, b: a == b,
    ">=": lambda a, b: a >= b,
    ">": lambda a, b: a > b,
}


def scan_threshold(facts, name: str, op: str, value: float) -> list[str]:
    out = []
    for f in facts:
        v = f.feature_map().get(name)
        if isinstance(v, (int, float)) and math.isfinite(v) and _OPS[op](float(v), value):
            out.append(f.fact_id)
    return sorted(out)


def scan_time_range(facts, asset_id: str, lo: str, hi: str) -> list[str]:
    return sorted(f.fact_id for f in facts if f.asset_id == asset_id and f.start_time <= hi and f.end_time >= lo)


def random_threshold_queries(facts, n: int, seed: int):
    """(name, op, value) triples; a third reuse an exact stored value so '=' is exercised."""
    rng = random.Random(seed)
    names = sorted({feat.name for f in facts for feat in f.features})
    for _ in range(n):
        name = rng.choice(names)
        op = rng.choice(sorted(_OPS))
        stored = [v for f in facts if (v := f.feature_map().get(name)) is not None]
        if stored and rng.random() < 0.35:
            value = float(rng.choice(stored))
        elif stored:
            lo, hi = min(stored), max(stored)
            value = rng.uniform(lo - 1.0, hi + 1.0)
        else:
            value = rng.uniform(-10, 10)
        yield name, op, value


def random_time_ranges(facts, n: int, seed: int):
    rng = random.Random(seed)
    assets = sorted({f.asset_id for f in facts})
    starts = sorted(parse_ts(f.start_time) for f in facts)
    t_min, t_max = starts[0] - timedelta(hours=48), starts[-1] + timedelta(hours=48)
    span = int((t_max - t_min).total_seconds() // 3600)
    for _ in range(n):
        a = t_min + timedelta(hours=rng.randrange(span))
        b = a + timedelta(hours=rng.randrange(0, 24 * 14))
        yield rng.choice(assets), format_ts(a), format_ts(b)
