"""Write the 100-row PdM-schema fixture used by the extractor tests.

    python3 scripts/make_pdm_fixture.py tests/fixtures/pdm_mini

Machine 56's 24 volt samples before its comp3 failure are solved for so the
window statistics come out at mean 169.0608, std 17.8556, min 139.2351,
max 209.8819 and trend 0.2177 (4-decimal agreement).
"""

from __future__ import annotations

import sys
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.optimize import least_squares

TARGET = {"mean": 169.0608, "std": 17.8556, "min": 139.2351, "max": 209.8819, "trend": 0.2177}


def solve_volt_window(rng: np.random.Generator, n: int = 24) -> np.ndarray:
    lo, hi = TARGET["min"], TARGET["max"]
    i_min, i_max = 5, 19
    free = [i for i in range(n) if i not in (i_min, i_max)]
    x = np.arange(n, dtype=float)

    def assemble(z: np.ndarray) -> np.ndarray:
        v = np.empty(n)
        v[free] = z
        v[i_min], v[i_max] = lo, hi
        return v

    def resid(z: np.ndarray) -> np.ndarray:
        v = assemble(z)
        dx = x - x.mean()
        slope = dx @ (v - v.mean()) / (dx @ dx)
        return np.array([v.mean() - TARGET["mean"], v.std() - TARGET["std"], slope - TARGET["trend"]])

    z0 = rng.normal(TARGET["mean"], TARGET["std"], len(free)).clip(lo + 1, hi - 1)
    sol = least_squares(resid, z0, bounds=(lo + 0.5, hi - 0.5), xtol=1e-15, ftol=1e-15, gtol=1e-15)
    v = assemble(sol.x)
    assert np.max(np.abs(resid(sol.x))) < 1e-7, resid(sol.x)
    return v


def _scale_to_mean(v: np.ndarray, mean: float) -> np.ndarray:
    return v - v.mean() + mean


def main(out: str) -> None:
    rng = np.random.default_rng(56)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []

    # machine 56: 50 hourly samples ending at the failure instant
    end56 = datetime(2015, 1, 2, 3)
    times56 = [end56 - timedelta(hours=49 - k) for k in range(50)]
    volt = rng.normal(170, 15, 50)
    rotate = rng.normal(450, 45, 50)
    pressure = rng.normal(100, 10, 50)
    vibration = rng.normal(40, 5, 50)
    volt[26:] = solve_volt_window(rng)
    pressure[26:] = _scale_to_mean(pressure[26:] + 24, 124.67)
    vibration[26:] = _scale_to_mean(vibration[26:], 39.2568)
    for k, t in enumerate(times56):
        rows.append((t, 56, volt[k], rotate[k], pressure[k], vibration[k]))

    # machine 73: 50 samples ending at its comp4 failure
    end73 = datetime(2015, 2, 16, 6)
    for k in range(50):
        t = end73 - timedelta(hours=49 - k)
        drift = max(0, k - 30) * 0.4
        rows.append((t, 73, rng.normal(170, 13), rng.normal(446 - 2 * drift, 60),
                     rng.normal(100, 10), rng.normal(45 + drift, 6)))

    tel = pd.DataFrame(rows, columns=["datetime", "machineID", "volt", "rotate", "pressure", "vibration"])
    tel["datetime"] = tel["datetime"].dt.strftime("%Y-%m-%d %H:%M:%S")
    tel.to_csv(out_dir / "PdM_telemetry.csv", index=False)

    pd.DataFrame(
        [("2015-01-02 03:00:00", 56, "comp3"), ("2015-02-16 06:00:00", 73, "comp4")],
        columns=["datetime", "machineID", "failure"],
    ).to_csv(out_dir / "PdM_failures.csv", index=False)
    pd.DataFrame(
        [
            ("2014-12-31 05:00:00", 56, "error2"),
            ("2015-01-01 10:00:00", 56, "error1"),
            ("2015-01-01 20:00:00", 56, "error3"),
            ("2015-02-15 18:00:00", 73, "error4"),
        ],
        columns=["datetime", "machineID", "errorID"],
    ).to_csv(out_dir / "PdM_errors.csv", index=False)
    pd.DataFrame(
        [
            ("2014-10-17 06:00:00", 56, "comp4"),
            ("2014-11-16 06:00:00", 56, "comp2"),
            ("2014-12-01 06:00:00", 56, "comp1"),
            ("2014-12-13 06:00:00", 56, "comp3"),
            ("2015-01-02 03:00:00", 56, "comp3"),
            ("2014-07-01 06:00:00", 73, "comp4"),
            ("2014-09-15 06:00:00", 73, "comp1"),
            ("2015-02-16 06:00:00", 73, "comp4"),
        ],
        columns=["datetime", "machineID", "comp"],
    ).to_csv(out_dir / "PdM_maint.csv", index=False)
    pd.DataFrame([(56, "model1", 10), (73, "model2", 20)], columns=["machineID", "model", "age"]).to_csv(
        out_dir / "PdM_machines.csv", index=False
    )


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "tests/fixtures/pdm_mini")
