from __future__ import annotations

import csv
import hashlib
import json

import pytest
from scipy.stats import binomtest

from asseteqa.answerer import FaultBackend, FaultSpec, OracleBackend
from asseteqa.harness import (
    ABLATION_ROWS,
    BASELINE_ROWS,
    MAX_ATTEMPTS,
    PRESETS,
    cf_tasks_only,
    get_preset,
    run_config,
    write_records,
)
from asseteqa.metrics import MetricRecord, full_pass_of
from asseteqa.reporting import CSV_HEADER, load_aggregate, plot_reports, render_markdown, write_csv
from asseteqa.verifier import IncidentLog, replay_incidents


@pytest.fixture(scope="module")
def oracle(synth_corpus):
    return OracleBackend(synth_corpus, seed=0)


@pytest.fixture(scope="module")
def full_run(synth_corpus, fact_index, oracle, kg, synth_model):
    return run_config(synth_corpus, fact_index, oracle, "full", kg, synth_model)


def in_ci(k: int, n: int, p: float) -> bool:
    ci = binomtest(k, n).proportion_ci(0.95)
    return ci.low <= p <= ci.high


def test_presets_cover_tables():
    assert set(BASELINE_ROWS) | set(ABLATION_ROWS) == set(PRESETS)
    assert get_preset("full").prompt_options.include_simulator
    llm = get_preset("llm_only")
    assert not (llm.include_episodic or llm.include_kg or llm.enforce_provenance or llm.include_simulator)
    with pytest.raises(ValueError, match="unknown preset"):
        get_preset("turbo")


def test_full_oracle_is_perfect(full_run):
    agg, records = full_run
    assert agg.metric("struct_ok") == 1.0 and agg.metric("prov_ok") == 1.0
    assert agg.metric("label_consistent") == 1.0 and agg.metric("cf_direction_ok") == 1.0
    assert agg.metric("temporal_ok") == 1.0 and agg.metric("value_ok") == 1.0
    assert agg.full_pass == 1.0
    assert agg.outcomes == {"admit": len(records)}
    assert all(r.attempts == 1 for r in records)


def test_full_pass_recomputable(full_run, synth_corpus, fact_index, kg, synth_model):
    for preset in ("full", "llm_only", "no_episodic"):
        agg, records = run_config(synth_corpus[::7], fact_index, OracleBackend(synth_corpus), preset, kg, synth_model)
        assert (agg.full_pass, agg.full_pass_strict, agg.n_diagnostic) == full_pass_of(records)
        for name, m in agg.metrics.items():
            vals = [getattr(r, name) for r in records if getattr(r, name) is not None]
            assert m["n"] == len(vals)
            assert m["mean"] == (sum(map(float, vals)) / len(vals) if vals else None)


def test_bad_fact_id_rate_without_retries(synth_corpus, fact_index, oracle, kg, synth_model):
    spec = FaultSpec("bad_fact_id", 0.3, seed=0)
    fb = FaultBackend(oracle, spec)
    agg, records = run_config(synth_corpus, fact_index, fb, "no_provenance", kg, synth_model)
    n = len(records)
    corrupted = sum(fb.corrupts(r.qa_id, 0) for r in records)
    # each failing record is exactly one corrupted draw
    assert [r.qa_id for r in records if not r.prov_ok] == sorted(r.qa_id for r in records if fb.corrupts(r.qa_id, 0))
    assert agg.metric("prov_ok") == (n - corrupted) / n
    assert in_ci(n - corrupted, n, 0.7)


def test_retry_loop_recovers(synth_corpus, fact_index, oracle, kg, synth_model):
    fb = FaultBackend(oracle, FaultSpec("bad_fact_id", 0.3, seed=0))
    agg, records = run_config(synth_corpus, fact_index, fb, "full", kg, synth_model)
    fails = [r for r in records if not r.prov_ok]
    expected = [r.qa_id for r in records if all(fb.corrupts(r.qa_id, a) for a in range(MAX_ATTEMPTS))]
    assert sorted(r.qa_id for r in fails) == sorted(expected)
    assert all(r.attempts == MAX_ATTEMPTS for r in fails)
    assert agg.metric("prov_ok") > 0.95


def test_no_simulator_is_coin_flip(synth_corpus, fact_index, oracle, kg, synth_model):
    cf = cf_tasks_only(synth_corpus)
    agg, records = run_config(cf, fact_index, oracle, "no_simulator", kg, synth_model)
    n = agg.metrics["cf_direction_ok"]["n"]
    k = sum(bool(r.cf_direction_ok) for r in records)
    assert n == len(cf) and in_ci(k, n, 0.5)


def test_llm_only_cannot_cite(synth_corpus, fact_index, oracle, kg, synth_model):
    agg, _ = run_config(synth_corpus[::5], fact_index, oracle, "llm_only", kg, synth_model)
    assert agg.metric("struct_ok") == 1.0 and agg.metric("prov_ok") == 0.0
    assert agg.full_pass == pytest.approx(2 / 3)


def test_non_json_backend(synth_corpus, fact_index, oracle, kg, synth_model):
    fb = FaultBackend(oracle, FaultSpec("non_json", 1.0))
    agg, records = run_config(synth_corpus[::11], fact_index, fb, "full", kg, synth_model)
    assert agg.metric("struct_ok") == 0.0 and agg.full_pass == 0.0
    assert "admit" not in agg.outcomes
    assert all(r.attempts == MAX_ATTEMPTS for r in records)


def test_backend_exception_recorded(synth_corpus, fact_index, kg):
    class Broken:
        name = "broken"

        def answer(self, prompt, attempt=0):
            raise TimeoutError("slow")

    agg, records = run_config(synth_corpus[:5], fact_index, Broken(), "episodic", kg)
    assert agg.metric("struct_ok") == 0.0
    assert all("STRUCT" in r.issues for r in records)


def test_missing_fact_raises(synth_corpus, oracle):
    with pytest.raises(KeyError):
        run_config(synth_corpus[:1], {}, oracle, "full")


def test_run_is_deterministic(synth_corpus, fact_index, oracle, kg, synth_model):
    fb = FaultBackend(oracle, FaultSpec("ghost_feature", 0.4, seed=5))
    a = run_config(synth_corpus[::3], fact_index, fb, "no_provenance", kg, synth_model)
    b = run_config(synth_corpus[::3], fact_index, fb, "no_provenance", kg, synth_model)
    assert a[0].to_dict() == b[0].to_dict()
    assert [r.to_dict() for r in a[1]] == [r.to_dict() for r in b[1]]


def test_incident_log_counts_match_outcomes(synth_corpus, fact_index, oracle, kg, synth_model, tmp_path):
    log = IncidentLog(tmp_path / "inc.jsonl")
    fb = FaultBackend(oracle, FaultSpec("wrong_row", 0.5, seed=1))
    agg, _ = run_config(synth_corpus[::4], fact_index, fb, "no_provenance", kg, synth_model, incident_log=log)
    replay = replay_incidents(tmp_path / "inc.jsonl")
    assert dict(replay) == {k: v for k, v in agg.outcomes.items() if k != "admit"}


def test_write_records(full_run, tmp_path):
    _, records = full_run
    path = tmp_path / "records.jsonl"
    assert write_records(records, path) == len(records)
    back = [MetricRecord.from_dict(json.loads(ln)) for ln in path.read_text(encoding="utf-8").splitlines()]
    assert back == records


# -- reporting ----------------------------------------------------------------------


@pytest.fixture(scope="module")
def reports(synth_corpus, fact_index, oracle, kg, synth_model):
    sub = synth_corpus[::9]
    return [run_config(sub, fact_index, oracle, p, kg, synth_model)[0] for p in ("full", "no_kg", "llm_only")]


def test_csv(reports, tmp_path):
    path = tmp_path / "r.csv"
    write_csv(reports, path)
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == list(CSV_HEADER)
    assert [r[0] for r in rows[1:]] == ["full", "no_kg", "llm_only"]
    full = dict(zip(rows[0], rows[1]))
    assert full["prov_ok"] == "1.000000" and full["full_pass"] == "1.000000"


def test_markdown(reports):
    md = render_markdown(reports, {"llm_only": {"diagnostic": {"b": 3, "c": 0, "p_value": 0.25}}}, "report.png")
    assert "| full |" in md and "Full Pass" in md and "![Metrics by configuration](report.png)" in md
    assert "| llm_only | diagnostic | 3 | 0 | 0.25 |" in md
    assert "n/a" not in md.split("## Gate")[0].splitlines()[4]


def test_png_deterministic(reports, tmp_path):
    a, b = tmp_path / "a.png", tmp_path / "b.png"
    plot_reports(reports, a)
    plot_reports(reports, b)
    assert a.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    assert hashlib.sha256(a.read_bytes()).digest() == hashlib.sha256(b.read_bytes()).digest()


def test_aggregate_json_roundtrip(reports, tmp_path):
    path = tmp_path / "agg.json"
    path.write_text(json.dumps(reports[0].to_dict()), encoding="utf-8")
    assert load_aggregate(path) == reports[0]
