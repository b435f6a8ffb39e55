from __future__ import annotations

import csv
import math
from dataclasses import replace

import pytest

from asseteqa.facts import NamedFeature, write_facts
from asseteqa.store import EpisodicStore, StoreError, to_numeric

from oracles import random_threshold_queries, random_time_ranges, scan_threshold, scan_time_range

LISTING_ID = "pdm_m56_comp3_2015-01-02T03"


@pytest.fixture
def mini_store(mini_facts, tmp_path):
    path = tmp_path / "facts.jsonl"
    write_facts(mini_facts, path)
    store = EpisodicStore(tmp_path / "s.db")
    assert store.ingest_jsonl(path) == len(mini_facts)
    yield store
    store.close()


@pytest.fixture(scope="module")
def synth_store(synth_facts):
    store = EpisodicStore()
    store.ingest_facts(synth_facts)
    yield store
    store.close()


def test_lookup_listing_fact(mini_store, mini_facts):
    got = mini_store.get_fact(LISTING_ID)
    assert got is not None and got.label == "comp3"
    assert got == next(f for f in mini_facts if f.fact_id == LISTING_ID)
    assert mini_store.get_fact("nope") is None
    assert "machine_56" in mini_store.list_assets()


def test_roundtrip_every_fact(synth_store, synth_facts):
    for f in synth_facts:
        assert synth_store.get_fact(f.fact_id) == f


def test_machine_age_equality(mini_store):
    assert LISTING_ID in mini_store.search_by_feature_threshold("machine_age", "=", 10)


def test_vibration_max_threshold(mini_store, mini_facts):
    assert mini_store.search_by_feature_threshold("vibration_max", ">", 60) == scan_threshold(
        mini_facts, "vibration_max", ">", 60
    )


def test_threshold_queries_match_scan(synth_store, synth_facts):
    for name, op, value in random_threshold_queries(synth_facts, 1000, seed=11):
        assert synth_store.search_by_feature_threshold(name, op, value) == scan_threshold(synth_facts, name, op, value)


def test_time_range_queries_match_scan(synth_store, synth_facts):
    for asset, lo, hi in random_time_ranges(synth_facts, 200, seed=5):
        assert synth_store.query_by_time_range(asset, lo, hi) == scan_time_range(synth_facts, asset, lo, hi)


def test_unknown_operator_and_inverted_range(mini_store):
    with pytest.raises(ValueError, match="unknown operator"):
        mini_store.search_by_feature_threshold("volt_mean", "~", 1)
    with pytest.raises(ValueError, match="inverted"):
        mini_store.query_by_time_range("machine_56", "2015-01-03 00:00:00", "2015-01-01 00:00:00")


def test_unicode_operator_aliases(mini_store):
    assert mini_store.search_by_feature_threshold("volt_mean", "≥", 0) == mini_store.search_by_feature_threshold(
        "volt_mean", ">=", 0
    )


def test_double_ingest_idempotent(mini_store, mini_facts, tmp_path):
    before = (mini_store.count("facts"), mini_store.count("features"))
    path = tmp_path / "again.jsonl"
    write_facts(mini_facts, path)
    mini_store.ingest_jsonl(path)
    assert (mini_store.count("facts"), mini_store.count("features")) == before
    assert mini_store.ingest_jsonl(path, overwrite=False) == 0


def test_ingest_time_pinned(mini_store):
    assert mini_store.facts_row(LISTING_ID)["ingest_time"] == "2023-11-14 22:13:20"


def test_feature_rows_per_fact(mini_facts):
    base = mini_facts[0]
    fact = replace(base, fact_id="x25", features=[NamedFeature(f"f{i}", float(i)) for i in range(25)])
    with EpisodicStore() as store:
        store.ingest_facts([fact])
        assert store.count("features") == 25
        assert len(store.get_features("x25")) == 25


def test_text_fallback_and_null_values(mini_facts):
    base = mini_facts[0]
    fact = replace(
        base,
        fact_id="odd",
        features=[NamedFeature("a", "n/a"), NamedFeature("b", None), NamedFeature("c", "2.5e1"), NamedFeature("d", 1.5)],
    )
    with EpisodicStore() as store:
        store.ingest_facts([fact])
        assert store.get_features("odd") == {"a": "n/a", "b": None, "c": 25.0, "d": 1.5}
        # text and null never satisfy a numeric comparison
        assert store.search_by_feature_threshold("a", ">", -1e300) == []
        assert store.search_by_feature_threshold("b", "<", 1e300) == []
        assert store.search_by_feature_threshold("c", "=", 25) == ["odd"]


def test_infinite_bound_is_vacuous(synth_store, synth_facts):
    for name in ("volt_mean", "hours_since_last_maint_comp1", "machine_age"):
        want = sorted(f.fact_id for f in synth_facts if f.feature(name) is not None)
        assert synth_store.search_by_feature_threshold(name, "<", math.inf) == want


def test_time_range_examples(synth_store, synth_facts):
    f = synth_facts[0]
    assert f.fact_id in synth_store.query_by_time_range(f.asset_id, f.start_time, f.end_time)
    assert synth_store.query_by_time_range(f.asset_id, "1990-01-01 00:00:00", "1990-01-02 00:00:00") == []


def test_label_query_on_all_failure_store(mini_facts):
    with EpisodicStore() as store:
        store.ingest_facts([f for f in mini_facts if f.is_failure])
        assert store.query_by_label("healthy", 10) == []


@pytest.mark.parametrize(
    "value, expected",
    [(1, 1.0), ("2.5e3", 2500.0), (" -4 ", -4.0), ("inf", None), (math.nan, None), (True, None), ("abc", None), (None, None)],
)
def test_to_numeric(value, expected):
    assert to_numeric(value) == expected


def test_export_roundtrip(synth_store, tmp_path):
    out = tmp_path / "features.csv"
    n = synth_store.export_features_csv(out)
    assert n == synth_store.count("facts")
    with open(out, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0])[:3] == ["fact_id", "label", "asset_id"]
    for row in rows:
        feats = synth_store.get_features(row["fact_id"])
        for name, cell in row.items():
            if name in ("fact_id", "label", "asset_id"):
                continue
            want = feats.get(name)
            assert (float(cell) if cell != "" else None) == want


def test_malformed_lines_skipped(tmp_path, mini_facts):
    path = tmp_path / "mixed.jsonl"
    good = mini_facts[0].to_json()
    path.write_text(f"{good}\nnot json\n{{\"fact_id\": \"x\"}}\n\n", encoding="utf-8")
    with EpisodicStore() as store:
        assert store.ingest_jsonl(path) == 1
        assert [ln for ln, _ in store.last_skipped] == [2, 3]
        assert "KeyError" in store.last_skipped[1][1]


def test_label_queries_and_sample(synth_store, synth_facts):
    healthy = sorted(f.fact_id for f in synth_facts if f.label == "healthy")
    assert synth_store.query_by_label("healthy") == healthy
    assert synth_store.query_by_label("healthy", limit=3) == healthy[:3]
    with pytest.raises(ValueError):
        synth_store.query_by_label("healthy", limit=0)
    sample = synth_store.balanced_sample(2)
    labels = sorted({f.label for f in synth_facts})
    assert len(sample) == 2 * len(labels)


def test_count_rejects_unknown_table(synth_store):
    with pytest.raises(ValueError):
        synth_store.count("sqlite_master")


def test_export_unwritable_path(synth_store, tmp_path):
    with pytest.raises(StoreError):
        synth_store.export_features_csv(tmp_path / "missing_dir" / "x.csv")
