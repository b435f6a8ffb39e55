from __future__ import annotations

import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asseteqa.kg import (
    KgError,
    KnowledgeGraph,
    bundled_kg_path,
    dump_kg,
    failure_profile,
    load_kg,
    normalize_label,
    validate_kg,
)


def _write(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return path


def test_bundled_counts(kg):
    rep = validate_kg(kg)
    assert rep.n_entities == 210
    assert rep.n_relations == 1004
    assert rep.dangling == []
    assert rep.duplicate_ids == []
    assert rep.ok
    assert len(kg.failure_modes()) == 63
    assert rep.entities_by_kind["asset_category"] == 9


def test_empty_graph(tmp_path):
    kg = load_kg(_write(tmp_path / "empty.jsonl", []))
    assert len(kg) == 0
    rep = validate_kg(kg)
    assert rep.ok and rep.n_entities == 0 and rep.n_relations == 0


def test_dangling_relation_names_missing_id(tmp_path):
    path = _write(
        tmp_path / "g.jsonl",
        [
            {"record": "entity", "id": "c1", "kind": "component", "name": "bearing"},
            {"record": "relation", "subject": "c1", "predicate": "component_of", "object": "ghost"},
        ],
    )
    with pytest.raises(KgError, match="ghost"):
        load_kg(path)
    rep = validate_kg(load_kg(path, strict=False))
    assert [r.object for r in rep.dangling] == ["ghost"]


@pytest.mark.parametrize(
    "record, fragment",
    [
        ({"record": "entity", "id": "x", "kind": "planet", "name": "x"}, "unknown entity kind"),
        ({"record": "thing"}, "unknown record type"),
        ({"record": "relation", "subject": "a"}, "missing field"),
    ],
)
def test_bad_records_have_locator(tmp_path, record, fragment):
    path = _write(tmp_path / "bad.jsonl", [record])
    with pytest.raises(KgError, match=fragment) as err:
        load_kg(path)
    assert "bad.jsonl:1" in str(err.value)


def test_invalid_json_and_duplicates(tmp_path):
    p = tmp_path / "x.jsonl"
    p.write_text('{"record": "entity", "id": "a", "kind": "sensor", "name": "a"}\n{oops\n', encoding="utf-8")
    with pytest.raises(KgError, match=r"x\.jsonl:2"):
        load_kg(p)
    ent = {"record": "entity", "id": "a", "kind": "sensor", "name": "a"}
    with pytest.raises(KgError, match="duplicate entity id"):
        load_kg(_write(tmp_path / "d.jsonl", [ent, ent]))


def test_self_loop_is_cycle_warning(tmp_path):
    path = _write(
        tmp_path / "loop.jsonl",
        [
            {"record": "entity", "id": "c1", "kind": "component", "name": "c"},
            {"record": "relation", "subject": "c1", "predicate": "component_of", "object": "c1"},
        ],
    )
    rep = validate_kg(load_kg(path))
    assert rep.cycle_warnings == [["c1", "c1"]]


def test_unknown_predicate_preserved(tmp_path):
    path = _write(
        tmp_path / "p.jsonl",
        [
            {"record": "entity", "id": "a", "kind": "sensor", "name": "a"},
            {"record": "entity", "id": "b", "kind": "sensor", "name": "b"},
            {"record": "relation", "subject": "a", "predicate": "correlates_with", "object": "b"},
        ],
    )
    kg = load_kg(path)
    assert kg.objects("a", "correlates_with") == ["b"]
    assert not kg.relations[0].known_predicate


@pytest.mark.parametrize("seed", range(5))
def test_perturbed_fixture_dangling_matches_brute_force(tmp_path, seed):
    lines = bundled_kg_path().read_text(encoding="utf-8").splitlines()
    records = [json.loads(line) for line in lines if line.strip()]
    ids = [r["id"] for r in records if r["record"] == "entity"]
    dropped = set(random.Random(seed).sample(ids, 5))
    kept = [r for r in records if not (r["record"] == "entity" and r["id"] in dropped)]
    kg = load_kg(_write(tmp_path / "p.jsonl", kept), strict=False)
    literal = {"description", "alias"}
    expected = sorted(
        (r["subject"], r["predicate"], r["object"])
        for r in records
        if r["record"] == "relation"
        and (r["subject"] in dropped or (r["predicate"] not in literal and r["object"] in dropped))
    )
    got = sorted((r.subject, r.predicate, r.object) for r in validate_kg(kg).dangling)
    assert got == expected and got


def test_failure_profile_comp3(kg):
    fp = failure_profile(kg, "comp3", "model1")
    assert fp is not None
    assert fp.failure_label == "comp3"
    assert fp.severity == "very_high"
    assert fp.associated_sensors == ["vibration"]
    assert failure_profile(kg, "nonexistent_mode") is None
    alias = failure_profile(kg, "Rotor / bearing vibration fault")
    assert alias is not None and alias.failure_label == "comp3"
    assert alias.associated_sensors == fp.associated_sensors and alias.severity == fp.severity


def test_failure_profile_comp4_sensors(kg):
    fp = failure_profile(kg, "comp4", "model3")
    assert set(fp.associated_sensors) == {"vibration", "rotate"}


def test_profile_labels_fixed_under_normalize(kg):
    for mode in kg.failure_modes():
        fp = kg.profile_of(mode)
        assert normalize_label(kg, fp.failure_label) == fp.failure_label


@pytest.mark.parametrize(
    "raw, canonical",
    [("Comp3 ", "comp3"), ("Rotor / bearing vibration fault", "comp3"), ("healthy", "healthy"), ("  HeAlThy", "healthy")],
)
def test_normalize_examples(kg, raw, canonical):
    assert normalize_label(kg, raw) == canonical


def test_normalize_without_kg_folds():
    assert normalize_label(None, "  Comp3\t") == "comp3"


@settings(max_examples=300, deadline=None)
@given(st.text(max_size=40))
def test_normalize_idempotent(text):
    kg = _KG
    once = normalize_label(kg, text)
    assert normalize_label(kg, once) == once


def test_normalize_idempotent_on_display_names(kg):
    for mode in kg.failure_modes():
        once = normalize_label(kg, mode.name)
        assert normalize_label(kg, once) == once


def test_roundtrip_identity(kg, tmp_path):
    path = tmp_path / "dump.jsonl"
    dump_kg(kg, path)
    again = load_kg(path)
    assert again == kg
    # order independence: shuffled lines give the same graph
    lines = path.read_text(encoding="utf-8").splitlines()
    random.Random(3).shuffle(lines)
    shuffled = tmp_path / "shuffled.jsonl"
    shuffled.write_text("\n".join(lines) + "\n", encoding="utf-8")
    assert load_kg(shuffled) == kg


def test_asset_and_sensor_lookups(kg):
    asset = kg.asset_profile("model1")
    assert asset is not None and asset.asset_name
    assert asset.to_dict()["equipment_class_type"]
    assert kg.sensor_description("vibration")
    assert kg.sensor_description("no_such_sensor") is None


_KG: KnowledgeGraph = load_kg(bundled_kg_path())
