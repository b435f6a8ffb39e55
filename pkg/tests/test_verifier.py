from __future__ import annotations

from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asseteqa.answerer import (
    CORRUPTIONS,
    AnswerEnvelope,
    FaultBackend,
    FaultSpec,
    OracleBackend,
    StructuralFailure,
    parse_answer,
)
from asseteqa.prompts import build_prompt
from asseteqa.risk import DECREASE, INCREASE, NO_CHANGE
from asseteqa.store import EpisodicStore
from asseteqa.verifier import (
    ADMIT,
    FLAG,
    REVIEW,
    GatePolicy,
    IncidentLog,
    VerifierReport,
    envelope_direction,
    gate,
    predicted_label,
    replay_incidents,
    text_direction,
    verify,
)


def envelope(**kw) -> AnswerEnvelope:
    base = dict(direct_answer="x", reasoning_answer="y", provenance={}, confidence=0.9)
    base.update(kw)
    return AnswerEnvelope(**base)


def gold_envelope(qa, **prov) -> AnswerEnvelope:
    p = {"fact_id": qa.fact_id, "features": list(qa.cited_features), "file": qa.provenance["file"], "row": qa.provenance["row"]}
    p.update(prov)
    cf = None
    if qa.counterfactual is not None:
        cf = {k: qa.counterfactual[k] for k in ("risk_before", "risk_after", "direction")}
    return envelope(direct_answer=qa.direct_answer, provenance=p, counterfactual=cf, label=qa.label)


@pytest.fixture(scope="module")
def oracle(synth_corpus):
    return OracleBackend(synth_corpus)


@pytest.fixture(scope="module")
def diag_qa(synth_corpus):
    return next(q for q in synth_corpus if q.task_type == "diagnostic" and q.label != "healthy")


@pytest.fixture(scope="module")
def cf_qa(synth_corpus):
    return next(q for q in synth_corpus if q.task_type == "counterfactual" and q.counterfactual["direction"] == DECREASE)


def test_oracle_answers_all_pass_and_admit(oracle, synth_corpus, fact_index, kg):
    for qa in synth_corpus:
        p = build_prompt(fact_index[qa.fact_id], qa)
        report = verify(parse_answer(oracle.answer(p)), qa, fact_index, kg)
        assert report.all_ok, (qa.qa_id, report.codes)
        assert gate(report).outcome == ADMIT


def test_store_and_mapping_agree(synth_corpus, synth_facts, fact_index, kg, oracle):
    with EpisodicStore() as store:
        store.ingest_facts(synth_facts)
        for qa in synth_corpus[::29]:
            env = parse_answer(oracle.answer(build_prompt(fact_index[qa.fact_id], qa)))
            assert verify(env, qa, store, kg).to_dict() == verify(env, qa, fact_index, kg).to_dict()


def test_ghost_feature_locator(diag_qa, fact_index, kg):
    env = gold_envelope(diag_qa)
    env.provenance["features"] = list(env.provenance["features"]) + ["ghost_feature"]
    r = verify(env, diag_qa, fact_index, kg)
    assert not r.prov_ok
    i = len(diag_qa.cited_features)
    assert [x.locator for x in r.issues] == [f"provenance.features[{i}]=ghost_feature"]


@pytest.mark.parametrize(
    "prov, code",
    [
        ({"fact_id": None}, "PROV_NO_FACT_ID"),
        ({"fact_id": "nope"}, "PROV_FACT_MISSING"),
        ({"row": 99999}, "PROV_ROW_MISMATCH"),
        ({"file": "other.csv"}, "PROV_FILE_MISMATCH"),
    ],
)
def test_provenance_codes(diag_qa, fact_index, kg, prov, code):
    r = verify(gold_envelope(diag_qa, **prov), diag_qa, fact_index, kg)
    assert not r.prov_ok and code in r.codes
    assert gate(r).outcome == REVIEW


def test_cited_other_existing_fact(diag_qa, fact_index, kg):
    other = next(fid for fid in fact_index if fid != diag_qa.fact_id)
    r = verify(gold_envelope(diag_qa, fact_id=other, row=fact_index[other].row_index), diag_qa, fact_index, kg)
    assert "PROV_FACT_MISMATCH" in r.codes


def test_numbers_first(cf_qa, fact_index, kg):
    env = gold_envelope(cf_qa)
    env.counterfactual = {"risk_before": 0.9, "risk_after": 0.2, "direction": "increase"}
    env.direct_answer = "The risk of failure would increase."
    assert envelope_direction(env) == DECREASE
    r = verify(env, cf_qa, fact_index, kg)
    assert r.predicted_direction == DECREASE and r.cf_direction_ok


def test_direction_fallbacks():
    assert envelope_direction(envelope(counterfactual={"direction": "Increase"})) == INCREASE
    assert envelope_direction(envelope(direct_answer="Risk would drop sharply.")) == DECREASE
    assert envelope_direction(envelope(direct_answer="Nothing useful.")) is None
    assert text_direction("The risk would not change.") == NO_CHANGE
    assert text_direction("risk rises") == INCREASE


def test_missing_direction(cf_qa, fact_index, kg):
    env = gold_envelope(cf_qa)
    env.counterfactual = None
    env.direct_answer = "Hard to say."
    r = verify(env, cf_qa, fact_index, kg)
    assert r.cf_direction_ok is False and "CF_MISSING" in r.codes
    assert gate(r).outcome == REVIEW


def test_label_via_alias_and_text(diag_qa, fact_index, kg):
    env = gold_envelope(diag_qa)
    env.label = None
    env.direct_answer = f"This looks like {diag_qa.label.upper()} wear."
    assert verify(env, diag_qa, fact_index, kg).label_consistent
    env.direct_answer = "Episode labeled 'healthy'."
    r = verify(env, diag_qa, fact_index, kg)
    assert r.label_consistent is False and "LABEL_MISMATCH" in r.codes
    assert gate(r).outcome == FLAG


def test_predicted_label_priority():
    assert predicted_label(envelope(label="comp2", direct_answer="'comp1'")) == "comp2"
    assert predicted_label(envelope(direct_answer="labeled 'comp1' here")) == "comp1"
    assert predicted_label(envelope(direct_answer="nothing"), ["comp1"]) is None


def test_structural_failure_report(diag_qa, cf_qa, fact_index):
    r = verify(StructuralFailure("no JSON object found"), diag_qa, fact_index)
    assert not r.struct_ok and not r.prov_ok and r.label_consistent is False and r.cf_direction_ok is None
    assert gate(r).outcome == REVIEW
    r = verify(StructuralFailure("x"), cf_qa, fact_index)
    assert r.cf_direction_ok is False and r.label_consistent is None


def test_inapplicable_fields_null(synth_corpus, fact_index, oracle):
    qa = next(q for q in synth_corpus if q.task_type == "descriptive")
    r = verify(parse_answer(oracle.answer(build_prompt(fact_index[qa.fact_id], qa))), qa, fact_index)
    assert r.label_consistent is None and r.cf_direction_ok is None


# -- gate ---------------------------------------------------------------------------


def ok_report(conf):
    return VerifierReport("q", "descriptive", True, True, confidence=conf)


def test_gate_admit_and_low_confidence():
    assert gate(ok_report(0.9), GatePolicy(0.5)).outcome == ADMIT
    low = gate(ok_report(0.3), GatePolicy(0.5))
    assert low.outcome == FLAG and low.codes == ["LOW_CONFIDENCE"]
    assert gate(ok_report(None)).outcome == FLAG
    assert gate(ok_report(0.5), GatePolicy(0.5)).outcome == ADMIT


@settings(max_examples=300, deadline=None)
@given(
    st.booleans(),
    st.booleans(),
    st.sampled_from([None, True, False]),
    st.sampled_from([None, True, False]),
    st.one_of(st.none(), st.floats(0, 1)),
    st.floats(0, 1),
)
def test_admit_implies_all_checks(struct, prov, label, cf, conf, threshold):
    r = VerifierReport("q", "t", struct, prov, label, cf, conf)
    d = gate(r, GatePolicy(threshold))
    if d.outcome == ADMIT:
        assert struct and prov and label is not False and cf is not False and (conf or 0.0) >= threshold
    else:
        assert d.incident is not None and d.incident["outcome"] == d.outcome


def test_incident_log_and_replay(tmp_path, diag_qa, fact_index, kg):
    log = IncidentLog(tmp_path / "incidents.jsonl")
    d1 = gate(verify(gold_envelope(diag_qa, fact_id="nope"), diag_qa, fact_index, kg), log=log)
    d2 = gate(ok_report(0.1), log=log)
    d3 = gate(ok_report(0.9), log=log)
    assert (d1.outcome, d2.outcome, d3.outcome) == (REVIEW, FLAG, ADMIT)
    lines = (tmp_path / "incidents.jsonl").read_text(encoding="utf-8").splitlines()
    assert len(lines) == 2
    assert replay_incidents(tmp_path / "incidents.jsonl") == {REVIEW: 1, FLAG: 1}
    assert d1.incident["timestamp"] == "2023-11-14 22:13:20"


def test_incident_log_io_error_propagates(tmp_path):
    log = IncidentLog(tmp_path / "missing" / "x.jsonl")
    with pytest.raises(OSError):
        gate(ok_report(0.0), log=log)


@pytest.mark.parametrize("kind", CORRUPTIONS)
def test_full_rate_faults_never_admitted(kind, oracle, synth_corpus, fact_index, kg):
    fb = FaultBackend(oracle, FaultSpec(kind, 1.0, seed=7))
    pool = [q for q in synth_corpus if kind != "direction_flip" or q.counterfactual is not None]
    admits = 0
    for qa in pool[:: max(1, len(pool) // 100)][:100]:
        p = build_prompt(fact_index[qa.fact_id], qa)
        admits += gate(verify(parse_answer(fb.answer(p)), qa, fact_index, kg)).outcome == ADMIT
    assert admits == 0


def test_replaced_qa_label_changes_verdict(diag_qa, fact_index, kg):
    env = gold_envelope(diag_qa)
    other = replace(diag_qa, label="healthy")
    assert verify(env, other, fact_index, kg).label_consistent is False


@pytest.mark.parametrize("kind", CORRUPTIONS)
@pytest.mark.parametrize("rate", [0.1, 0.3])
def test_partial_rate_flags_exactly_injected(kind, rate, oracle, synth_corpus, fact_index, kg):
    fb = FaultBackend(oracle, FaultSpec(kind, rate, seed=0))
    pool = [q for q in synth_corpus if kind != "direction_flip" or q.counterfactual is not None]
    for qa in pool[::5]:
        p = build_prompt(fact_index[qa.fact_id], qa)
        flagged = gate(verify(parse_answer(fb.answer(p)), qa, fact_index, kg)).outcome != ADMIT
        assert flagged == fb.corrupts(qa.qa_id, 0), qa.qa_id
