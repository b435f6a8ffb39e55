"""Deterministic answer verification and the admit/flag/review safety gate."""

from __future__ import annotations

import json
import logging
import re
import threading
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Protocol

from .answerer import AnswerEnvelope, StructuralFailure
from .facts import EpisodeFact, dumps, format_ts
from .kg import KnowledgeGraph, fold, normalize_label
from .qa import CF_TASKS, DIAGNOSTIC, QAInstance
from .risk import DECREASE, DIRECTIONS, INCREASE, NO_CHANGE, direction_of
from .store import now_utc

logger = logging.getLogger(__name__)

ADMIT, FLAG, REVIEW = "admit", "flag", "route_to_review"
OUTCOMES = (ADMIT, FLAG, REVIEW)

_QUOTED = re.compile(r"'([^']+)'")
_DIRECTION_WORDS = (
    (NO_CHANGE, re.compile(r"\b(no change|not change|unchanged|stay the same|no_change)\b", re.I)),
    (DECREASE, re.compile(r"\b(decreas\w*|lower\w*|reduc\w*|drop\w*)\b", re.I)),
    (INCREASE, re.compile(r"\b(increas\w*|higher|rais(?:e|es|ed|ing)|ris(?:e|es|ing))\b", re.I)),
)


class FactSource(Protocol):
    def get_fact(self, fact_id: str) -> EpisodeFact | None: ...


class MappingFacts:
    """Adapter giving a dict of facts the store's ``get_fact`` shape."""

    def __init__(self, facts: Mapping[str, EpisodeFact]):
        self._facts = facts

    def get_fact(self, fact_id: str) -> EpisodeFact | None:
        return self._facts.get(fact_id)


@dataclass(frozen=True)
class Issue:
    code: str
    message: str
    locator: str = ""

    def to_dict(self) -> dict[str, str]:
        return {"code": self.code, "message": self.message, "locator": self.locator}


@dataclass
class VerifierReport:
    qa_id: str
    task_type: str
    struct_ok: bool
    prov_ok: bool
    label_consistent: bool | None = None
    cf_direction_ok: bool | None = None
    confidence: float | None = None
    predicted_label: str | None = None
    predicted_direction: str | None = None
    issues: list[Issue] = field(default_factory=list)

    @property
    def all_ok(self) -> bool:
        return (
            self.struct_ok
            and self.prov_ok
            and self.label_consistent is not False
            and self.cf_direction_ok is not False
        )

    @property
    def codes(self) -> list[str]:
        return [i.code for i in self.issues]

    def to_dict(self) -> dict[str, Any]:
        return {
            "qa_id": self.qa_id,
            "task_type": self.task_type,
            "struct_ok": self.struct_ok,
            "prov_ok": self.prov_ok,
            "label_consistent": self.label_consistent,
            "cf_direction_ok": self.cf_direction_ok,
            "confidence": self.confidence,
            "predicted_label": self.predicted_label,
            "predicted_direction": self.predicted_direction,
            "issues": [i.to_dict() for i in self.issues],
        }


def predicted_label(env: AnswerEnvelope, candidates: list[str] | None = None) -> str | None:
    """Label from the envelope's ``label`` key, else the first quoted token, else a known label in the text."""
    if env.label:
        return env.label
    m = _QUOTED.search(env.direct_answer)
    if m:
        return m.group(1)
    text = fold(env.direct_answer)
    for cand in sorted(candidates or [], key=lambda c: (-len(c), c)):
        if re.search(rf"\b{re.escape(fold(cand))}\b", text):
            return cand
    return None


def text_direction(text: str) -> str | None:
    for direction, pattern in _DIRECTION_WORDS:
        if pattern.search(text):
            return direction
    return None


def envelope_direction(env: AnswerEnvelope) -> str | None:
    """Numbers first; the textual direction is only a fallback."""
    cf = env.counterfactual or {}
    before, after = cf.get("risk_before"), cf.get("risk_after")
    if isinstance(before, (int, float)) and isinstance(after, (int, float)) and not isinstance(before, bool):
        return direction_of(float(after) - float(before))
    stated = cf.get("direction")
    if isinstance(stated, str) and fold(stated) in DIRECTIONS:
        return fold(stated)
    return text_direction(env.direct_answer)


def _check_provenance(env: AnswerEnvelope, qa: QAInstance, facts: FactSource) -> list[Issue]:
    prov = env.provenance
    cited = prov.get("fact_id")
    if not cited:
        return [Issue("PROV_NO_FACT_ID", "provenance does not cite a fact_id", "provenance.fact_id")]
    fact = facts.get_fact(cited)
    if fact is None:
        return [Issue("PROV_FACT_MISSING", f"cited fact {cited!r} is not in the store", "provenance.fact_id")]
    issues: list[Issue] = []
    if cited != qa.fact_id:
        issues.append(Issue("PROV_FACT_MISMATCH", f"cited {cited!r} but the question is about {qa.fact_id!r}", "provenance.fact_id"))
    for i, name in enumerate(prov.get("features", [])):
        if not fact.has_feature(name):
            issues.append(Issue("PROV_FEATURE_UNKNOWN", f"feature {name!r} does not exist in {cited}", f"provenance.features[{i}]={name}"))
    file = prov.get("file")
    if file is not None and file not in fact.provenance.source_files() | {fact.source_file}:
        issues.append(Issue("PROV_FILE_MISMATCH", f"file {file!r} is not a source of {cited}", "provenance.file"))
    row = prov.get("row")
    if row is not None and row != fact.row_index:
        issues.append(Issue("PROV_ROW_MISMATCH", f"row {row} differs from the fact's row {fact.row_index}", "provenance.row"))
    return issues


def verify(
    answer: AnswerEnvelope | StructuralFailure,
    qa: QAInstance,
    facts: FactSource | Mapping[str, EpisodeFact],
    kg: KnowledgeGraph | None = None,
) -> VerifierReport:
    if isinstance(facts, Mapping):
        facts = MappingFacts(facts)
    diag = qa.task_type == DIAGNOSTIC
    cf_task = qa.task_type in CF_TASKS and qa.counterfactual is not None
    if isinstance(answer, StructuralFailure):
        return VerifierReport(
            qa_id=qa.qa_id,
            task_type=qa.task_type,
            struct_ok=False,
            prov_ok=False,
            label_consistent=False if diag else None,
            cf_direction_ok=False if cf_task else None,
            issues=[Issue("STRUCT", answer.reason, "response")],
        )
    issues = _check_provenance(answer, qa, facts)
    report = VerifierReport(
        qa_id=qa.qa_id,
        task_type=qa.task_type,
        struct_ok=True,
        prov_ok=not issues,
        confidence=answer.confidence,
    )
    if diag:
        candidates = sorted({qa.label} | ({e.id for e in kg.failure_modes()} if kg else set()) | {"healthy"})
        pred = predicted_label(answer, candidates)
        report.predicted_label = pred
        report.label_consistent = pred is not None and normalize_label(kg, pred) == normalize_label(kg, qa.label)
        if not report.label_consistent:
            issues.append(Issue("LABEL_MISMATCH", f"predicted {pred!r}, gold {qa.label!r}", "label"))
    if cf_task:
        got = envelope_direction(answer)
        report.predicted_direction = got
        gold = qa.counterfactual["direction"]
        report.cf_direction_ok = got == gold
        if got is None:
            issues.append(Issue("CF_MISSING", "no counterfactual direction could be read", "counterfactual"))
        elif got != gold:
            issues.append(Issue("CF_DIRECTION_MISMATCH", f"direction {got!r}, gold {gold!r}", "counterfactual"))
    report.issues = issues
    return report


# -- gate -----------------------------------------------------------------------


@dataclass(frozen=True)
class GatePolicy:
    min_confidence: float = 0.5


@dataclass
class GateDecision:
    qa_id: str
    outcome: str
    codes: list[str]
    incident: dict[str, Any] | None = None


class IncidentLog:
    """Append-only JSONL of non-admit decisions; one writer at a time."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def append(self, record: dict[str, Any]) -> None:
        line = dumps(record) + "\n"
        with self._lock:
            with open(self.path, "a", encoding="utf-8", newline="\n") as fh:
                fh.write(line)
                fh.flush()


def gate(report: VerifierReport, policy: GatePolicy | None = None, log: IncidentLog | None = None) -> GateDecision:
    policy = policy or GatePolicy()
    confidence = report.confidence if report.confidence is not None else 0.0
    codes = list(report.codes)
    if confidence < policy.min_confidence:
        codes.append("LOW_CONFIDENCE")
    if report.all_ok and confidence >= policy.min_confidence:
        return GateDecision(report.qa_id, ADMIT, [])
    outcome = REVIEW if (not report.prov_ok or report.cf_direction_ok is False) else FLAG
    incident = {
        "timestamp": format_ts(now_utc().replace(tzinfo=None)),
        "qa_id": report.qa_id,
        "outcome": outcome,
        "codes": codes,
    }
    if log is not None:
        log.append(incident)  # an I/O error here propagates: no silent admits
    return GateDecision(report.qa_id, outcome, codes, incident)


def replay_incidents(path: str | Path) -> Counter[str]:
    counts: Counter[str] = Counter()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                counts[json.loads(line)["outcome"]] += 1
    return counts
