"""Render a fact and a QA instance into a scoped prompt with a strict JSON contract."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Any

from .facts import EpisodeFact, dumps, fmt_num
from .qa import (
    ACTION,
    COUNTERFACTUAL,
    CF_TASKS,
    DESCRIPTIVE,
    DIAGNOSTIC,
    TASK_TYPES,
    TEMPORAL,
    QAInstance,
    top_features,
)
from .risk import RiskModel

SYSTEM_TEXT = (
    "You are a reliability analyst for industrial assets. Answer the question using only the "
    "evidence supplied in the user message; do not invent features, events or identifiers.\n"
    "Output contract: reply with exactly one JSON object with the keys direct_answer (string), "
    "reasoning_answer (string), provenance (object with fact_id, features, file, row) and "
    "confidence (number between 0 and 1). Cite in provenance.features only feature names that "
    "appear in the evidence. For counterfactual and action questions also include counterfactual "
    "(object with numeric risk_before, risk_after and a direction of increase, decrease or "
    "no_change that agrees with those numbers)."
)

TASK_TITLES = {
    DESCRIPTIVE: "Descriptive",
    TEMPORAL: "Temporal",
    DIAGNOSTIC: "Diagnostic",
    COUNTERFACTUAL: "Counterfactual",
    ACTION: "Action recommendation",
}

TASK_DESCRIPTIONS = {
    DESCRIPTIVE: "You must report the requested sensor aggregate for the episode.",
    TEMPORAL: "You must count the requested events inside the episode window.",
    DIAGNOSTIC: "You must explain why the episode carries its label.",
    COUNTERFACTUAL: "You must state how the failure risk changes under the stated intervention.",
    ACTION: "You must decide whether a maintenance work order should be opened now.",
}

GENERIC_QUESTIONS = {
    DESCRIPTIVE: "What was the average {sensor} level for asset {asset} in this episode?",
    TEMPORAL: "How many distinct error types occurred for asset {asset} in this episode?",
    DIAGNOSTIC: "Why is this episode for asset {asset} labeled '{label}'?",
    COUNTERFACTUAL: (
        "If maintenance targeting {label} had been performed just before this episode of asset "
        "{asset}, how would the risk of failure change?"
    ),
    ACTION: "Should a maintenance work order be opened now for asset {asset}, or is monitoring enough?",
}


@dataclass(frozen=True)
class PromptOptions:
    include_kg: bool = True
    include_episodic: bool = True
    include_simulator: bool = True

    def to_dict(self) -> dict[str, bool]:
        return asdict(self)


@dataclass(frozen=True)
class Prompt:
    system_text: str
    user_text: str
    qa_id: str
    fact_id: str
    task_type: str
    options: PromptOptions

    def to_dict(self) -> dict[str, Any]:
        return {"qa_id": self.qa_id, "system": self.system_text, "user": self.user_text}

    def to_json(self) -> str:
        return dumps(self.to_dict())

    def as_text(self) -> str:
        return f"=== SYSTEM ===\n{self.system_text}\n\n=== USER ===\n{self.user_text}\n"


def evidence_features(fact: EpisodeFact, qa: QAInstance, model: RiskModel | None = None) -> list[str]:
    """Top-k deviating features followed by any gold-cited feature not already listed."""
    names = top_features(fact, model)
    for name in qa.cited_features:
        if name not in names and fact.has_feature(name):
            names.append(name)
    return names


def _kg_lines(fact: EpisodeFact, qa: QAInstance) -> list[str]:
    lines: list[str] = []
    asset = qa.asset_profile_brief or qa.provenance.get("asset_profile_brief") or fact.asset_profile
    if asset:
        lines.append("asset_profile:")
        for key in ("asset_name", "equipment_category", "equipment_class_type"):
            if asset.get(key):
                lines.append(f"  {key}: {asset[key]}")
        if asset.get("unit_subunit"):
            lines.append(f"  unit_subunit: [{', '.join(asset['unit_subunit'])}]")
    failure = qa.failure_profile_brief or qa.provenance.get("failure_profile_brief")
    if failure:
        lines.append("failure_profile:")
        lines.append(f"  failure_mode: {failure['failure_mode']}")
        lines.append(f"  name: {failure['display_name']}")
        lines.append(f"  severity: {failure['severity']}")
        lines.append(f"  associated_sensors: [{', '.join(failure['associated_sensors'])}]")
        if failure.get("recommended_actions"):
            lines.append(f"  recommended_actions: [{'; '.join(failure['recommended_actions'])}]")
        for sensor in failure["associated_sensors"]:
            lines.append(f"  relation: {sensor} indicates {failure['display_name']}")
    desc = qa.provenance.get("sensor_description")
    if desc:
        lines.append(f"sensor_description: {desc}")
    return lines


def _summary(fact: EpisodeFact) -> str:
    kind = "failure" if fact.is_failure else "healthy"
    sensors = ", ".join(sorted(fact.sensors())) or "no"
    return f"summary: {kind} episode of asset {fact.asset_id}; sensors monitored: {sensors}; error and maintenance logs available."


def _evidence(fact: EpisodeFact, qa: QAInstance, opts: PromptOptions, model: RiskModel | None) -> str:
    lines: list[str] = []
    if opts.include_episodic:
        lines += [
            f"fact_id: {fact.fact_id}",
            f"asset_id: {fact.asset_id}",
            f"source: {qa.provenance.get('file', fact.source_file)}",
            f"row: {fact.row_index}",
            f"window_start: {fact.start_time}",
            f"window_end:   {fact.end_time}",
            f"telemetry_points_in_window: {fact.provenance.telemetry_points_in_window}",
            "diagnostic_features:",
        ]
        fm = fact.feature_map()
        for name in evidence_features(fact, qa, model):
            value = fm[name]
            lines.append(f"  - {name}: {'null' if value is None else fmt_num(value)}")
    else:
        lines.append(_summary(fact))
    if opts.include_kg:
        lines += _kg_lines(fact, qa)
    return "\n".join(lines)


def _simulator(qa: QAInstance) -> str | None:
    cf = qa.counterfactual
    if cf is None:
        return None
    lines = []
    if qa.risk is not None:
        lines.append(f"risk: {qa.risk!r}")
    if qa.risk_threshold is not None:
        lines.append(f"risk_threshold: {qa.risk_threshold!r}")
    lines += [
        f"intervention: {cf['intervention']}",
        f"risk_before: {cf['risk_before']!r}",
        f"risk_after: {cf['risk_after']!r}",
        f"delta_risk: {cf['delta_risk']!r}",
    ]
    return "\n".join(lines)


def _question(fact: EpisodeFact, qa: QAInstance, opts: PromptOptions) -> str:
    if opts.include_episodic:
        return qa.question
    sensor = qa.cited_features[0].rsplit("_", 1)[0] if qa.cited_features else "sensor"
    return GENERIC_QUESTIONS[qa.task_type].format(sensor=sensor, asset=fact.asset_id, label=fact.label)


def _response_format(task_type: str) -> str:
    lines = [
        "Return ONLY a single JSON object with keys:",
        "  direct_answer, reasoning_answer, provenance, confidence",
        "provenance: {fact_id, features, file, row}",
    ]
    if task_type in CF_TASKS:
        lines.append("Also include counterfactual: {risk_before, risk_after, direction}")
        lines.append("direction is one of increase, decrease, no_change and must agree with the numbers.")
    return "\n".join(lines)


def build_prompt(
    fact: EpisodeFact,
    qa: QAInstance,
    options: PromptOptions | None = None,
    model: RiskModel | None = None,
) -> Prompt:
    opts = options or PromptOptions()
    if qa.task_type not in TASK_TYPES:
        raise ValueError(f"unknown task type {qa.task_type!r}")
    if qa.fact_id != fact.fact_id:
        raise ValueError(f"QA {qa.qa_id} refers to {qa.fact_id}, not {fact.fact_id}")
    sections = [
        f"TASK TYPE: {TASK_TITLES[qa.task_type]}",
        "TASK DESCRIPTION:\n" + TASK_DESCRIPTIONS[qa.task_type] + "\nUse only the evidence; do not invent features or events.",
        "EVIDENCE:\n" + _evidence(fact, qa, opts, model),
    ]
    if opts.include_simulator and qa.task_type in CF_TASKS:
        sim = _simulator(qa)
        if sim:
            sections.append("SIMULATOR:\n" + sim)
    sections.append("QUESTION:\n" + _question(fact, qa, opts))
    sections.append("RESPONSE FORMAT:\n" + _response_format(qa.task_type))
    return Prompt(
        system_text=SYSTEM_TEXT,
        user_text="\n\n".join(sections) + "\n",
        qa_id=qa.qa_id,
        fact_id=fact.fact_id,
        task_type=qa.task_type,
        options=opts,
    )
