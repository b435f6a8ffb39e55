"""Gold QA instance construction for the five task types.

Every instance is rebuilt from a fact, the KG and (for the counterfactual
and action tasks) the risk model, so the same inputs always give the same
JSONL bytes.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

from .extractor import machine_model
from .facts import HEALTHY, EpisodeFact, dumps, fmt_num
from .kg import FailureProfile, KnowledgeGraph
from .risk import DECREASE, INCREASE, RiskModel, predict_proba, risk_of, simulate_intervention

logger = logging.getLogger(__name__)

DESCRIPTIVE = "descriptive"
TEMPORAL = "temporal_count"
DIAGNOSTIC = "diagnostic"
COUNTERFACTUAL = "counterfactual"
ACTION = "action_recommendation"
TASK_TYPES = (DESCRIPTIVE, TEMPORAL, DIAGNOSTIC, COUNTERFACTUAL, ACTION)
TASK_CODES = {
    DESCRIPTIVE: "desc",
    TEMPORAL: "temp",
    DIAGNOSTIC: "diag",
    COUNTERFACTUAL: "ts_cf",
    ACTION: "ts_action",
}
CF_TASKS = (COUNTERFACTUAL, ACTION)
TOP_K = 3
MAINT_PREFIX = "hours_since_last_maint_"
OPEN_WORK_ORDER = "open_work_order"
CONTINUE_MONITORING = "continue_monitoring"


class QASkip(Exception):
    """The fact does not meet a task's preconditions."""


@dataclass(frozen=True)
class ActionPolicy:
    risk_threshold: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 < self.risk_threshold < 1.0:
            raise ValueError("risk_threshold must lie in (0, 1)")


@dataclass
class QAInstance:
    qa_id: str
    fact_id: str
    task_type: str
    question: str
    direct_answer: str
    reasoning_answer: str
    provenance: dict[str, Any]
    label: str
    asset_id: str
    counterfactual: dict[str, Any] | None = None
    confidence: float | None = None
    risk: float | None = None
    probs_before: dict[str, float] | None = None
    risk_threshold: float | None = None
    asset_profile_brief: dict[str, Any] | None = None
    failure_profile_brief: dict[str, Any] | None = None

    @property
    def cited_features(self) -> list[str]:
        return list(self.provenance.get("features", []))

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "qa_id": self.qa_id,
            "fact_id": self.fact_id,
            "task_type": self.task_type,
            "question": self.question,
            "direct_answer": self.direct_answer,
            "reasoning_answer": self.reasoning_answer,
            "provenance": self.provenance,
        }
        if self.counterfactual is not None:
            d["counterfactual"] = self.counterfactual
        if self.task_type == ACTION:
            d["label"] = self.label
            d["asset_id"] = self.asset_id
            d["confidence_estimator"] = self.confidence
            d["risk"] = self.risk
            d["risk_threshold"] = self.risk_threshold
            d["probs_before"] = self.probs_before
        else:
            if self.confidence is not None:
                d["confidence"] = self.confidence
            d["label"] = self.label
            d["asset_id"] = self.asset_id
        if self.asset_profile_brief is not None:
            d["asset_profile_brief"] = self.asset_profile_brief
        if self.failure_profile_brief is not None:
            d["failure_profile_brief"] = self.failure_profile_brief
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> QAInstance:
        return cls(
            qa_id=d["qa_id"],
            fact_id=d["fact_id"],
            task_type=d["task_type"],
            question=d["question"],
            direct_answer=d["direct_answer"],
            reasoning_answer=d["reasoning_answer"],
            provenance=dict(d["provenance"]),
            label=d["label"],
            asset_id=d["asset_id"],
            counterfactual=d.get("counterfactual"),
            confidence=d.get("confidence", d.get("confidence_estimator")),
            risk=d.get("risk"),
            probs_before=d.get("probs_before"),
            risk_threshold=d.get("risk_threshold"),
            asset_profile_brief=d.get("asset_profile_brief"),
            failure_profile_brief=d.get("failure_profile_brief"),
        )

    def to_json(self) -> str:
        return dumps(self.to_dict())


# -- KG context --------------------------------------------------------------


@dataclass
class _KgContext:
    asset: dict[str, Any] | None = None
    failure: FailureProfile | None = None
    sensors: list[dict[str, Any]] = field(default_factory=list)


def _kg_context(fact: EpisodeFact, kg: KnowledgeGraph | None, label: str | None = None) -> _KgContext:
    """Asset/failure/sensor context from the KG, or from the fact's own enrichment."""
    label = label if label is not None else (fact.label if fact.is_failure else None)
    model_name = machine_model(fact)
    if kg is not None:
        asset = kg.asset_profile(model_name) if model_name else None
        fp = kg.failure_profile(label, model_name) if label else None
        sensors = []
        for s in fact.sensors():
            desc = kg.sensor_description(s)
            if desc is not None:
                sensors.append({"sensor_name": s, "description": desc})
        return _KgContext(asset.to_dict() if asset else None, fp, sensors)
    fp = None
    if fact.failure_profile and label is not None and fact.failure_profile.get("failure_label") == label:
        fp = FailureProfile.from_fact_json(fact.failure_profile)
    return _KgContext(fact.asset_profile, fp, list(fact.sensor_profiles or []))


def failure_brief(fp: FailureProfile) -> dict[str, Any]:
    return {
        "failure_mode": fp.failure_label,
        "display_name": fp.display_name,
        "short_description": fp.description,
        "associated_sensors": list(fp.associated_sensors),
        "typical_indicators": dict(fp.typical_indicators),
        "recommended_actions": list(fp.recommended_actions),
        "severity": fp.severity,
    }


# -- helpers -----------------------------------------------------------------


def qa_id_for(fact: EpisodeFact, task_type: str) -> str:
    return f"{fact.dataset}_{TASK_CODES[task_type]}_{fact.fact_id}"


def top_features(fact: EpisodeFact, model: RiskModel | None, k: int = TOP_K) -> list[str]:
    """The k non-null features with the largest |standardized value|.

    Without a model there is no standardization, so the first k non-null
    features in fact order are used instead.
    """
    present = [f.name for f in fact.features if f.value is not None]
    if model is None:
        return present[:k]
    z = model.standardized(fact)
    scored = [(-abs(z[n]), n) for n in present if n in z]
    return [n for _, n in sorted(scored)[:k]]


def maint_features(fact: EpisodeFact) -> list[str]:
    return [f.name for f in fact.features if f.name.startswith(MAINT_PREFIX) and f.value is not None and f.value >= 0]


def label_text(value: float) -> str:
    return format(float(value), ".10g")


def _window(fact: EpisodeFact) -> str:
    return f"{fact.start_time} to {fact.end_time}"


def _base_provenance(fact: EpisodeFact, features: list[str], file: str | None = None) -> dict[str, Any]:
    return {
        "fact_id": fact.fact_id,
        "features": features,
        "file": file or fact.source_file,
        "row": fact.row_index,
        "telemetry_points_in_window": fact.provenance.telemetry_points_in_window,
    }


def _direction_sentence(direction: str) -> str:
    if direction == DECREASE:
        return "The risk of failure would decrease."
    if direction == INCREASE:
        return "The risk of failure would increase."
    return "The risk of failure would not change."


# -- builders ----------------------------------------------------------------


def _descriptive(fact: EpisodeFact, kg: KnowledgeGraph | None) -> QAInstance:
    sensors = sorted(fact.sensors())
    if not sensors:
        raise QASkip("no sensor features")
    sensor = sensors[0]
    name = f"{sensor}_mean"
    value = fact.feature(name)
    if value is None:
        raise QASkip(f"missing feature {name}")
    ctx = _kg_context(fact, kg)
    desc = next((s["description"] for s in ctx.sensors if s["sensor_name"] == sensor), None)
    about = f" ({desc})" if desc else ""
    prov = _base_provenance(fact, [name])
    if desc:
        prov["sensor_description"] = desc
    points = fact.provenance.telemetry_points_in_window
    return QAInstance(
        qa_id=qa_id_for(fact, DESCRIPTIVE),
        fact_id=fact.fact_id,
        task_type=DESCRIPTIVE,
        question=(
            f"During the time window {_window(fact)} for asset {fact.asset_id}, "
            f"what was the average {sensor} level{about}?"
        ),
        direct_answer=f"The average {sensor} level was approximately {fmt_num(value)}.",
        reasoning_answer=f"For asset {fact.asset_id}, {name}={fmt_num(value)} with telemetry_points_in_window={points}.",
        provenance=prov,
        label=label_text(value),
        asset_id=fact.asset_id,
    )


def _temporal(fact: EpisodeFact) -> QAInstance:
    distinct = fact.feature("distinct_error_types_last_window")
    count = fact.feature("error_count_last_window")
    if distinct is None or count is None:
        raise QASkip("missing error-count features")
    file = fact.provenance.errors_source_file or fact.source_file
    prov = _base_provenance(fact, ["error_count_last_window", "distinct_error_types_last_window"], file)
    prov["errors_in_window"] = fact.provenance.errors_in_window
    n = int(distinct)
    noun = "type" if n == 1 else "types"
    return QAInstance(
        qa_id=qa_id_for(fact, TEMPORAL),
        fact_id=fact.fact_id,
        task_type=TEMPORAL,
        question=(
            f"Between {fact.start_time} and {fact.end_time} for asset {fact.asset_id}, "
            "how many distinct error types occurred?"
        ),
        direct_answer=f"There were {n} distinct error {noun} in this window.",
        reasoning_answer=(
            f"The episode window has distinct_error_types_last_window={fmt_num(distinct)} "
            f"and error_count_last_window={fmt_num(count)}."
        ),
        provenance=prov,
        label=str(n),
        asset_id=fact.asset_id,
    )


def _diagnostic(fact: EpisodeFact, kg: KnowledgeGraph | None, model: RiskModel | None) -> QAInstance:
    feats = top_features(fact, model)
    if not feats:
        raise QASkip("no non-null features")
    ctx = _kg_context(fact, kg)
    fm = fact.feature_map()
    cited = ", ".join(f"{n}={fmt_num(fm[n])}" for n in feats)
    label = fact.label
    if ctx.failure is not None:
        display = ctx.failure.display_name
        because = "its observed features match the indicators expected for this failure mode"
    elif label == HEALTHY:
        display = "no failure"
        because = "no failure follows the window and its features stay within the operating envelope"
    else:
        display = label
        because = "its observed features match the indicators expected for this failure mode"
    reasoning = f"Episode labeled '{label}' with diagnostic_features {cited}."
    if ctx.failure is not None:
        for sensor in ctx.failure.associated_sensors:
            reasoning += f" {sensor} indicates {ctx.failure.display_name}."
    prov = _base_provenance(fact, feats)
    if ctx.asset:
        prov["asset_profile"] = {
            "asset_name": ctx.asset["asset_name"],
            "equipment_category": ctx.asset["equipment_category"],
        }
    if ctx.failure is not None:
        prov["failure_profile_id"] = ctx.failure.failure_label
    return QAInstance(
        qa_id=qa_id_for(fact, DIAGNOSTIC),
        fact_id=fact.fact_id,
        task_type=DIAGNOSTIC,
        question=(
            f"Why is this episode for asset {fact.asset_id} labeled '{label}' "
            f"over the time window {_window(fact)}?"
        ),
        direct_answer=f"This episode is labeled '{label}' ({display}) because {because}.",
        reasoning_answer=reasoning,
        provenance=prov,
        label=label,
        asset_id=fact.asset_id,
        asset_profile_brief=ctx.asset,
        failure_profile_brief=failure_brief(ctx.failure) if ctx.failure else None,
    )


def _kg_provenance(prov: dict[str, Any], ctx: _KgContext, sensors: list[str] | None = None) -> None:
    if ctx.asset:
        prov["asset_profile_brief"] = ctx.asset
    if ctx.failure is not None:
        prov["failure_profile_id"] = ctx.failure.failure_label
        prov["failure_profile_brief"] = failure_brief(ctx.failure)
    wanted = set(sensors) if sensors is not None else None
    briefs = [s for s in ctx.sensors if wanted is None or s["sensor_name"] in wanted]
    if briefs:
        prov["sensor_profiles_brief"] = briefs


def _counterfactual(fact: EpisodeFact, kg: KnowledgeGraph | None, model: RiskModel | None) -> QAInstance:
    if model is None:
        raise QASkip("no risk model")
    if not fact.is_failure:
        raise QASkip("not a failure window")
    name = f"{MAINT_PREFIX}{fact.label}"
    before = fact.feature(name)
    if before is None or before < 0:
        raise QASkip(f"no resettable {name}")
    cf = simulate_intervention(model, fact, {name: 0.0})
    ctx = _kg_context(fact, kg)
    prov = _base_provenance(fact, [name])
    _kg_provenance(prov, ctx, ctx.failure.associated_sensors if ctx.failure else None)
    reasoning = (
        f"Resetting {name}={fmt_num(before)} to 0 moves risk_before={fmt_num(cf.risk_before)} "
        f"to risk_after={fmt_num(cf.risk_after)} with delta_risk={fmt_num(cf.delta_risk)}."
    )
    return QAInstance(
        qa_id=qa_id_for(fact, COUNTERFACTUAL),
        fact_id=fact.fact_id,
        task_type=COUNTERFACTUAL,
        question=(
            f"For asset {fact.asset_id} (failure mode: {fact.label}) in the window {_window(fact)}, "
            f"if maintenance targeting {fact.label} had been performed immediately before the window "
            f"(resetting {name} from {fmt_num(before)} to 0), how would the risk of failure change?"
        ),
        direct_answer=_direction_sentence(cf.direction),
        reasoning_answer=reasoning,
        provenance=prov,
        label=fact.label,
        asset_id=fact.asset_id,
        counterfactual=cf.to_dict(),
        confidence=cf.confidence,
    )


def _action(
    fact: EpisodeFact, kg: KnowledgeGraph | None, model: RiskModel | None, policy: ActionPolicy
) -> QAInstance:
    if model is None:
        raise QASkip("no risk model")
    resettable = maint_features(fact)
    if not resettable:
        raise QASkip("no resettable maintenance features")
    probs = predict_proba(model, fact)
    risk = risk_of(model, probs)
    # the failure mode the recommendation is about: the true label for failure
    # windows, otherwise the model's most likely failure class
    if fact.is_failure:
        focus = fact.label
    else:
        failures = sorted((-p, c) for c, p in probs.items() if c != HEALTHY)
        focus = failures[0][1] if failures else None
    ctx = _kg_context(fact, kg, focus)
    cf = simulate_intervention(model, fact, {n: 0.0 for n in resettable})
    open_order = risk >= policy.risk_threshold
    label = OPEN_WORK_ORDER if open_order else CONTINUE_MONITORING
    verdict = (
        "is at or above risk_threshold={t}, so a maintenance work order should be opened now"
        if open_order
        else "is below risk_threshold={t}, so it is acceptable to continue monitoring"
    ).format(t=fmt_num(policy.risk_threshold))
    parts = [f"The risk={fmt_num(risk)} {verdict}."]
    if ctx.failure is not None:
        fp = ctx.failure
        parts.append(f"The failure_profile {fp.failure_label} ({fp.display_name}) has severity {fp.severity}.")
        if fp.recommended_actions:
            parts.append("Recommended_actions: " + "; ".join(fp.recommended_actions) + ".")
        if fp.associated_sensors:
            parts.append("Associated_sensors: " + ", ".join(fp.associated_sensors) + ".")
    if ctx.asset and ctx.asset.get("equipment_class_type"):
        parts.append(f"Equipment_class_type: {ctx.asset['equipment_class_type']}.")
    parts.append(
        f"The simulator intervention gives risk_after={fmt_num(cf.risk_after)} from risk_before={fmt_num(cf.risk_before)}."
    )
    prov = _base_provenance(fact, [f.name for f in fact.features if f.value is not None])
    prov["errors_in_window"] = fact.provenance.errors_in_window
    _kg_provenance(prov, ctx)
    equipment = (ctx.asset or {}).get("equipment_category") or "asset"
    return QAInstance(
        qa_id=qa_id_for(fact, ACTION),
        fact_id=fact.fact_id,
        task_type=ACTION,
        question=(
            f"For {equipment} {fact.asset_id} in the time window {_window(fact)}, should a maintenance "
            "work order be opened now, or is it acceptable to continue monitoring?"
        ),
        direct_answer=(
            "A maintenance work order should be opened now."
            if open_order
            else "It is acceptable to continue monitoring."
        ),
        reasoning_answer=" ".join(parts),
        provenance=prov,
        label=label,
        asset_id=fact.asset_id,
        counterfactual=cf.to_dict(),
        confidence=cf.confidence,
        risk=risk,
        probs_before=probs,
        risk_threshold=policy.risk_threshold,
        asset_profile_brief=ctx.asset,
        failure_profile_brief=failure_brief(ctx.failure) if ctx.failure else None,
    )


def build_qa(
    fact: EpisodeFact,
    task_type: str,
    kg: KnowledgeGraph | None = None,
    model: RiskModel | None = None,
    policy: ActionPolicy | None = None,
) -> QAInstance:
    """One gold instance; raises :class:`QASkip` when the task does not apply."""
    if task_type == DESCRIPTIVE:
        return _descriptive(fact, kg)
    if task_type == TEMPORAL:
        return _temporal(fact)
    if task_type == DIAGNOSTIC:
        return _diagnostic(fact, kg, model)
    if task_type == COUNTERFACTUAL:
        return _counterfactual(fact, kg, model)
    if task_type == ACTION:
        return _action(fact, kg, model, policy or ActionPolicy())
    raise ValueError(f"unknown task type {task_type!r}")


@dataclass
class CorpusReport:
    counts: dict[str, int]
    skipped: dict[str, dict[str, int]]
    n_facts: int

    def to_dict(self) -> dict[str, Any]:
        return {"n_facts": self.n_facts, "counts": self.counts, "skipped": self.skipped}


def build_corpus(
    facts: Iterable[EpisodeFact],
    kg: KnowledgeGraph | None,
    model: RiskModel | None,
    tasks: Iterable[str] = TASK_TYPES,
    policy: ActionPolicy | None = None,
) -> tuple[list[QAInstance], CorpusReport]:
    """Every applicable (fact, task) instance, sorted by qa_id.

    ``facts`` may be an :class:`EpisodicStore` (anything with ``iter_facts``) or a list.
    """
    wanted = set(tasks)
    unknown = wanted - set(TASK_TYPES)
    if unknown:
        raise ValueError(f"unknown task types: {sorted(unknown)}")
    tasks = [t for t in TASK_TYPES if t in wanted]
    source = facts.iter_facts() if hasattr(facts, "iter_facts") else facts
    out: list[QAInstance] = []
    counts: Counter[str] = Counter()
    skipped: dict[str, Counter[str]] = {t: Counter() for t in tasks}
    n = 0
    for fact in source:
        n += 1
        for task in tasks:
            try:
                qa = build_qa(fact, task, kg, model, policy)
            except QASkip as exc:
                skipped[task][str(exc)] += 1
                continue
            out.append(qa)
            counts[task] += 1
    out.sort(key=lambda q: q.qa_id)
    report = CorpusReport(
        counts={t: counts.get(t, 0) for t in tasks},
        skipped={t: dict(sorted(c.items())) for t, c in skipped.items() if c},
        n_facts=n,
    )
    logger.info("built %d QA instances from %d facts: %s", len(out), n, report.counts)
    return out, report


def write_corpus(instances: Iterable[QAInstance], path: str | Path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for qa in instances:
            fh.write(qa.to_json())
            fh.write("\n")
            n += 1
    return n


def read_corpus(path: str | Path) -> list[QAInstance]:
    with open(path, encoding="utf-8") as fh:
        return [QAInstance.from_dict(json.loads(line)) for line in fh if line.strip()]
