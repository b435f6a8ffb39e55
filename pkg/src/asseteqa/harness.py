"""Run a QA corpus through prompt -> answer -> verify -> gate -> score under a preset."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .answerer import Backend, StructuralFailure, parse_answer
from .facts import EpisodeFact, dumps
from .kg import KnowledgeGraph
from .metrics import AggregateReport, Judge, MetricRecord, aggregate, lexical_entailment_judge, score_instance
from .prompts import PromptOptions, build_prompt
from .qa import CF_TASKS, QAInstance
from .risk import RiskModel
from .verifier import FactSource, GatePolicy, IncidentLog, MappingFacts, gate, verify

logger = logging.getLogger(__name__)

MAX_ATTEMPTS = 3


@dataclass(frozen=True)
class Preset:
    name: str
    include_episodic: bool = True
    include_kg: bool = True
    enforce_provenance: bool = True
    include_simulator: bool = True

    @property
    def prompt_options(self) -> PromptOptions:
        return PromptOptions(
            include_kg=self.include_kg,
            include_episodic=self.include_episodic,
            include_simulator=self.include_simulator,
        )

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


PRESETS: dict[str, Preset] = {
    p.name: p
    for p in (
        Preset("llm_only", False, False, False, False),
        Preset("episodic", True, False, False, False),
        Preset("episodic_kg", True, True, False, False),
        Preset("provenance_enforced", True, True, True, False),
        Preset("full", True, True, True, True),
        Preset("no_episodic", False, True, True, True),
        Preset("no_kg", True, False, True, True),
        Preset("no_provenance", True, True, False, True),
        Preset("no_simulator", True, True, True, False),
    )
}
# row order of the comparison table: baselines, full system, then ablations
BASELINE_ROWS = ("llm_only", "episodic", "episodic_kg", "provenance_enforced", "full")
ABLATION_ROWS = ("full", "no_simulator", "no_provenance", "no_episodic", "no_kg")


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}") from None


def _needs_retry(preset: Preset, report: Any) -> bool:
    if not (report.struct_ok and report.prov_ok):
        return True
    # direction can only be checked against the simulator when the model had access to it
    return preset.include_simulator and report.cf_direction_ok is False


def run_config(
    corpus: Sequence[QAInstance],
    facts: FactSource | Mapping[str, EpisodeFact],
    backend: Backend,
    preset: Preset | str,
    kg: KnowledgeGraph | None = None,
    model: RiskModel | None = None,
    gate_policy: GatePolicy | None = None,
    incident_log: IncidentLog | None = None,
    max_attempts: int = MAX_ATTEMPTS,
    judge: Judge = lexical_entailment_judge,
) -> tuple[AggregateReport, list[MetricRecord]]:
    """Evaluate every instance; backend errors count as structural failures."""
    if isinstance(preset, str):
        preset = get_preset(preset)
    if isinstance(facts, Mapping):
        facts = MappingFacts(facts)
    opts = preset.prompt_options
    records: list[MetricRecord] = []
    for qa in sorted(corpus, key=lambda q: q.qa_id):
        fact = facts.get_fact(qa.fact_id)
        if fact is None:
            raise KeyError(f"{qa.qa_id}: fact {qa.fact_id} is not in the store")
        prompt = build_prompt(fact, qa, opts, model)
        attempts = max_attempts if preset.enforce_provenance else 1
        for attempt in range(attempts):
            try:
                text = backend.answer(prompt, attempt)
                parsed = parse_answer(text)
            except Exception as exc:  # recorded per instance, run continues
                logger.warning("%s: backend error on attempt %d: %s", qa.qa_id, attempt + 1, exc)
                parsed = StructuralFailure(f"backend error: {exc}")
            report = verify(parsed, qa, facts, kg)
            if not _needs_retry(preset, report):
                break
        decision = gate(report, gate_policy, incident_log)
        rec = score_instance(parsed, qa, report, fact, kg, [prompt.user_text], judge)
        rec.outcome = decision.outcome
        rec.attempts = attempt + 1
        records.append(rec)
    agg = aggregate(preset.name, records)
    logger.info("%s: %d instances, full pass %s", preset.name, agg.n_instances, agg.full_pass)
    return agg, records


def write_records(records: Iterable[MetricRecord], path: str | Path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(dumps(rec.to_dict()) + "\n")
            n += 1
    return n


def cf_tasks_only(corpus: Iterable[QAInstance]) -> list[QAInstance]:
    return [qa for qa in corpus if qa.task_type in CF_TASKS and qa.counterfactual is not None]
