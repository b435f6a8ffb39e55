"""Reliability metrics: per-instance records, claim checking, lexical entailment and McNemar."""

from __future__ import annotations

import math
import re
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Iterable, Mapping, Sequence

from scipy import stats

from .answerer import AnswerEnvelope, StructuralFailure
from .facts import EpisodeFact
from .kg import KnowledgeGraph, fold
from .qa import CF_TASKS, DESCRIPTIVE, DIAGNOSTIC, TEMPORAL, QAInstance
from .verifier import VerifierReport

ENTAIL_THRESHOLD = 0.80
_COUNT_FIELDS = ("telemetry_points_in_window", "errors_in_window", "maint_events_in_window")

_NUMBER = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_NUMERIC_CLAIM = re.compile(rf"(?<![\w.])([A-Za-z_][A-Za-z0-9_]*)\s*(=|≈)\s*({_NUMBER})")
_RELATION_CLAIM = re.compile(r"\b([A-Za-z_][A-Za-z0-9_]*)\s+(indicates|belongs to)\s+([^.;\n]+?)\s*(?=[.;\n]|$)")
_SENTENCE_BREAK = re.compile(r"(?<=[.!?]) (?=[A-Z0-9])")
_TOKEN = re.compile(rf"{_NUMBER}|[^\W\d][\w/]*", re.UNICODE)
_FIRST_NUMBER = re.compile(_NUMBER)

STOPWORDS = frozenset(
    """a an the and or but if of to in on at by for with from as is are was were be been being this that
    these those it its into over under than then there here which who whom whose what when where why how
    would could should can will may might must do does did not no so such any all each both few more most
    other some only own same too very per via about above below between during before after again further
    once our their his her they them we you your i he she has have had having""".split()
)


def claim_tolerance(actual: float) -> float:
    return max(1e-6, 1e-3 * abs(actual))


def numbers_match(claimed: float, actual: float) -> bool:
    return abs(claimed - actual) <= claim_tolerance(actual)


# -- claims -----------------------------------------------------------------------


@dataclass(frozen=True)
class AtomicClaim:
    kind: str  # "numeric" | "relation"
    subject: str
    value: float | None = None
    relation: str | None = None
    obj: str | None = None
    text: str = ""


def extract_claims(text: str) -> list[AtomicClaim]:
    claims: list[tuple[int, AtomicClaim]] = []
    for m in _NUMERIC_CLAIM.finditer(text):
        claims.append((m.start(), AtomicClaim("numeric", m.group(1), float(m.group(3)), text=m.group(0))))
    for m in _RELATION_CLAIM.finditer(text):
        claims.append(
            (m.start(), AtomicClaim("relation", m.group(1), relation=m.group(2), obj=m.group(3).strip(), text=m.group(0)))
        )
    return [c for _, c in sorted(claims, key=lambda p: p[0])]


def _gold_quantities(qa: QAInstance | None) -> dict[str, float]:
    if qa is None:
        return {}
    out: dict[str, float] = {}
    if qa.counterfactual:
        for key in ("risk_before", "risk_after", "delta_risk"):
            out[key] = float(qa.counterfactual[key])
    if qa.risk is not None:
        out["risk"] = float(qa.risk)
    if qa.risk_threshold is not None:
        out["threshold"] = out["risk_threshold"] = float(qa.risk_threshold)
    if qa.confidence is not None:
        out["confidence"] = float(qa.confidence)
    return out


def _sensor_of(name: str) -> str:
    base, _, stat = name.rpartition("_")
    return base if stat in ("mean", "std", "min", "max", "trend") and base else name


def check_claim(claim: AtomicClaim, fact: EpisodeFact, kg: KnowledgeGraph | None, qa: QAInstance | None = None) -> bool:
    if claim.kind == "numeric":
        fm = fact.feature_map()
        actual = fm.get(claim.subject)
        if actual is None:
            actual = _gold_quantities(qa).get(claim.subject)
        if actual is None and claim.subject in _COUNT_FIELDS:
            actual = float(getattr(fact.provenance, claim.subject))
        return actual is not None and claim.value is not None and numbers_match(claim.value, actual)
    if kg is None or claim.obj is None:
        return False
    sensor = _sensor_of(claim.subject)
    for mode in kg.resolve_failure_modes(claim.obj):
        if fold(sensor) in {fold(s) for s in kg.profile_of(mode).associated_sensors}:
            return True
    if claim.relation == "belongs to":
        comp = kg.find_by_name("component", claim.subject.replace("_", " "))
        target = kg.find_by_name("asset_class", claim.obj)
        if comp is not None and target is not None:
            return target.id in kg.objects(comp.id, "component_of")
    return False


def claim_precision(text: str, fact: EpisodeFact, kg: KnowledgeGraph | None, qa: QAInstance | None = None) -> float | None:
    claims = extract_claims(text)
    if not claims:
        return None
    return sum(check_claim(c, fact, kg, qa) for c in claims) / len(claims)


# -- lexical entailment --------------------------------------------------------------

Judge = Callable[[str, Sequence[str]], float]


def split_sentences(text: str) -> list[str]:
    return [s.strip() for s in _SENTENCE_BREAK.split(text.strip()) if s.strip()]


def content_tokens(text: str) -> list[str]:
    out = []
    for tok in _TOKEN.findall(text.casefold()):
        tok = tok.rstrip("/")
        if tok and tok not in STOPWORDS:
            out.append(tok)
    return out


def _as_number(tok: str) -> float | None:
    try:
        v = float(tok)
    except ValueError:
        return None
    return v if math.isfinite(v) else None


def lexical_entailment_judge(sentence: str, evidence_texts: Sequence[str]) -> float:
    """Fraction of the sentence's content tokens found in the evidence.

    Numbers count as found when some evidence number lies within the claim tolerance.
    """
    tokens = content_tokens(sentence)
    if not tokens:
        return 1.0
    words: set[str] = set()
    numbers: list[float] = []
    for text in evidence_texts:
        for tok in content_tokens(text):
            num = _as_number(tok)
            if num is None:
                words.add(tok)
            else:
                numbers.append(num)
    hit = 0
    for tok in tokens:
        num = _as_number(tok)
        if num is None:
            hit += tok in words
        else:
            hit += any(numbers_match(num, v) for v in numbers)
    return hit / len(tokens)


def entailment_rates(reasoning: str, evidence: Sequence[str], judge: Judge = lexical_entailment_judge) -> tuple[float | None, bool | None]:
    sentences = split_sentences(reasoning)
    if not sentences:
        return None, None
    passed = [judge(s, evidence) >= ENTAIL_THRESHOLD for s in sentences]
    return sum(passed) / len(passed), all(passed)


# -- per-instance records ----------------------------------------------------------


@dataclass
class MetricRecord:
    qa_id: str
    task_type: str
    struct_ok: bool
    prov_ok: bool
    label_consistent: bool | None = None
    cf_direction_ok: bool | None = None
    temporal_ok: bool | None = None
    value_ok: bool | None = None
    entail_pass_rate: float | None = None
    entail_instance_pass: bool | None = None
    claim_precision: float | None = None
    outcome: str | None = None
    attempts: int = 1
    issues: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> MetricRecord:
        return cls(**dict(d))


def windows_overlap(a_start: str, a_end: str, b_start: str, b_end: str) -> bool:
    """Closed-interval overlap of two ``YYYY-MM-DD HH:MM:SS`` windows."""
    return a_start <= b_end and b_start <= a_end


def _predicted_number(env: AnswerEnvelope) -> float | None:
    if env.label is not None:
        try:
            return float(env.label)
        except ValueError:
            pass
    m = _FIRST_NUMBER.search(env.direct_answer)
    return float(m.group(0)) if m else None


def score_instance(
    answer: AnswerEnvelope | StructuralFailure,
    qa: QAInstance,
    report: VerifierReport,
    fact: EpisodeFact | None,
    kg: KnowledgeGraph | None = None,
    evidence: Sequence[str] = (),
    judge: Judge = lexical_entailment_judge,
) -> MetricRecord:
    rec = MetricRecord(
        qa_id=qa.qa_id,
        task_type=qa.task_type,
        struct_ok=report.struct_ok,
        prov_ok=report.prov_ok,
        label_consistent=report.label_consistent if qa.task_type == DIAGNOSTIC else None,
        cf_direction_ok=report.cf_direction_ok if qa.task_type in CF_TASKS else None,
        issues=report.codes,
    )
    env = answer if isinstance(answer, AnswerEnvelope) else None
    if qa.task_type == TEMPORAL:
        got = _predicted_number(env) if env else None
        rec.temporal_ok = got is not None and got == float(int(qa.label))
    if qa.task_type == DESCRIPTIVE:
        got = _predicted_number(env) if env else None
        rec.value_ok = got is not None and numbers_match(got, float(qa.label))
    if env is not None:
        rec.entail_pass_rate, rec.entail_instance_pass = entailment_rates(env.reasoning_answer, evidence, judge)
        if fact is not None:
            rec.claim_precision = claim_precision(env.reasoning_answer, fact, kg, qa)
    return rec


# -- aggregation ---------------------------------------------------------------------

METRIC_FIELDS = (
    "struct_ok",
    "prov_ok",
    "label_consistent",
    "cf_direction_ok",
    "temporal_ok",
    "value_ok",
    "entail_pass_rate",
    "entail_instance_pass",
    "claim_precision",
)


def _mean(values: Iterable[float | bool | None]) -> tuple[float | None, int]:
    vals = [float(v) for v in values if v is not None]
    return (sum(vals) / len(vals) if vals else None), len(vals)


@dataclass
class AggregateReport:
    config: str
    n_instances: int
    counts: dict[str, int]
    metrics: dict[str, dict[str, Any]]
    full_pass: float | None
    full_pass_strict: float | None
    n_diagnostic: int
    outcomes: dict[str, int]

    def metric(self, name: str) -> float | None:
        return self.metrics[name]["mean"]

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def full_pass_of(records: Iterable[MetricRecord]) -> tuple[float | None, float | None, int]:
    diag = [r for r in records if r.task_type == DIAGNOSTIC]
    if not diag:
        return None, None, 0
    # integer numerators keep the result free of accumulated rounding
    points = sum(int(r.struct_ok) + int(r.prov_ok) + int(bool(r.label_consistent)) for r in diag)
    strict = sum(bool(r.struct_ok and r.prov_ok and r.label_consistent) for r in diag)
    return points / (3 * len(diag)), strict / len(diag), len(diag)


def aggregate(config: str, records: Sequence[MetricRecord]) -> AggregateReport:
    counts: dict[str, int] = {}
    outcomes: dict[str, int] = {}
    for r in records:
        counts[r.task_type] = counts.get(r.task_type, 0) + 1
        if r.outcome:
            outcomes[r.outcome] = outcomes.get(r.outcome, 0) + 1
    metrics = {}
    for name in METRIC_FIELDS:
        mean, n = _mean(getattr(r, name) for r in records)
        metrics[name] = {"mean": mean, "n": n}
    fp, fps, nd = full_pass_of(records)
    return AggregateReport(
        config=config,
        n_instances=len(records),
        counts=dict(sorted(counts.items())),
        metrics=metrics,
        full_pass=fp,
        full_pass_strict=fps,
        n_diagnostic=nd,
        outcomes=dict(sorted(outcomes.items())),
    )


# -- significance ----------------------------------------------------------------------


def mcnemar_test(b: int, c: int) -> float:
    """Two-sided McNemar p-value from discordant counts ``b`` and ``c``.

    Exact binomial below 25 discordant pairs, continuity-corrected chi-square otherwise.
    """
    if b < 0 or c < 0 or int(b) != b or int(c) != c:
        raise ValueError("b and c must be non-negative integers")
    b, c = int(b), int(c)
    n = b + c
    if n == 0:
        return 1.0
    if n < 25:
        return float(min(1.0, 2.0 * stats.binom.cdf(min(b, c), n, 0.5)))
    statistic = max(0.0, abs(b - c) - 1.0) ** 2 / n
    return float(stats.chi2.sf(statistic, df=1))


def discordant_pairs(a: Mapping[str, bool], b: Mapping[str, bool]) -> tuple[int, int]:
    """(a right & b wrong, a wrong & b right) over the shared keys."""
    keys = sorted(set(a) & set(b))
    return sum(a[k] and not b[k] for k in keys), sum(b[k] and not a[k] for k in keys)


def instance_correct(rec: MetricRecord) -> bool | None:
    """The per-task correctness notion used for paired comparisons."""
    if rec.task_type == DIAGNOSTIC:
        return rec.struct_ok and rec.prov_ok and bool(rec.label_consistent)
    if rec.task_type in CF_TASKS:
        return bool(rec.cf_direction_ok) and rec.struct_ok
    if rec.task_type == TEMPORAL:
        return bool(rec.temporal_ok) and rec.struct_ok
    if rec.task_type == DESCRIPTIVE:
        return bool(rec.value_ok) and rec.struct_ok
    return rec.struct_ok


def compare_configs(a: Sequence[MetricRecord], b: Sequence[MetricRecord]) -> dict[str, dict[str, Any]]:
    """Per-task McNemar comparison of two runs over the same corpus."""
    out: dict[str, dict[str, Any]] = {}
    tasks = sorted({r.task_type for r in a} | {r.task_type for r in b})
    for task in tasks:
        ca = {r.qa_id: bool(instance_correct(r)) for r in a if r.task_type == task}
        cb = {r.qa_id: bool(instance_correct(r)) for r in b if r.task_type == task}
        nb, nc = discordant_pairs(ca, cb)
        out[task] = {"b": nb, "c": nc, "p_value": mcnemar_test(nb, nc), "n": len(set(ca) & set(cb))}
    return out
