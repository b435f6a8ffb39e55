"""Answer backends and the strict answer-envelope parser.

Three backends share one call shape, ``answer(prompt, attempt=0) -> str``:

* :class:`OracleBackend` replays the gold QA as a well-formed JSON answer,
  degrading it the way a real model would when a prompt block is ablated;
* :class:`FaultBackend` corrupts oracle output per a seeded :class:`FaultSpec`;
* :class:`RemoteBackend` POSTs ``{system, user, params}`` to an HTTP endpoint.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Protocol

import httpx

from .facts import dumps
from .prompts import Prompt
from .qa import COUNTERFACTUAL, QAInstance
from .risk import DECREASE, INCREASE, NO_CHANGE, direction_of

logger = logging.getLogger(__name__)

MANDATORY_KEYS = ("direct_answer", "reasoning_answer", "provenance", "confidence")
CORRUPTIONS = ("drop_key", "bad_fact_id", "ghost_feature", "wrong_row", "direction_flip", "non_json")
GHOST_FEATURE = "ghost_feature"
RELATION_SENTENCE = re.compile(r"\s*[A-Za-z_][A-Za-z0-9_]*\s+(?:indicates|belongs to)\s+[^.]+\.")


# -- envelope ------------------------------------------------------------------


@dataclass
class AnswerEnvelope:
    direct_answer: str
    reasoning_answer: str
    provenance: dict[str, Any]
    confidence: float
    counterfactual: dict[str, Any] | None = None
    label: str | None = None
    raw_text: str = ""


@dataclass
class StructuralFailure:
    reason: str
    raw_text: str = ""


def _is_number(v: Any) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _first_object(text: str) -> dict[str, Any] | None:
    decoder = json.JSONDecoder()
    for i, ch in enumerate(text):
        if ch != "{":
            continue
        try:
            obj, _ = decoder.raw_decode(text, i)
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict):
            return obj
    return None


def parse_answer(text: str) -> AnswerEnvelope | StructuralFailure:
    """Extract the first JSON object in ``text`` and check the mandatory fields.

    Prose around the object is tolerated; the failure reason names the first
    violated requirement.
    """
    if not isinstance(text, str):
        return StructuralFailure("response is not text", repr(text))
    obj = _first_object(text)
    if obj is None:
        return StructuralFailure("no JSON object found", text)
    for key in MANDATORY_KEYS:
        if key not in obj:
            return StructuralFailure(f"missing key '{key}'", text)
    for key in ("direct_answer", "reasoning_answer"):
        if not isinstance(obj[key], str):
            return StructuralFailure(f"key '{key}' must be a string", text)
    prov = obj["provenance"]
    if not isinstance(prov, dict):
        return StructuralFailure("key 'provenance' must be an object", text)
    if "fact_id" in prov and not isinstance(prov["fact_id"], str):
        return StructuralFailure("provenance.fact_id must be a string", text)
    if "features" in prov and not (
        isinstance(prov["features"], list) and all(isinstance(f, str) for f in prov["features"])
    ):
        return StructuralFailure("provenance.features must be a list of strings", text)
    if "file" in prov and not isinstance(prov["file"], str):
        return StructuralFailure("provenance.file must be a string", text)
    if "row" in prov and not (isinstance(prov["row"], int) and not isinstance(prov["row"], bool)):
        return StructuralFailure("provenance.row must be an integer", text)
    conf = obj["confidence"]
    if not _is_number(conf) or not 0.0 <= float(conf) <= 1.0:
        return StructuralFailure("key 'confidence' must be a number in [0, 1]", text)
    cf = obj.get("counterfactual")
    if cf is not None:
        if not isinstance(cf, dict):
            return StructuralFailure("key 'counterfactual' must be an object", text)
        for key in ("risk_before", "risk_after"):
            if key in cf and cf[key] is not None and not _is_number(cf[key]):
                return StructuralFailure(f"counterfactual.{key} must be a number", text)
        if "direction" in cf and cf["direction"] is not None and not isinstance(cf["direction"], str):
            return StructuralFailure("counterfactual.direction must be a string", text)
    label = obj.get("label")
    return AnswerEnvelope(
        direct_answer=obj["direct_answer"],
        reasoning_answer=obj["reasoning_answer"],
        provenance=prov,
        confidence=float(conf),
        counterfactual=cf,
        label=label if isinstance(label, str) else None,
        raw_text=text,
    )


# -- backends --------------------------------------------------------------------


class Backend(Protocol):
    name: str

    def answer(self, prompt: Prompt, attempt: int = 0) -> str: ...


def seeded_rng(*parts: Any) -> random.Random:
    """RNG keyed on a stable hash of ``parts`` (independent of PYTHONHASHSEED)."""
    digest = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def _direction_sentence(direction: str) -> str:
    if direction == DECREASE:
        return "The risk of failure would decrease."
    if direction == INCREASE:
        return "The risk of failure would increase."
    return "The risk of failure would not change."


class OracleBackend:
    """Answers every prompt with its gold QA, limited to what the prompt exposes.

    Without simulator access the counterfactual direction is a seeded coin flip
    and no risk numbers are given; without episodic evidence the fact id and
    row cannot be cited; without the KG, relation sentences are omitted.
    """

    name = "oracle"

    def __init__(self, corpus: Iterable[QAInstance] | Mapping[str, QAInstance], seed: int = 0):
        items = corpus.values() if isinstance(corpus, Mapping) else corpus
        self.index = {qa.qa_id: qa for qa in items}
        self.seed = seed

    def payload(self, prompt: Prompt, attempt: int = 0) -> dict[str, Any]:
        qa = self.index.get(prompt.qa_id)
        if qa is None:
            raise KeyError(f"oracle has no gold answer for {prompt.qa_id}")
        opts = prompt.options
        reasoning = qa.reasoning_answer
        if not opts.include_kg:
            reasoning = RELATION_SENTENCE.sub("", reasoning).strip()
        prov: dict[str, Any] = {"features": list(qa.cited_features), "file": qa.provenance["file"]}
        if opts.include_episodic:
            prov = {"fact_id": qa.fact_id, **prov, "row": qa.provenance["row"]}
        out: dict[str, Any] = {
            "direct_answer": qa.direct_answer,
            "reasoning_answer": reasoning,
            "provenance": prov,
            "confidence": qa.confidence if qa.confidence is not None else 0.9,
            "label": qa.label,
        }
        if qa.counterfactual is not None:
            if opts.include_simulator:
                cf = qa.counterfactual
                out["counterfactual"] = {
                    "risk_before": cf["risk_before"],
                    "risk_after": cf["risk_after"],
                    "direction": cf["direction"],
                }
            else:
                guess = INCREASE if seeded_rng(self.seed, "coin", qa.qa_id, attempt).random() < 0.5 else DECREASE
                out["counterfactual"] = {"direction": guess}
                out["reasoning_answer"] = "No simulator output is available, so the direction is estimated from the maintenance history alone."
                if qa.task_type == COUNTERFACTUAL:
                    out["direct_answer"] = _direction_sentence(guess)
        return out

    def answer(self, prompt: Prompt, attempt: int = 0) -> str:
        return dumps(self.payload(prompt, attempt))


@dataclass(frozen=True)
class FaultSpec:
    corruption: str
    rate: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.corruption not in CORRUPTIONS:
            raise ValueError(f"unknown corruption {self.corruption!r}; expected one of {CORRUPTIONS}")
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError("rate must lie in [0, 1]")


def _flip_cf(cf: dict[str, Any]) -> dict[str, Any]:
    before, after = cf.get("risk_before"), cf.get("risk_after")
    gold = cf.get("direction")
    if _is_number(before) and _is_number(after):
        gold = direction_of(after - before)
        if gold != NO_CHANGE:
            before, after = after, before
        else:
            before, after = 0.25, 0.75
        return {"risk_before": before, "risk_after": after, "direction": direction_of(after - before)}
    flipped = DECREASE if gold == INCREASE else INCREASE
    return {"direction": flipped}


class FaultBackend:
    """Oracle output corrupted for a seeded fraction of (qa_id, attempt) pairs."""

    name = "fault"

    def __init__(self, oracle: OracleBackend, spec: FaultSpec):
        self.oracle = oracle
        self.spec = spec

    def corrupts(self, qa_id: str, attempt: int = 0) -> bool:
        if self.spec.rate <= 0.0:
            return False
        return seeded_rng(self.spec.seed, self.spec.corruption, qa_id, attempt).random() < self.spec.rate

    def applicable(self, prompt: Prompt) -> bool:
        if self.spec.corruption == "direction_flip":
            qa = self.oracle.index.get(prompt.qa_id)
            return qa is not None and qa.counterfactual is not None
        return True

    def answer(self, prompt: Prompt, attempt: int = 0) -> str:
        payload = self.oracle.payload(prompt, attempt)
        if not (self.applicable(prompt) and self.corrupts(prompt.qa_id, attempt)):
            return dumps(payload)
        rng = seeded_rng(self.spec.seed, "how", prompt.qa_id, attempt)
        kind = self.spec.corruption
        prov = payload["provenance"]
        if kind == "non_json":
            return "I believe the answer follows from the telemetry, but I cannot format it as requested."
        if kind == "drop_key":
            del payload[rng.choice(MANDATORY_KEYS)]
        elif kind == "bad_fact_id":
            prov["fact_id"] = f"missing_{prompt.fact_id}_{rng.randrange(10**6)}"
        elif kind == "ghost_feature":
            prov["features"] = list(prov.get("features", [])) + [GHOST_FEATURE]
        elif kind == "wrong_row":
            prov["row"] = int(prov.get("row", 0)) + 1 + rng.randrange(1000)
        elif kind == "direction_flip":
            payload["counterfactual"] = _flip_cf(payload["counterfactual"])
            qa = self.oracle.index[prompt.qa_id]
            if qa.task_type == COUNTERFACTUAL:
                payload["direct_answer"] = _direction_sentence(payload["counterfactual"]["direction"])
        return dumps(payload)


class RemoteError(RuntimeError):
    pass


def _auth_headers(raw: str | None) -> dict[str, str]:
    if not raw:
        return {}
    name, sep, value = raw.partition(":")
    if not sep:
        return {"Authorization": raw.strip()}
    return {name.strip(): value.strip()}


@dataclass
class RemoteBackend:
    """Thin HTTP shim: request ``{system, user, params}``, response body is the raw answer."""

    url: str
    headers: dict[str, str] = field(default_factory=dict)
    params: dict[str, Any] = field(default_factory=dict)
    timeout: float = 60.0
    retries: int = 2
    backoff: float = 0.5
    max_in_flight: int = 4
    name: str = "remote"

    def __post_init__(self) -> None:
        if self.max_in_flight <= 0:
            raise ValueError("max_in_flight must be positive")
        self._slots = threading.BoundedSemaphore(self.max_in_flight)

    @classmethod
    def from_env(cls, **kwargs: Any) -> RemoteBackend:
        url = kwargs.pop("url", None) or os.environ.get("ANSWERER_URL")
        if not url:
            raise RemoteError("ANSWERER_URL is not set")
        headers = _auth_headers(os.environ.get("ANSWERER_AUTH_HEADER"))
        headers.update(kwargs.pop("headers", {}))
        return cls(url=url, headers=headers, **kwargs)

    def answer(self, prompt: Prompt, attempt: int = 0) -> str:
        body = {"system": prompt.system_text, "user": prompt.user_text, "params": self.params}
        last: Exception | None = None
        with self._slots:
            for i in range(self.retries + 1):
                try:
                    resp = httpx.post(self.url, json=body, headers=self.headers, timeout=self.timeout)
                    if resp.status_code >= 500:
                        raise RemoteError(f"HTTP {resp.status_code}")
                    if resp.status_code >= 400:
                        raise RemoteError(f"{prompt.qa_id}: HTTP {resp.status_code} (not retried)")
                    return resp.text
                except RemoteError as exc:
                    if "not retried" in str(exc):
                        raise
                    last = exc
                except httpx.HTTPError as exc:
                    last = exc
                if i < self.retries:
                    time.sleep(self.backoff * (2**i))
        raise RemoteError(f"{prompt.qa_id}: request failed after {self.retries + 1} attempts: {last}")

    def answer_many(self, prompts: list[Prompt]) -> list[str]:
        with ThreadPoolExecutor(max_workers=self.max_in_flight) as pool:
            return list(pool.map(self.answer, prompts))
