"""Multinomial logistic risk model and do-intervention simulator.

The classifier maps a standardized feature vector to P(y|x) over episode
labels. Risk is ``1 - P(healthy|x)``; an intervention replaces named raw
feature values and re-evaluates the risk.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np
import pandas as pd

from .facts import HEALTHY, EpisodeFact, dumps

logger = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1
# |delta| at or below this is "no_change"; shared with the verifier.
DIRECTION_EPS = 1e-6
INCREASE, DECREASE, NO_CHANGE = "increase", "decrease", "no_change"
DIRECTIONS = (INCREASE, DECREASE, NO_CHANGE)


class RiskModelError(ValueError):
    pass


def direction_of(delta: float, eps: float = DIRECTION_EPS) -> str:
    if abs(delta) <= eps:
        return NO_CHANGE
    return INCREASE if delta > 0 else DECREASE


def confidence_of(risk_before: float) -> float:
    """Confidence grows as the baseline risk moves away from 0.5."""
    return 0.5 + 0.5 * min(1.0, abs(risk_before - 0.5) / 0.5)


@dataclass(frozen=True)
class TrainConfig:
    l2_strength: float = 1e-3
    max_iters: int = 5000
    tolerance: float = 1e-6

    def __post_init__(self) -> None:
        if self.l2_strength < 0:
            raise ValueError("l2_strength must be >= 0")
        if self.max_iters <= 0:
            raise ValueError("max_iters must be positive")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")


@dataclass
class FeatureVector:
    values: np.ndarray
    feature_names: list[str]

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.feature_names),):
            raise ValueError("values and feature_names differ in length")

    def as_map(self) -> dict[str, float | None]:
        return {n: (None if math.isnan(v) else float(v)) for n, v in zip(self.feature_names, self.values)}


@dataclass
class RiskModel:
    class_names: list[str]
    feature_names: list[str]
    weights: np.ndarray  # (K, D), acts on standardized features
    biases: np.ndarray  # (K,)
    center: np.ndarray  # (D,)
    scale: np.ndarray  # (D,)
    training_meta: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "class_names": list(self.class_names),
            "feature_names": list(self.feature_names),
            "weights": [float(v) for v in self.weights.ravel()],
            "biases": [float(v) for v in self.biases],
            "standardization": {
                "center": [float(v) for v in self.center],
                "scale": [float(v) for v in self.scale],
            },
            "training_meta": self.training_meta,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> RiskModel:
        version = d.get("format_version")
        if version != MODEL_FORMAT_VERSION:
            raise RiskModelError(f"unsupported model format_version {version!r}")
        k, n = len(d["class_names"]), len(d["feature_names"])
        return cls(
            class_names=list(d["class_names"]),
            feature_names=list(d["feature_names"]),
            weights=np.asarray(d["weights"], dtype=float).reshape(k, n),
            biases=np.asarray(d["biases"], dtype=float),
            center=np.asarray(d["standardization"]["center"], dtype=float),
            scale=np.asarray(d["standardization"]["scale"], dtype=float),
            training_meta=dict(d.get("training_meta", {})),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(dumps(self.to_dict()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> RiskModel:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    @property
    def has_healthy(self) -> bool:
        return HEALTHY in self.class_names

    def vectorize(self, x: Mapping[str, float | None] | FeatureVector | EpisodeFact, warn: bool = True) -> np.ndarray:
        """Raw feature vector in model order; missing or null entries are NaN."""
        if isinstance(x, EpisodeFact):
            x = x.feature_map()
        elif isinstance(x, FeatureVector):
            x = x.as_map()
        index = {n: i for i, n in enumerate(self.feature_names)}
        out = np.full(len(self.feature_names), np.nan)
        unknown = []
        for name, value in x.items():
            i = index.get(name)
            if i is None:
                unknown.append(name)
                continue
            if value is not None:
                out[i] = float(value)
        if unknown and warn:
            logger.warning("ignoring %d feature(s) unknown to the model: %s", len(unknown), ", ".join(sorted(unknown)))
        return out

    def standardize(self, raw: np.ndarray) -> np.ndarray:
        z = (raw - self.center) / self.scale
        return np.where(np.isnan(z), 0.0, z)

    def standardized(self, x: Mapping[str, float | None] | EpisodeFact) -> dict[str, float]:
        z = self.standardize(self.vectorize(x, warn=False))
        return dict(zip(self.feature_names, (float(v) for v in z)))


def softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def loss_and_grad(theta: np.ndarray, z: np.ndarray, y: np.ndarray, l2: float) -> tuple[float, np.ndarray]:
    """Mean cross-entropy plus (l2/2)||W||^2 and its gradient.

    ``theta`` packs W (K x D, row-major) followed by b (K); ``y`` holds class indices.
    Biases are not regularized.
    """
    n, d = z.shape
    k = theta.size // (d + 1)
    w = theta[: k * d].reshape(k, d)
    b = theta[k * d :]
    scores = z @ w.T + b
    shifted = scores - scores.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    log_p = shifted - log_norm[:, None]
    loss = -log_p[np.arange(n), y].mean() + 0.5 * l2 * float(np.sum(w * w))
    p = np.exp(log_p)
    p[np.arange(n), y] -= 1.0
    p /= n
    grad_w = p.T @ z + l2 * w
    grad_b = p.sum(axis=0)
    return float(loss), np.concatenate([grad_w.ravel(), grad_b])


def _minimize(theta: np.ndarray, z: np.ndarray, y: np.ndarray, cfg: TrainConfig) -> tuple[np.ndarray, dict[str, Any]]:
    loss, grad = loss_and_grad(theta, z, y, cfg.l2_strength)
    step = 1.0
    it = 0
    gnorm = float(np.linalg.norm(grad))
    while it < cfg.max_iters and gnorm > cfg.tolerance:
        # Armijo backtracking from a slightly enlarged previous step
        step = min(step * 2.0, 1e4)
        while True:
            cand = theta - step * grad
            cand_loss, cand_grad = loss_and_grad(cand, z, y, cfg.l2_strength)
            if cand_loss <= loss - 1e-4 * step * gnorm**2 or step < 1e-12:
                break
            step *= 0.5
        theta, loss, grad = cand, cand_loss, cand_grad
        gnorm = float(np.linalg.norm(grad))
        it += 1
    return theta, {"iterations": it, "final_loss": loss, "grad_norm": gnorm, "converged": gnorm <= cfg.tolerance}


def _frame_from_facts(facts: Iterable[EpisodeFact]) -> tuple[pd.DataFrame, list[str]]:
    rows, labels, names = [], [], []
    seen: set[str] = set()
    for fact in facts:
        fm = fact.feature_map()
        for name in fm:
            if name not in seen:
                seen.add(name)
                names.append(name)
        rows.append(fm)
        labels.append(fact.label)
    frame = pd.DataFrame(rows, columns=sorted(names), dtype=float)
    return frame, labels


def _frame_from_csv(path: str | Path) -> tuple[pd.DataFrame, list[str]]:
    df = pd.read_csv(path, dtype={"fact_id": str, "label": str, "asset_id": str})
    labels = df["label"].tolist()
    features = df.drop(columns=["fact_id", "label", "asset_id"])
    return features.apply(pd.to_numeric, errors="coerce").astype(float), labels


def train(
    data: Iterable[EpisodeFact] | str | Path,
    config: TrainConfig | None = None,
) -> RiskModel:
    """Fit the model on facts or on an exported feature CSV. Deterministic (zero init)."""
    cfg = config or TrainConfig()
    if isinstance(data, (str, Path)):
        frame, labels = _frame_from_csv(data)
        source = Path(data).name
    else:
        frame, labels = _frame_from_facts(data)
        source = "facts"
    if not labels:
        raise RiskModelError("no training examples")
    class_names = sorted(set(labels))
    if len(class_names) < 2:
        raise RiskModelError(f"need at least two distinct labels, got {class_names}")

    frame = frame[sorted(frame.columns)]
    all_null = [c for c in frame.columns if frame[c].isna().all()]
    if all_null:
        logger.warning("dropping all-null feature column(s): %s", ", ".join(all_null))
        frame = frame.drop(columns=all_null)
    names = list(frame.columns)
    raw = frame.to_numpy(dtype=float)
    center = np.nanmean(raw, axis=0) if raw.size else np.zeros(len(names))
    scale = np.nanstd(raw, axis=0) if raw.size else np.ones(len(names))
    scale = np.where((scale > 0) & np.isfinite(scale), scale, 1.0)
    z = (raw - center) / scale
    z = np.where(np.isnan(z), 0.0, z)

    index = {c: i for i, c in enumerate(class_names)}
    y = np.array([index[lbl] for lbl in labels], dtype=int)
    theta0 = np.zeros(len(class_names) * (len(names) + 1))
    theta, info = _minimize(theta0, z, y, cfg)
    k, d = len(class_names), len(names)
    w = theta[: k * d].reshape(k, d)
    b = theta[k * d :]
    acc = float(np.mean(np.argmax(z @ w.T + b, axis=1) == y))
    if not info["converged"]:
        logger.warning("training stopped at max_iters=%d with grad norm %.3g", cfg.max_iters, info["grad_norm"])
    meta = {
        "l2_strength": cfg.l2_strength,
        "max_iters": cfg.max_iters,
        "tolerance": cfg.tolerance,
        "optimizer": "gradient_descent_backtracking",
        "n_examples": len(labels),
        "source": source,
        "dropped_all_null": all_null,
        "train_accuracy": acc,
        **info,
    }
    return RiskModel(class_names, names, w, b, center, scale, meta)


def predict_proba(model: RiskModel, x: Mapping[str, float | None] | FeatureVector | EpisodeFact) -> dict[str, float]:
    return _proba(model, model.vectorize(x))


def _proba(model: RiskModel, raw: np.ndarray) -> dict[str, float]:
    z = model.standardize(raw)
    p = softmax(model.weights @ z + model.biases)
    return {c: float(v) for c, v in zip(model.class_names, p)}


def risk_of(model: RiskModel, probs: Mapping[str, float]) -> float:
    if not model.has_healthy:
        raise RiskModelError("model has no 'healthy' class; risk is undefined")
    return min(1.0, max(0.0, 1.0 - probs[HEALTHY]))


@dataclass
class CounterfactualResult:
    intervention: dict[str, float]
    risk_before: float
    risk_after: float
    delta_risk: float
    direction: str
    probs_before: dict[str, float]
    probs_after: dict[str, float]
    confidence: float

    def intervention_text(self) -> str:
        return ", ".join(f"do({k} = {float(v)!r})" for k, v in sorted(self.intervention.items()))

    def to_dict(self) -> dict[str, Any]:
        return {
            "intervention": self.intervention_text(),
            "do": {k: float(v) for k, v in sorted(self.intervention.items())},
            "risk_before": self.risk_before,
            "risk_after": self.risk_after,
            "delta_risk": self.delta_risk,
            "direction": self.direction,
            "probs_before": self.probs_before,
            "probs_after": self.probs_after,
            "confidence": self.confidence,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> CounterfactualResult:
        return cls(
            intervention=dict(d.get("do", {})),
            risk_before=float(d["risk_before"]),
            risk_after=float(d["risk_after"]),
            delta_risk=float(d["delta_risk"]),
            direction=d["direction"],
            probs_before=dict(d.get("probs_before", {})),
            probs_after=dict(d.get("probs_after", {})),
            confidence=float(d.get("confidence", 0.5)),
        )


def simulate_intervention(
    model: RiskModel,
    x: Mapping[str, float | None] | FeatureVector | EpisodeFact,
    intervention: Mapping[str, float],
) -> CounterfactualResult:
    """Re-evaluate risk after replacing raw feature values (names unknown to the model are ignored)."""
    if not model.has_healthy:
        raise RiskModelError("model has no 'healthy' class; cannot simulate interventions")
    raw = model.vectorize(x)
    raw_do = raw.copy()
    index = {n: i for i, n in enumerate(model.feature_names)}
    applied: dict[str, float] = {}
    for name, value in intervention.items():
        i = index.get(name)
        if i is None:
            logger.debug("intervention on unknown feature %s ignored", name)
            continue
        raw_do[i] = float(value)
        applied[name] = float(value)
    probs_before = _proba(model, raw)
    probs_after = _proba(model, raw_do)
    r_before = risk_of(model, probs_before)
    r_after = risk_of(model, probs_after)
    delta = r_after - r_before
    return CounterfactualResult(
        intervention=applied,
        risk_before=r_before,
        risk_after=r_after,
        delta_risk=delta,
        direction=direction_of(delta),
        probs_before=probs_before,
        probs_after=probs_after,
        confidence=confidence_of(r_before),
    )
