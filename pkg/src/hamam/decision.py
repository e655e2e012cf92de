"""Softmax decoding, the neutral threshold rule and logit ensembling."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from hamam.dataset import Record, SentimentLabel
from hamam.encoder import tokenize
from hamam.errors import ValidationError
from hamam.heads import EntitySentimentModel, collate


@dataclass(frozen=True)
class DecisionConfig:
    neutral_threshold: float | None = None

    def __post_init__(self):
        t = self.neutral_threshold
        if t is not None and not 0.0 <= t <= 1.0:
            raise ValidationError(f"neutral_threshold must lie in [0, 1], got {t}")


PAPER_NEUTRAL_THRESHOLD = 0.55


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def decide(probs, config: DecisionConfig = DecisionConfig()) -> SentimentLabel:
    """Argmax with ties resolved toward the lower class index.

    With a threshold ``t``, a winning neutral class whose probability is
    strictly below ``t`` is replaced by the better of positive/negative.
    """
    p = np.asarray(probs, dtype=np.float64)
    best = SentimentLabel(int(np.argmax(p)))  # np.argmax returns the first maximum
    t = config.neutral_threshold
    if best is SentimentLabel.NEUTRAL and t is not None and p[SentimentLabel.NEUTRAL] < t:
        best = SentimentLabel(int(np.argmax(p[:2])))
    return best


def ensemble_logits(logit_sets: Sequence) -> np.ndarray:
    """Uniform mean of member logits.

    Sums are correctly rounded (``math.fsum``), so the result does not depend
    on member order.
    """
    if len(logit_sets) == 0:
        raise ValidationError("cannot ensemble an empty list of logits")
    stacked = np.asarray([np.asarray(l, dtype=np.float64) for l in logit_sets])
    flat = stacked.reshape(len(stacked), -1)
    sums = np.array([math.fsum(flat[:, j]) for j in range(flat.shape[1])])
    return (sums / len(stacked)).reshape(stacked.shape[1:])


@torch.no_grad()
def model_logits(model: EntitySentimentModel, records: Sequence[Record], batch_size: int = 64) -> np.ndarray:
    """Eval-mode final logits, one row per record, each model tokenizing with its own vocabulary."""
    was_training = model.training
    model.eval()
    rows = []
    try:
        for start in range(0, len(records), batch_size):
            chunk = records[start : start + batch_size]
            inputs = [model.prepare(tokenize(r.sentence, r.entity_char_span, model.vocab)) for r in chunk]
            rows.append(model(collate(inputs))["final"].double().numpy())
    finally:
        model.train(was_training)
    return np.concatenate(rows) if rows else np.zeros((0, 3))


@dataclass
class Prediction:
    id: str
    label: SentimentLabel
    probs: np.ndarray
    per_model_logits: np.ndarray


def predict_many(
    models: Sequence[EntitySentimentModel],
    records: Sequence[Record],
    config: DecisionConfig = DecisionConfig(),
) -> list[Prediction]:
    if not models:
        raise ValidationError("at least one model is required")
    per_model = np.stack([model_logits(m, records) for m in models], axis=1)  # (R, M, 3)
    out = []
    for r, logits in zip(records, per_model):
        probs = softmax(ensemble_logits(logits))
        out.append(Prediction(r.id, decide(probs, config), probs, logits))
    return out


def predict(models, record: Record, config: DecisionConfig = DecisionConfig()):
    """Returns ``(label, probs, per_model_logits)`` for one record."""
    p = predict_many(models, [record], config)[0]
    return p.label, p.probs, p.per_model_logits
