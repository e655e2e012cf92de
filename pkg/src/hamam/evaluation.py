"""Confusion matrices, macro F1 over positive/negative, and error reports.

Macro F1_pn is the unweighted mean of the positive-class and negative-class
F1 scores. Neutral is left out of the average but stays in the confusion
matrix, so neutral predictions still cost positive/negative recall and
neutral golds still cost their precision.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from hamam.dataset import LABELS, Record, SentimentLabel
from hamam.errors import AlignmentError

POS, NEG, NEU = SentimentLabel.POSITIVE, SentimentLabel.NEGATIVE, SentimentLabel.NEUTRAL


@dataclass(frozen=True)
class ConfusionMatrix:
    """3x3 counts; rows are gold labels, columns are predictions."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.shape != (3, 3) or (counts < 0).any():
            raise ValueError("confusion matrix must be a non-negative 3x3 integer array")
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def precision(self, c: int) -> float:
        col = self.counts[:, c].sum()
        return float(self.counts[c, c] / col) if col else 0.0

    def recall(self, c: int) -> float:
        row = self.counts[c, :].sum()
        return float(self.counts[c, c] / row) if row else 0.0

    def f1(self, c: int) -> float:
        """Zero whenever precision or recall is undefined or both are zero."""
        p, r = self.precision(c), self.recall(c)
        return 2 * p * r / (p + r) if p + r > 0 else 0.0

    def to_list(self) -> list[list[int]]:
        return self.counts.tolist()


def confusion(
    golds: Sequence[int],
    preds: Sequence[int],
    gold_ids: Sequence[str] | None = None,
    pred_ids: Sequence[str] | None = None,
) -> ConfusionMatrix:
    if len(golds) != len(preds):
        raise AlignmentError(f"{len(golds)} gold labels but {len(preds)} predictions")
    if gold_ids is not None and pred_ids is not None and list(gold_ids) != list(pred_ids):
        bad = [f"{g}!={p}" for g, p in zip(gold_ids, pred_ids) if g != p][:10]
        raise AlignmentError(f"gold/prediction ids are misaligned: {', '.join(bad)}")
    counts = np.zeros((3, 3), dtype=np.int64)
    for g, p in zip(golds, preds):
        counts[int(g), int(p)] += 1
    return ConfusionMatrix(counts)


def macro_f1_pn(cm: ConfusionMatrix) -> float:
    """Mean of positive and negative F1, scaled to [0, 100]."""
    return 100.0 * (cm.f1(POS) + cm.f1(NEG)) / 2


def metrics(cm: ConfusionMatrix) -> dict:
    return {
        "macro_f1_pn": macro_f1_pn(cm),
        "f1_positive": 100.0 * cm.f1(POS),
        "f1_negative": 100.0 * cm.f1(NEG),
        "f1_neutral": 100.0 * cm.f1(NEU),
        "confusion_matrix": cm.to_list(),
    }


@dataclass
class ErrorEntry:
    id: str
    sentence: str
    entity: str
    gold: SentimentLabel
    pred: SentimentLabel
    pred_prob: float
    probs: tuple[float, float, float]


@dataclass
class ErrorReport:
    total: int
    groups: dict[tuple[SentimentLabel, SentimentLabel], list[ErrorEntry]] = field(default_factory=dict)

    @property
    def error_count(self) -> int:
        return sum(len(v) for v in self.groups.values())

    @property
    def polarity_flips(self) -> int:
        """Positive predicted as negative or the reverse."""
        return sum(len(v) for (g, p), v in self.groups.items() if {g, p} == {POS, NEG})

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "errors": self.error_count,
            "polarity_flips": self.polarity_flips,
            "groups": [
                {
                    "gold": g.tag,
                    "pred": p.tag,
                    "count": len(entries),
                    "polarity_flip": {g, p} == {POS, NEG},
                    "entries": [
                        {
                            "id": e.id,
                            "sentence": e.sentence,
                            "entity": e.entity,
                            "pred_prob": e.pred_prob,
                            "probs": list(e.probs),
                        }
                        for e in entries
                    ],
                }
                for (g, p), entries in self.groups.items()
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=2)

    def render(self) -> str:
        lines = [
            f"Error report: {self.error_count} misclassified of {self.total} "
            f"({self.polarity_flips} positive/negative flips)"
        ]
        for (g, p), entries in self.groups.items():
            flag = "  [POLARITY FLIP]" if {g, p} == {POS, NEG} else ""
            lines.append("")
            lines.append(f"gold={g.tag} pred={p.tag}: {len(entries)}{flag}")
            for e in entries:
                lines.append(f"  {e.pred_prob:.3f}  {e.id}  [{e.entity}]  {e.sentence}")
        return "\n".join(lines) + "\n"


def error_report(
    records: Sequence[Record],
    golds: Sequence[int],
    preds: Sequence[int],
    probs: Sequence[Sequence[float]],
) -> ErrorReport:
    """Group misclassifications by (gold, pred) cell.

    Cells are ordered by descending size, then label order; polarity flips
    come first since they are the rare, interesting case. Entries within a
    cell are sorted by descending predicted-class probability, then id.
    """
    if not len(records) == len(golds) == len(preds) == len(probs):
        raise AlignmentError("records, golds, preds and probs must have equal length")
    cells: dict[tuple[SentimentLabel, SentimentLabel], list[ErrorEntry]] = {}
    for r, g, p, pr in zip(records, golds, preds, probs):
        g, p = SentimentLabel(int(g)), SentimentLabel(int(p))
        if g == p:
            continue
        pr = tuple(float(x) for x in pr)
        cells.setdefault((g, p), []).append(
            ErrorEntry(r.id, r.sentence, r.entity_text, g, p, pr[p], pr)
        )
    for entries in cells.values():
        entries.sort(key=lambda e: (-e.pred_prob, e.id))
    order = sorted(cells, key=lambda gp: ({gp[0], gp[1]} != {POS, NEG}, -len(cells[gp]), gp[0], gp[1]))
    return ErrorReport(total=len(records), groups={gp: cells[gp] for gp in order})
