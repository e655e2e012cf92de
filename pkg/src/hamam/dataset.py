"""Records, JSONL ingestion and stratified fold splitting."""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np

from hamam.errors import ParseError, StratificationError, ValidationError


class SentimentLabel(IntEnum):
    """Class indices. The order doubles as the tie-breaking order."""

    POSITIVE = 0
    NEGATIVE = 1
    NEUTRAL = 2

    @classmethod
    def parse(cls, value: str | int | SentimentLabel) -> SentimentLabel:
        if isinstance(value, cls):
            return value
        if isinstance(value, int) and not isinstance(value, bool):
            return cls(value)
        if isinstance(value, str):
            try:
                return cls[value.strip().upper()]
            except KeyError:
                pass
        raise ValueError(f"unknown sentiment label {value!r}")

    @property
    def tag(self) -> str:
        return self.name.lower()


LABELS = tuple(SentimentLabel)


@dataclass(frozen=True)
class Record:
    id: str
    sentence: str
    entity_char_span: tuple[int, int]
    entity_text: str
    label: SentimentLabel | None = None

    def __post_init__(self):
        start, end = self.entity_char_span
        if not (0 <= start < end <= len(self.sentence)):
            raise ValidationError(
                f"record {self.id!r}: span ({start}, {end}) out of bounds "
                f"for sentence of length {len(self.sentence)}"
            )
        if self.sentence[start:end] != self.entity_text:
            raise ValidationError(
                f"record {self.id!r}: sentence[{start}:{end}] is "
                f"{self.sentence[start:end]!r}, expected {self.entity_text!r}"
            )


def parse_record(line: str, line_number: int | None = None) -> Record:
    """Parse one JSON object into a validated :class:`Record`.

    Unknown fields are ignored. ``label`` may be absent or null.
    """
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON: {exc.msg}", line_number) from None
    if not isinstance(obj, dict):
        raise ParseError("expected a JSON object", line_number)
    missing = [k for k in ("id", "sentence", "entity_char_span", "entity_text") if k not in obj]
    if missing:
        raise ParseError(f"missing field(s): {', '.join(missing)}", line_number)

    record_id = str(obj["id"])
    span = obj["entity_char_span"]
    if (
        not isinstance(span, (list, tuple))
        or len(span) != 2
        or not all(isinstance(x, int) and not isinstance(x, bool) for x in span)
    ):
        raise ValidationError(f"record {record_id!r}: entity_char_span must be two integers")
    if not isinstance(obj["sentence"], str) or not isinstance(obj["entity_text"], str):
        raise ValidationError(f"record {record_id!r}: sentence and entity_text must be strings")

    label = obj.get("label")
    if label is not None:
        try:
            label = SentimentLabel.parse(label)
        except ValueError as exc:
            raise ValidationError(f"record {record_id!r}: {exc}") from None

    return Record(
        id=record_id,
        sentence=obj["sentence"],
        entity_char_span=(span[0], span[1]),
        entity_text=obj["entity_text"],
        label=label,
    )


def record_to_dict(record: Record) -> dict:
    out = {
        "id": record.id,
        "sentence": record.sentence,
        "entity_char_span": list(record.entity_char_span),
        "entity_text": record.entity_text,
    }
    if record.label is not None:
        out["label"] = record.label.tag
    return out


def serialize_record(record: Record) -> str:
    """Canonical single-line JSON form (fixed key order, UTF-8 kept literal)."""
    return json.dumps(record_to_dict(record), ensure_ascii=False)


def iter_records(lines: Iterable[str]) -> Iterator[Record]:
    for number, line in enumerate(lines, start=1):
        if line.strip():
            yield parse_record(line, number)


def read_records(path: str | Path) -> list[Record]:
    with open(path, encoding="utf-8") as fh:
        records = list(iter_records(fh))
    seen: set[str] = set()
    for r in records:
        if r.id in seen:
            raise ValidationError(f"duplicate record id {r.id!r} in {path}")
        seen.add(r.id)
    return records


def dump_records(records: Iterable[Record]) -> str:
    return "".join(serialize_record(r) + "\n" for r in records)


@dataclass(frozen=True)
class FoldAssignment:
    fold_count: int
    assignment: Mapping[str, int]

    def validation_ids(self, fold: int) -> list[str]:
        return [rid for rid, f in self.assignment.items() if f == fold]

    def split(self, records: list[Record], fold: int) -> tuple[list[Record], list[Record]]:
        """Return ``(train, validation)`` where validation is ``fold``."""
        train = [r for r in records if self.assignment[r.id] != fold]
        val = [r for r in records if self.assignment[r.id] == fold]
        return train, val

    def to_json(self) -> str:
        return json.dumps(
            {"fold_count": self.fold_count, "assignment": dict(self.assignment)},
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> FoldAssignment:
        obj = json.loads(text)
        return cls(int(obj["fold_count"]), {str(k): int(v) for k, v in obj["assignment"].items()})


def split_folds(records: list[Record], fold_count: int, seed: int) -> FoldAssignment:
    """Stratified k-fold assignment.

    Each label stratum is shuffled with a seeded generator and dealt
    round-robin; the starting fold rotates across strata so overall fold
    sizes also stay within one of each other.
    """
    if fold_count < 2:
        raise ValidationError(f"fold_count must be >= 2, got {fold_count}")
    strata: dict[SentimentLabel, list[str]] = {label: [] for label in LABELS}
    for r in records:
        if r.label is None:
            raise ValidationError(f"record {r.id!r} is unlabeled; cannot stratify")
        strata[r.label].append(r.id)

    for label, ids in strata.items():
        if ids and len(ids) < fold_count:
            raise StratificationError(
                f"label {label.tag!r} has {len(ids)} record(s), fewer than fold_count={fold_count}"
            )

    rng = np.random.default_rng(seed)
    assignment: dict[str, int] = {}
    offset = 0
    for label in LABELS:
        ids = strata[label]
        order = rng.permutation(len(ids))
        for i, idx in enumerate(order):
            assignment[ids[idx]] = (offset + i) % fold_count
        offset += len(ids)
    if len(assignment) != len(records):
        raise ValidationError("duplicate record ids; fold assignment requires unique ids")
    return FoldAssignment(fold_count, assignment)
