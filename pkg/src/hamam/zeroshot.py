"""Zero-shot entity sentiment from a masked language model.

A [MASK] is inserted right before the entity and the model's distribution
at that slot is compared across two word lists: the label is positive when
the mean probability of the good words beats that of the bad words.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from hamam.dataset import Record, SentimentLabel
from hamam.encoder import MASK_ID, SPECIALS, insert_before_entity, split_words, tokenize
from hamam.errors import LexiconError

SECTIONS = ("good", "bad")


@dataclass(frozen=True)
class PolarityLexicon:
    good_tokens: tuple[str, ...]
    bad_tokens: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "good_tokens", tuple(self.good_tokens))
        object.__setattr__(self, "bad_tokens", tuple(self.bad_tokens))
        if not self.good_tokens or not self.bad_tokens:
            raise LexiconError("both [good] and [bad] lists must be non-empty")
        shared = sorted({t.lower() for t in self.good_tokens} & {t.lower() for t in self.bad_tokens})
        if shared:
            raise LexiconError(f"tokens listed as both good and bad: {', '.join(shared)}")

    @classmethod
    def parse(cls, text: str) -> PolarityLexicon:
        lists: dict[str, list[str]] = {name: [] for name in SECTIONS}
        current = None
        for number, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                current = line[1:-1].strip().lower()
                if current not in lists:
                    raise LexiconError(f"line {number}: unknown section [{current}]")
                continue
            if current is None:
                raise LexiconError(f"line {number}: token outside a [good] or [bad] section")
            lists[current].append(line)
        return cls(tuple(lists["good"]), tuple(lists["bad"]))

    @classmethod
    def load(cls, path: str | Path) -> PolarityLexicon:
        return cls.parse(Path(path).read_text(encoding="utf-8"))

    @classmethod
    def default(cls) -> PolarityLexicon:
        return cls.parse(resources.files("hamam").joinpath("data/lexicon_default.txt").read_text(encoding="utf-8"))

    def to_text(self) -> str:
        return "[good]\n" + "".join(t + "\n" for t in self.good_tokens) + "[bad]\n" + "".join(
            t + "\n" for t in self.bad_tokens
        )

    def resolve(self, vocab) -> tuple[list[int], list[int]]:
        """Vocabulary ids for both lists; raises listing every unresolvable token."""
        bad_tokens = []
        for t in self.good_tokens + self.bad_tokens:
            single = [w for w, _, _ in split_words(t)] == [t]
            if not single or t in SPECIALS or t not in vocab:
                bad_tokens.append(t)
        if bad_tokens:
            raise LexiconError(f"lexicon tokens not in the vocabulary: {', '.join(sorted(set(bad_tokens)))}")
        return [vocab.id(t) for t in self.good_tokens], [vocab.id(t) for t in self.bad_tokens]


@dataclass(frozen=True)
class ZeroShotScore:
    id: str
    label: SentimentLabel
    p_good: float
    p_bad: float
    # mean good minus mean bad; its sign alone decides the label
    margin: float
    # good minus bad share of the probability mass on the lexicon tokens
    renormalized_margin: float

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "label": self.label.tag,
            "p_good": self.p_good,
            "p_bad": self.p_bad,
            "margin": self.margin,
            "renormalized_margin": self.renormalized_margin,
        }


def score_distribution(probs, good_ids: Sequence[int], bad_ids: Sequence[int]) -> tuple[float, float, float]:
    """``(p_good, p_bad, renormalized_margin)`` from one vocabulary distribution."""
    p = np.asarray(probs, dtype=np.float64)
    p_good = float(p[list(good_ids)].mean())
    p_bad = float(p[list(bad_ids)].mean())
    good_mass, bad_mass = p[sorted(set(good_ids))].sum(), p[sorted(set(bad_ids))].sum()
    total = good_mass + bad_mass
    renorm = float((good_mass - bad_mass) / total) if total > 0 else 0.0
    return p_good, p_bad, renorm


def zero_shot_score(backbone, record: Record, lexicon: PolarityLexicon, ids=None) -> ZeroShotScore:
    good_ids, bad_ids = ids if ids is not None else lexicon.resolve(backbone.vocab)
    inp = insert_before_entity(tokenize(record.sentence, record.entity_char_span, backbone.vocab), MASK_ID)
    with torch.no_grad():
        probs = backbone.mlm_distribution(inp, inp.inserted_position)
    probs = probs.detach().cpu().numpy() if isinstance(probs, torch.Tensor) else probs
    p_good, p_bad, renorm = score_distribution(probs, good_ids, bad_ids)
    label = SentimentLabel.POSITIVE if p_good > p_bad else SentimentLabel.NEGATIVE
    return ZeroShotScore(record.id, label, p_good, p_bad, p_good - p_bad, renorm)


def zero_shot_many(backbone, records: Sequence[Record], lexicon: PolarityLexicon) -> list[ZeroShotScore]:
    ids = lexicon.resolve(backbone.vocab)
    return [zero_shot_score(backbone, r, lexicon, ids) for r in records]
