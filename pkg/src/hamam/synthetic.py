"""Synthetic corpora with known answers.

In every generated sentence the word immediately before the target entity
is a cue verb whose class is the gold label, so a classifier that looks
only at that adjacent word is perfect. :func:`adjacent_word_oracle` is that
classifier.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from hamam.dataset import Record, SentimentLabel

POS, NEG, NEU = SentimentLabel

CUES = {
    POS: ("praised", "thanked", "applauded", "rewarded", "celebrated", "welcomed", "honored", "defended"),
    NEG: ("blamed", "attacked", "criticized", "condemned", "accused", "sued", "punished", "mocked"),
    NEU: ("met", "visited", "called", "saw", "contacted", "joined", "followed", "emailed"),
}
SUBJECTS = ("the minister", "the court", "a spokesman", "the union", "the mayor", "reporters", "the board",
            "local residents", "the ministry", "officials", "the committee", "critics")
TAILS = ("on monday", "in the capital", "after the meeting", "during the session", "last week",
         "at the summit", "on friday", "in a statement", "before the vote", "yesterday", "", "")
# Polar tails give cue verbs a distributional polarity, as sentiment words have in real text.
POLAR_TAILS = {
    POS: ("to loud applause", "with warm words", "in a generous tribute", "to cheers from the crowd"),
    NEG: ("amid public outrage", "in harsh terms", "after a bitter dispute", "to angry protests"),
}
_SYLLABLES = ("ka", "lo", "mi", "ra", "ven", "tor", "sa", "bel", "dru", "nik", "os", "fa", "zel", "quin", "ar")


def entity_names(count: int, rng: np.random.Generator, exclude: Sequence[str] = ()) -> list[str]:
    names: list[str] = []
    seen = set(exclude)
    while len(names) < count:
        n_syl = int(rng.integers(2, 4))
        name = "".join(_SYLLABLES[int(i)] for i in rng.integers(0, len(_SYLLABLES), n_syl)).capitalize()
        if name not in seen:
            seen.add(name)
            names.append(name)
    return names


def _sentence(rid: str, entity: str, label: SentimentLabel, rng: np.random.Generator,
              cue_label: SentimentLabel | None = None, distractor: str | None = None,
              polar_tail_rate: float = 0.5) -> Record:
    cue_label = label if cue_label is None else cue_label
    subject = SUBJECTS[int(rng.integers(len(SUBJECTS)))]
    cue = CUES[cue_label][int(rng.integers(len(CUES[cue_label])))]
    if cue_label in POLAR_TAILS and rng.random() < polar_tail_rate:
        tail = POLAR_TAILS[cue_label][int(rng.integers(len(POLAR_TAILS[cue_label])))]
    else:
        tail = TAILS[int(rng.integers(len(TAILS)))]
    prefix = f"{subject} {cue} "
    sentence = prefix + entity
    if distractor is not None:
        other = CUES[NEU][int(rng.integers(len(CUES[NEU])))]
        sentence += f" and {other} {distractor}"
    if tail:
        sentence += " " + tail
    start = len(prefix)
    return Record(rid, sentence, (start, start + len(entity)), entity, label)


def cue_corpus(
    n: int = 2000,
    seed: int = 0,
    proportions: tuple[float, float, float] = (0.3, 0.3, 0.4),
    n_entities: int = 60,
    multiword_rate: float = 0.2,
    distractor_rate: float = 0.3,
    polar_tail_rate: float = 0.9,
    prefix: str = "s",
) -> list[Record]:
    """Sentences ``<subject> <cue> <entity> [and <verb> <other>] [<tail>]``."""
    rng = np.random.default_rng(seed)
    names = entity_names(n_entities, rng)
    labels = rng.choice(3, size=n, p=np.asarray(proportions) / sum(proportions))
    out = []
    for i, lab in enumerate(labels):
        entity = names[int(rng.integers(len(names)))]
        if rng.random() < multiword_rate:
            entity = f"{entity} {names[int(rng.integers(len(names)))]}"
        distractor = names[int(rng.integers(len(names)))] if rng.random() < distractor_rate else None
        out.append(_sentence(f"{prefix}{i}", entity, SentimentLabel(int(lab)), rng, distractor=distractor,
                             polar_tail_rate=polar_tail_rate))
    return out


def bias_split(seed: int = 0, n_train: int = 1200, n_val: int = 400, n_biased: int = 4,
               biased_fraction: float = 0.25) -> tuple[list[Record], list[Record]]:
    """Train/validation pair where some entities are always positive in training.

    In training the biased entities carry the positive label with either a
    positive cue or an uninformative neutral cue, so the entity string itself
    predicts the label. In validation the same entities appear after negative
    cues and are labelled negative; the rest of validation is regular data.
    """
    rng = np.random.default_rng(seed)
    regular = entity_names(40, rng)
    biased = entity_names(n_biased, rng, exclude=regular)

    def regular_record(rid):
        lab = SentimentLabel(int(rng.choice(3, p=[0.3, 0.3, 0.4])))
        return _sentence(rid, regular[int(rng.integers(len(regular)))], lab, rng)

    train = []
    for i in range(n_train):
        if rng.random() < biased_fraction:
            cue = POS if rng.random() < 0.5 else NEU
            train.append(_sentence(f"t{i}", biased[int(rng.integers(n_biased))], POS, rng, cue_label=cue))
        else:
            train.append(regular_record(f"t{i}"))
    val = []
    for i in range(n_val):
        if i % 2 == 0:
            val.append(_sentence(f"v{i}", biased[int(rng.integers(n_biased))], NEG, rng))
        else:
            val.append(regular_record(f"v{i}"))
    return train, val


def adjacent_word_oracle(records: Sequence[Record]) -> list[SentimentLabel]:
    """Label each record by the class of the word right before its entity."""
    lookup = {w: lab for lab, words in CUES.items() for w in words}
    out = []
    for r in records:
        before = r.sentence[: r.entity_char_span[0]].split()
        out.append(lookup.get(before[-1] if before else "", NEU))
    return out


GOOD_WORDS = ("brilliant", "honest", "generous", "beloved", "talented", "respected")
BAD_WORDS = ("corrupt", "cruel", "disgraced", "reckless", "notorious", "dishonest")
_POS_EVENTS = ("won the award", "was cheered by fans", "saved the company", "helped the victims",
               "received a medal", "inspired the team")
_NEG_EVENTS = ("lost the trial", "was arrested", "ruined the company", "cheated the voters",
               "faced new charges", "betrayed the team")


def zero_shot_corpora(seed: int = 0, n_pretrain: int = 3000, n_eval: int = 200) -> tuple[list[str], list[Record]]:
    """Unlabelled pretraining text plus labelled evaluation records.

    Pretraining sentences put a good adjective right before entities in
    positive events and a bad adjective before entities in negative events.
    Evaluation records drop the adjective, so a masked slot inserted before
    the entity should be filled with the matching polarity.
    """
    rng = np.random.default_rng(seed)
    names = entity_names(50, rng)
    pretrain = []
    for _ in range(n_pretrain):
        positive = rng.random() < 0.5
        adj = (GOOD_WORDS if positive else BAD_WORDS)[int(rng.integers(6))]
        event = (_POS_EVENTS if positive else _NEG_EVENTS)[int(rng.integers(6))]
        pretrain.append(f"the {adj} {names[int(rng.integers(len(names)))]} {event}")
    records = []
    for i in range(n_eval):
        lab = POS if i % 2 == 0 else NEG
        event = (_POS_EVENTS if lab is POS else _NEG_EVENTS)[int(rng.integers(6))]
        entity = names[int(rng.integers(len(names)))]
        sentence = f"the {entity} {event}"
        records.append(Record(f"z{i}", sentence, (4, 4 + len(entity)), entity, lab))
    return pretrain, records
