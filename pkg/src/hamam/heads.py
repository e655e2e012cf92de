"""Span pooling, the classifier stack and the two model variants.

The half-masked model runs the backbone twice per example: once on the
sentence as written, once with every entity token replaced by [MASK].
Each pass pools the entity span (mean and/or max), classifies the pooled
vectors and averages the logits; the final logits average the two passes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch
from torch import nn

from hamam.encoder import MASK_ID, Backbone, TokenizedInput, insert_sentiment_token, pad_inputs
from hamam.errors import ValidationError

NUM_CLASSES = 3
POOLINGS = ("mean", "max", "mean_max")
VARIANTS = ("hamam", "pooled_sentiment")


def _check_span(hidden: torch.Tensor, span: tuple[int, int]) -> tuple[int, int]:
    k, m = span
    if not 0 <= k < m <= hidden.shape[0]:
        raise ValidationError(f"span ({k}, {m}) invalid for {hidden.shape[0]} rows")
    return k, m


def mean_pool(hidden: torch.Tensor, span: tuple[int, int]) -> torch.Tensor:
    k, m = _check_span(hidden, span)
    return hidden[k:m].sum(dim=0) / (m - k)


def max_pool(hidden: torch.Tensor, span: tuple[int, int]) -> torch.Tensor:
    k, m = _check_span(hidden, span)
    return hidden[k:m].amax(dim=0)


def span_mean(hidden: torch.Tensor, span_mask: torch.Tensor) -> torch.Tensor:
    """Batched :func:`mean_pool`: ``(B, L, N)`` with a ``(B, L)`` boolean span mask."""
    w = span_mask.to(hidden.dtype).unsqueeze(-1)
    return (hidden * w).sum(dim=1) / w.sum(dim=1)


def span_max(hidden: torch.Tensor, span_mask: torch.Tensor) -> torch.Tensor:
    return hidden.masked_fill(~span_mask.unsqueeze(-1), float("-inf")).amax(dim=1)


def draw_dropout_masks(
    shape: Sequence[int],
    rate: float,
    samples: int,
    generator: torch.Generator | None = None,
    dtype: torch.dtype = torch.float32,
) -> torch.Tensor:
    """``samples`` inverted-dropout masks: entries are 0 or ``1 / (1 - rate)``."""
    keep = torch.rand((samples, *shape), generator=generator) >= rate
    return keep.to(dtype) / (1.0 - rate)


class ClassifierHead(nn.Module):
    """linear N->N, tanh, multi-sample dropout, linear N->3.

    In training mode each call draws ``samples`` independent dropout masks
    on the tanh activations and returns the mean of the resulting logits.
    Set ``record_masks`` to keep the drawn masks in ``recorded_masks``.
    """

    def __init__(
        self,
        hidden_size: int,
        dropout_rate: float = 0.5,
        samples: int = 5,
        seed: int = 0,
        init_std: float = 0.02,
    ):
        super().__init__()
        if not 0.0 <= dropout_rate < 1.0:
            raise ValidationError(f"dropout_rate must lie in [0, 1), got {dropout_rate}")
        if samples < 1:
            raise ValidationError(f"samples must be >= 1, got {samples}")
        self.hidden_size = hidden_size
        self.dropout_rate = dropout_rate
        self.samples = samples
        g = torch.Generator().manual_seed(seed)
        self.W1 = nn.Parameter(torch.randn(hidden_size, hidden_size, generator=g) * init_std)
        self.b1 = nn.Parameter(torch.zeros(hidden_size))
        self.W2 = nn.Parameter(torch.randn(NUM_CLASSES, hidden_size, generator=g) * init_std)
        self.b2 = nn.Parameter(torch.zeros(NUM_CLASSES))
        self.record_masks = False
        self.recorded_masks: list[torch.Tensor] = []

    def activations(self, v: torch.Tensor) -> torch.Tensor:
        if v.shape[-1] != self.hidden_size:
            raise ValidationError(f"expected vectors of size {self.hidden_size}, got {v.shape[-1]}")
        return torch.tanh(v @ self.W1.T + self.b1)

    def output(self, a: torch.Tensor) -> torch.Tensor:
        return a @ self.W2.T + self.b2

    def multi_sample_dropout(
        self,
        a: torch.Tensor,
        generator: torch.Generator | None = None,
        masks: torch.Tensor | None = None,
    ) -> torch.Tensor:
        if not self.training or self.dropout_rate == 0.0:
            return self.output(a)
        if masks is None:
            masks = draw_dropout_masks(a.shape, self.dropout_rate, self.samples, generator, a.dtype)
        if self.record_masks:
            self.recorded_masks.append(masks)
        return self.output(a.unsqueeze(0) * masks).mean(dim=0)

    def forward(
        self,
        v: torch.Tensor,
        generator: torch.Generator | None = None,
        masks: torch.Tensor | None = None,
    ) -> torch.Tensor:
        return self.multi_sample_dropout(self.activations(v), generator, masks)


def classify(v: torch.Tensor, head: ClassifierHead, generator: torch.Generator | None = None) -> torch.Tensor:
    return head(v, generator)


@dataclass
class Batch:
    ids: torch.Tensor  # (B, L)
    attention: torch.Tensor  # (B, L) bool
    span_mask: torch.Tensor  # (B, L) bool
    anchor: torch.Tensor  # (B,) position of [SENTIMENT], -1 if absent
    labels: torch.Tensor | None = None

    def __len__(self) -> int:
        return self.ids.shape[0]


def collate(inputs: Sequence[TokenizedInput], labels: Sequence[int] | None = None) -> Batch:
    ids, attention = pad_inputs(inputs)
    span_mask = torch.zeros_like(attention)
    for row, inp in enumerate(inputs):
        k, m = inp.entity_token_span
        span_mask[row, k:m] = True
    anchor = torch.tensor(
        [x.inserted_position if x.has_sentiment_token else -1 for x in inputs], dtype=torch.long
    )
    y = None if labels is None else torch.tensor([int(l) for l in labels], dtype=torch.long)
    return Batch(ids, attention, span_mask, anchor, y)


def _pooled_logits(head, hidden, span_mask, pooling, generator):
    parts = {}
    if pooling in ("mean", "mean_max"):
        parts["mean"] = head(span_mean(hidden, span_mask), generator)
    if pooling in ("max", "mean_max"):
        parts["max"] = head(span_max(hidden, span_mask), generator)
    if pooling == "mean_max":
        combined = (parts["mean"] + parts["max"]) / 2
    else:
        combined = parts[pooling]
    return combined, parts


def hamam_logits(
    backbone: Backbone,
    head: ClassifierHead,
    batch: Batch,
    pooling: str = "mean_max",
    entity_masking: bool = True,
    generator: torch.Generator | None = None,
) -> dict[str, torch.Tensor]:
    """Logits for a batch; keys ``final``, ``entity``, ``mean``/``max`` and ``masked``."""
    if pooling not in POOLINGS:
        raise ValidationError(f"unknown pooling {pooling!r}")
    b = len(batch)
    if entity_masking:
        masked_ids = batch.ids.masked_fill(batch.span_mask, MASK_ID)
        hidden = backbone(torch.cat([batch.ids, masked_ids]), torch.cat([batch.attention, batch.attention]))
        visible, hidden_masked = hidden[:b], hidden[b:]
    else:
        visible = backbone(batch.ids, batch.attention)

    entity, out = _pooled_logits(head, visible, batch.span_mask, pooling, generator)
    out["entity"] = entity
    if entity_masking:
        masked, masked_parts = _pooled_logits(head, hidden_masked, batch.span_mask, pooling, generator)
        out.update({f"masked_{k}": v for k, v in masked_parts.items()})
        out["masked"] = masked
        out["final"] = (entity + masked) / 2
    else:
        out["final"] = entity
    return out


def pooled_sentiment_logits(
    backbone: Backbone,
    head: ClassifierHead,
    batch: Batch,
    generator: torch.Generator | None = None,
) -> dict[str, torch.Tensor]:
    if (batch.anchor < 0).any():
        raise ValidationError("every input must carry a [SENTIMENT] token")
    hidden = backbone(batch.ids, batch.attention)
    v = hidden[torch.arange(len(batch)), batch.anchor]
    return {"final": head(v, generator)}


def hamam_forward(backbone, head, inp: TokenizedInput, generator=None, pooling="mean_max", entity_masking=True):
    """Single-input dual pass. Returns ``(final_logits, parts)``."""
    if inp.is_masked or inp.inserted_position is not None:
        raise ValidationError("hamam_forward expects a plain (unmasked, unmarked) input")
    out = hamam_logits(backbone, head, collate([inp]), pooling, entity_masking, generator)
    out = {k: v[0] for k, v in out.items()}
    return out.pop("final"), out


def pooled_sentiment_forward(backbone, head, inp: TokenizedInput, generator=None) -> torch.Tensor:
    if inp.is_masked:
        raise ValidationError("pooled_sentiment_forward expects an unmasked input")
    if not inp.has_sentiment_token:
        inp = insert_sentiment_token(inp)
    return pooled_sentiment_logits(backbone, head, collate([inp]), generator)["final"][0]


class EntitySentimentModel(nn.Module):
    """Backbone plus classifier head, in either variant."""

    def __init__(
        self,
        backbone: nn.Module,
        head: ClassifierHead,
        variant: str = "hamam",
        pooling: str = "mean_max",
        entity_masking: bool = True,
    ):
        super().__init__()
        if variant not in VARIANTS:
            raise ValidationError(f"unknown head variant {variant!r}")
        if pooling not in POOLINGS:
            raise ValidationError(f"unknown pooling {pooling!r}")
        self.backbone = backbone
        self.head = head
        self.variant = variant
        self.pooling = pooling
        self.entity_masking = entity_masking

    @property
    def vocab(self):
        return self.backbone.vocab

    def prepare(self, inp: TokenizedInput) -> TokenizedInput:
        if self.variant == "pooled_sentiment" and not inp.has_sentiment_token:
            return insert_sentiment_token(inp)
        return inp

    def forward(self, batch: Batch, generator: torch.Generator | None = None) -> dict[str, torch.Tensor]:
        if self.variant == "hamam":
            return hamam_logits(self.backbone, self.head, batch, self.pooling, self.entity_masking, generator)
        return pooled_sentiment_logits(self.backbone, self.head, batch, generator)
