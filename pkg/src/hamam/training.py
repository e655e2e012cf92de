"""Loss, learning-rate schedule, fold training and Monte Carlo dropout."""

from __future__ import annotations

import logging
import math
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from hamam.checkpoint import Checkpoint, assemble_model
from hamam.config import TrainConfig
from hamam.dataset import Record
from hamam.decision import DecisionConfig, decide, model_logits, softmax
from hamam.encoder import MASK_ID, PAD_ID, SPECIALS, ToyEncoder, Vocabulary, split_words, tokenize
from hamam.errors import ScheduleError, TrainingError
from hamam.evaluation import confusion, macro_f1_pn
from hamam.heads import EntitySentimentModel, collate

logger = logging.getLogger(__name__)

BackboneFactory = Callable[[TrainConfig, Sequence[Record]], nn.Module]


def weighted_cross_entropy(logits: torch.Tensor, gold: torch.Tensor, class_weights) -> torch.Tensor:
    """Per-example ``w[gold] * -log softmax(logits)[gold]``.

    Works on a single 3-vector or a ``(B, 3)`` batch; take ``.mean()`` for
    the batch loss (no renormalisation by the weight sum).
    """
    weights = torch.as_tensor(class_weights, dtype=logits.dtype)
    gold = torch.as_tensor(gold, dtype=torch.long)
    nll = torch.logsumexp(logits, dim=-1) - logits.gather(-1, gold.unsqueeze(-1)).squeeze(-1)
    return weights[gold] * nll


def warmup_steps(total_steps: int, warmup_fraction: float) -> int:
    return int(math.floor(warmup_fraction * total_steps + 0.5))


def lr_at_step(step: int, total_steps: int, max_lr: float, warmup_fraction: float) -> float:
    """Linear warmup from 0 to ``max_lr``, then linear decay back to 0."""
    w = warmup_steps(total_steps, warmup_fraction)
    if w == 0 or w >= total_steps:
        raise ScheduleError(f"degenerate schedule: warmup {w} of {total_steps} total steps")
    if not 0 <= step <= total_steps:
        raise ScheduleError(f"step {step} outside [0, {total_steps}]")
    if step <= w:
        return max_lr * (step / w)
    return max_lr * ((total_steps - step) / (total_steps - w))


def validation_steps(steps_per_epoch: int, epochs: int) -> list[int]:
    """Optimizer steps after which validation runs: mid-epoch and end of each epoch."""
    half = math.ceil(steps_per_epoch / 2)
    steps = set()
    for e in range(epochs):
        steps.add(e * steps_per_epoch + half)
        steps.add((e + 1) * steps_per_epoch)
    return sorted(steps)


def _decay_groups(module: nn.Module, lr: float, weight_decay: float) -> list[dict]:
    decay = [p for p in module.parameters() if p.dim() >= 2]
    no_decay = [p for p in module.parameters() if p.dim() < 2]
    return [
        {"params": decay, "weight_decay": weight_decay, "max_lr": lr},
        {"params": no_decay, "weight_decay": 0.0, "max_lr": lr},
    ]


def make_optimizer(model: EntitySentimentModel, config: TrainConfig) -> torch.optim.Optimizer:
    groups = _decay_groups(model.backbone, config.backbone_max_lr, config.weight_decay) + _decay_groups(
        model.head, config.head_max_lr, config.weight_decay
    )
    groups = [g for g in groups if g["params"]]
    if config.optimizer == "sgd":
        return torch.optim.SGD(groups, lr=0.0)
    return torch.optim.AdamW(groups, lr=0.0)


def toy_backbone(config: TrainConfig, train_records: Sequence[Record]) -> ToyEncoder:
    """Fresh toy encoder over the training vocabulary, optionally MLM-pretrained."""
    vocab = Vocabulary.from_corpus(r.sentence for r in train_records)
    model = assemble_model(config, vocab)
    encoder = model.backbone
    if config.pretrain_epochs:
        pretrain_mlm(encoder, [r.sentence for r in train_records], config.pretrain_epochs,
                     lr=config.pretrain_lr, seed=config.seed)
    return encoder


def evaluate_f1(model: EntitySentimentModel, records: Sequence[Record], config: TrainConfig) -> float:
    logits = model_logits(model, records, config.eval_batch_size)
    dc = DecisionConfig(config.neutral_threshold)
    preds = [decide(softmax(l), dc) for l in logits]
    return macro_f1_pn(confusion([r.label for r in records], preds))


def train_fold(
    config: TrainConfig,
    train_records: Sequence[Record],
    val_records: Sequence[Record],
    backbone_factory: BackboneFactory = toy_backbone,
    log: Callable[[dict], None] | None = None,
) -> Checkpoint:
    """Train one model and return the best validation checkpoint.

    Validation runs at every half-epoch boundary (the last one is the final
    step); the highest macro F1_pn wins, earliest step on ties.
    """
    train_ids = {r.id for r in train_records}
    if train_ids & {r.id for r in val_records}:
        raise TrainingError("train and validation records overlap")
    if not train_records or not val_records:
        raise TrainingError("train and validation sets must be non-empty")
    log = log or (lambda entry: None)

    torch.manual_seed(config.seed)
    backbone = backbone_factory(config, train_records)
    model = assemble_model(config, backbone.vocab, backbone=backbone)
    dtype = next(backbone.parameters()).dtype
    model.head.to(dtype)

    inputs = [model.prepare(tokenize(r.sentence, r.entity_char_span, model.vocab)) for r in train_records]
    labels = [int(r.label) for r in train_records]
    n = len(inputs)
    steps_per_epoch = math.ceil(n / config.batch_size)
    total = steps_per_epoch * config.epochs
    checkpoints_at = set(validation_steps(steps_per_epoch, config.epochs))

    optimizer = make_optimizer(model, config)
    generator = torch.Generator().manual_seed(config.seed)
    params = [p for g in optimizer.param_groups for p in g["params"]]

    best: tuple[float, int, dict] | None = None
    history: list[tuple[int, float]] = []
    step = 0
    for epoch in range(config.epochs):
        order = np.random.default_rng([config.seed, epoch]).permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            batch = collate([inputs[i] for i in idx], [labels[i] for i in idx])
            for g in optimizer.param_groups:
                g["lr"] = lr_at_step(step, total, g["max_lr"], config.warmup_fraction)

            model.train()
            logits = model(batch, generator)["final"]
            loss = weighted_cross_entropy(logits, batch.labels, config.class_weights).mean()
            if not torch.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss {loss.item()} at step {step}; batch ids "
                    f"{[train_records[i].id for i in idx]}"
                )
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            if config.grad_clip is not None:
                nn.utils.clip_grad_norm_(params, config.grad_clip)
            optimizer.step()
            step += 1
            log({"step": step, "lr_backbone": optimizer.param_groups[0]["lr"],
                 "lr_head": optimizer.param_groups[-1]["lr"], "loss": loss.item()})

            if step in checkpoints_at:
                f1 = evaluate_f1(model, val_records, config)
                history.append((step, f1))
                log({"step": step, "val_macro_f1_pn": f1})
                logger.info("step %d/%d val macro F1_pn %.2f", step, total, f1)
                if best is None or f1 > best[0]:
                    best = (f1, step, {k: v.detach().clone() for k, v in model.state_dict().items()})

    f1, best_step, state = best
    encoder_config = vars(model.backbone.config).copy() if hasattr(model.backbone, "config") else {}
    return Checkpoint(
        config=config,
        vocab=list(model.vocab.tokens),
        encoder_config=encoder_config,
        state=state,
        step=best_step,
        val_f1=f1,
        history=history,
    )


@torch.no_grad()
def mc_dropout_predict(model: EntitySentimentModel, inp, passes: int, generator: torch.Generator | None = None,
                       return_passes: bool = False):
    """Mean final logits over ``passes`` forwards with dropout active."""
    if passes < 1:
        raise ValueError("passes must be >= 1")
    was_training = model.training
    model.train()
    batch = collate([model.prepare(inp)])
    outs = []
    try:
        for _ in range(passes):
            outs.append(model(batch, generator)["final"][0])
    finally:
        model.train(was_training)
    # running mean: exact when every pass is identical (dropout off)
    mean = outs[0].clone()
    for count, out in enumerate(outs[1:], start=2):
        mean += (out - mean) / count
    return (mean, torch.stack(outs)) if return_passes else mean


def mask_tokens(ids: torch.Tensor, attention: torch.Tensor, vocab_size: int, generator: torch.Generator,
                mask_prob: float = 0.15) -> tuple[torch.Tensor, torch.Tensor]:
    """BERT-style corruption: returns ``(corrupted_ids, targets)`` with -100 at unscored positions."""
    eligible = attention & (ids >= len(SPECIALS))
    chosen = (torch.rand(ids.shape, generator=generator) < mask_prob) & eligible
    # at least one target per sequence
    for row in range(ids.shape[0]):
        if not chosen[row].any() and eligible[row].any():
            cand = eligible[row].nonzero().flatten()
            chosen[row, cand[torch.randint(len(cand), (1,), generator=generator)]] = True
    targets = torch.where(chosen, ids, torch.full_like(ids, -100))
    roll = torch.rand(ids.shape, generator=generator)
    corrupted = ids.clone()
    corrupted[chosen & (roll < 0.8)] = MASK_ID
    swap = chosen & (roll >= 0.8) & (roll < 0.9)
    corrupted[swap] = torch.randint(len(SPECIALS), vocab_size, (int(swap.sum()),), generator=generator)
    return corrupted, targets


def _neighbor_loss(encoder: ToyEncoder, hidden, ids, attention) -> torch.Tensor:
    left_logits, right_logits = encoder.neighbor_logits(hidden)
    ignore = torch.full_like(ids[:, :1], -100)
    valid = ids.masked_fill(~attention, -100)
    left_target = torch.cat([ignore, valid[:, :-1]], dim=1).masked_fill(~attention, -100)
    right_target = torch.cat([valid[:, 1:], ignore], dim=1).masked_fill(~attention, -100)
    v = left_logits.shape[-1]
    return F.cross_entropy(left_logits.reshape(-1, v), left_target.reshape(-1), ignore_index=-100) + F.cross_entropy(
        right_logits.reshape(-1, v), right_target.reshape(-1), ignore_index=-100
    )


def pretrain_mlm(
    encoder: ToyEncoder,
    sentences: Sequence[str],
    epochs: int,
    lr: float = 1e-3,
    batch_size: int = 32,
    seed: int = 0,
    mask_prob: float = 0.15,
    neighbor_weight: float = 1.0,
) -> list[float]:
    """Pretrain the toy encoder on unlabelled sentences; returns per-epoch mean loss.

    The objective is masked-token prediction plus, with ``neighbor_weight``,
    prediction of each position's original left and right neighbours. The
    second term makes every token state carry its local context, which
    masked-token prediction alone does not enforce on a small corpus.
    """
    seqs = []
    for s in sentences:
        ids = [encoder.vocab.id(w) for w, _, _ in split_words(s)]
        if ids:
            seqs.append(ids[: encoder.config.max_length])
    if not seqs:
        return []
    generator = torch.Generator().manual_seed(seed)
    optimizer = torch.optim.AdamW(encoder.parameters(), lr=lr, weight_decay=0.01)
    steps_per_epoch = math.ceil(len(seqs) / batch_size)
    total = steps_per_epoch * epochs
    warm = max(1, warmup_steps(total, 0.1))
    sched = torch.optim.lr_scheduler.LambdaLR(
        optimizer, lambda s: min((s + 1) / warm, max(0.0, (total - s) / max(1, total - warm)))
    )
    encoder.train()
    losses = []
    for epoch in range(epochs):
        order = np.random.default_rng([seed, 10_000 + epoch]).permutation(len(seqs))
        total_loss = 0.0
        for start in range(0, len(seqs), batch_size):
            chunk = [seqs[i] for i in order[start : start + batch_size]]
            length = max(len(c) for c in chunk)
            ids = torch.full((len(chunk), length), PAD_ID, dtype=torch.long)
            attention = torch.zeros_like(ids, dtype=torch.bool)
            for row, c in enumerate(chunk):
                ids[row, : len(c)] = torch.tensor(c)
                attention[row, : len(c)] = True
            corrupted, targets = mask_tokens(ids, attention, len(encoder.vocab), generator, mask_prob)
            hidden = encoder(corrupted, attention)
            logits = encoder.mlm_logits(hidden)
            loss = F.cross_entropy(logits.reshape(-1, logits.shape[-1]), targets.reshape(-1), ignore_index=-100)
            if neighbor_weight:
                loss = loss + neighbor_weight * _neighbor_loss(encoder, hidden, ids, attention)
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            nn.utils.clip_grad_norm_(encoder.parameters(), 1.0)
            optimizer.step()
            sched.step()
            total_loss += loss.item() * len(chunk)
        losses.append(total_loss / len(seqs))
    encoder.eval()
    return losses
