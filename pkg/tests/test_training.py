import math

import mpmath
import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from hamam.checkpoint import assemble_model
from hamam.config import TrainConfig
from hamam.dataset import split_folds
from hamam.decision import model_logits
from hamam.encoder import TokenizedInput, tokenize
from hamam.errors import ScheduleError, TrainingError
from hamam.heads import ClassifierHead, EntitySentimentModel, collate
from hamam.synthetic import cue_corpus
from hamam.training import (
    lr_at_step,
    make_optimizer,
    mask_tokens,
    mc_dropout_predict,
    pretrain_mlm,
    train_fold,
    validation_steps,
    weighted_cross_entropy,
)

from helpers import finite_difference_grads, relative_error, tiny_encoder

SMALL = dict(hidden_size=16, num_heads=2, num_layers=1, epochs=2, pretrain_epochs=0, eval_batch_size=128)


def small_split(n=120, seed=0):
    recs = cue_corpus(n, seed=seed, n_entities=12)
    return split_folds(recs, 5, seed).split(recs, 0)


def lse_oracle(logits, gold, weight):
    mpmath.mp.dps = 60
    values = [mpmath.mpf(float(x)) for x in logits]
    lse = mpmath.log(sum(mpmath.exp(v) for v in values))
    return float(weight * (lse - values[gold]))


# loss


def test_uniform_logits_neutral_weight():
    loss = weighted_cross_entropy(torch.zeros(3, dtype=torch.float64), 2, (1, 1, 0.1))
    assert abs(float(loss) - 0.1 * math.log(3)) < 1e-9


@given(st.lists(st.floats(-30, 30), min_size=3, max_size=3), st.integers(0, 2))
def test_unit_weights_reduce_to_cross_entropy(values, gold):
    logits = torch.tensor(values, dtype=torch.float64)
    ours = weighted_cross_entropy(logits, gold, (1, 1, 1))
    ref = torch.nn.functional.cross_entropy(logits.unsqueeze(0), torch.tensor([gold]))
    assert abs(float(ours) - float(ref)) < 1e-9


@pytest.mark.parametrize("logits,gold", [((1000, 0, 0), 0), ((1000, 0, 0), 1), ((-1000, 1000, 3), 2)])
def test_overflow_safe(logits, gold):
    loss = weighted_cross_entropy(torch.tensor(logits, dtype=torch.float64), gold, (1, 1, 0.1))
    assert torch.isfinite(loss)
    oracle = lse_oracle(logits, gold, (1, 1, 0.1)[gold])
    assert abs(float(loss) - oracle) <= 1e-9 * max(1.0, abs(oracle))


def test_batch_loss_is_plain_mean():
    logits = torch.tensor([[2.0, 0.0, 0.0], [0.0, 0.0, 3.0]], dtype=torch.float64)
    gold = torch.tensor([1, 2])
    per = weighted_cross_entropy(logits, gold, (1, 1, 0.1))
    singles = [weighted_cross_entropy(logits[i], int(gold[i]), (1, 1, 0.1)) for i in range(2)]
    assert torch.equal(per, torch.stack(singles))
    assert float(per.mean()) == pytest.approx(float(sum(singles)) / 2, abs=1e-15)


@given(st.floats(0.01, 100))
def test_weight_scaling_scales_loss(c):
    logits = torch.tensor([[0.3, -1.2, 2.0], [1.0, 1.0, -4.0]], dtype=torch.float64)
    gold = torch.tensor([0, 2])
    base = weighted_cross_entropy(logits, gold, (1, 1, 0.1))
    scaled = weighted_cross_entropy(logits, gold, (c, c, 0.1 * c))
    assert torch.allclose(scaled, c * base, rtol=1e-12, atol=0)


# schedule


def test_lr_anchor_points():
    assert lr_at_step(50, 1000, 1e-5, 0.1) == 5e-6
    assert lr_at_step(100, 1000, 1e-5, 0.1) == 1e-5
    assert lr_at_step(550, 1000, 1e-5, 0.1) == 5e-6
    assert lr_at_step(0, 1000, 1e-5, 0.1) == 0.0
    assert lr_at_step(1000, 1000, 1e-5, 0.1) == 0.0


@given(st.integers(10, 3000), st.floats(0.05, 0.9))
def test_schedule_piecewise_linear_single_peak(total, frac):
    try:
        lrs = np.array([lr_at_step(s, total, 1.0, frac) for s in range(total + 1)])
    except ScheduleError:
        return
    peak = int(np.argmax(lrs))
    assert lrs[peak] == 1.0 and (lrs == 1.0).sum() == 1
    second = np.diff(lrs, 2)
    off_peak = np.delete(second, peak - 1)
    assert np.abs(off_peak).max() < 1e-12


@pytest.mark.parametrize("total,frac", [(10, 0.01), (10, 0.99), (20, 0.0001)])
def test_degenerate_schedule(total, frac):
    with pytest.raises(ScheduleError):
        lr_at_step(0, total, 1e-5, frac)


def test_step_out_of_range():
    with pytest.raises(ScheduleError):
        lr_at_step(1001, 1000, 1e-5, 0.1)


@pytest.mark.parametrize("per_epoch", [1, 2, 7, 8, 200, 201])
def test_validation_schedule(per_epoch):
    steps = validation_steps(per_epoch, 6)
    assert steps[-1] == 6 * per_epoch
    assert steps == sorted(set(steps))
    assert len(steps) == (6 if per_epoch == 1 else 12)
    for e in range(6):
        assert (e + 1) * per_epoch in steps
        assert e * per_epoch + math.ceil(per_epoch / 2) in steps


# optimizer groups


def test_optimizer_groups_and_decay():
    cfg = TrainConfig(**SMALL)
    model = assemble_model(cfg, tiny_encoder().vocab)
    opt = make_optimizer(model, cfg)
    backbone = {id(p) for p in model.backbone.parameters()}
    for g in opt.param_groups:
        owners = {id(p) in backbone for p in g["params"]}
        assert len(owners) == 1
        assert g["max_lr"] == (cfg.backbone_max_lr if owners.pop() else cfg.head_max_lr)
        assert all((p.dim() >= 2) == (g["weight_decay"] > 0) for p in g["params"])
    counted = sum(len(g["params"]) for g in opt.param_groups)
    assert counted == len(list(model.parameters()))


# full-model gradient


@pytest.mark.parametrize("seed", range(3))
def test_full_model_gradient(seed):
    rng = np.random.default_rng(seed)
    enc = tiny_encoder(hidden=16, heads=2, seed=seed)
    head = ClassifierHead(16, dropout_rate=0.5, samples=5, seed=seed, init_std=0.5).double()
    model = EntitySentimentModel(enc, head).train()
    n = int(rng.integers(3, 7))
    k = int(rng.integers(0, n))
    m = int(rng.integers(k + 1, n + 1))
    inp = TokenizedInput(tuple(int(x) for x in rng.integers(4, len(enc.vocab), n)), (k, m))
    batch = collate([inp], [int(rng.integers(3))])

    def loss():
        g = torch.Generator().manual_seed(seed)
        return weighted_cross_entropy(model(batch, g)["final"], batch.labels, (1, 1, 0.1)).mean()

    model.zero_grad()
    loss().backward()
    # the pretraining heads take no part in classification
    unused = {n for n, p in model.named_parameters() if p.grad is None}
    assert unused == {n for n, _ in model.named_parameters() if n.startswith(("backbone.mlm", "backbone.neighbor"))}
    params = [p for p in model.parameters() if p.grad is not None]
    analytic = torch.cat([p.grad.reshape(-1) for p in params])
    numeric = torch.cat([g.reshape(-1) for g in finite_difference_grads(params, loss)])
    assert relative_error(analytic, numeric) < 1e-4


# train_fold


def test_train_fold_runs_schedule_and_selects_best():
    train, val = small_split()
    logs = []
    ck = train_fold(TrainConfig(**SMALL), train, val, log=logs.append)
    per_epoch = math.ceil(len(train) / 8)
    assert [s for s, _ in ck.history] == validation_steps(per_epoch, 2)
    assert sum("loss" in e for e in logs) == 2 * per_epoch
    best = max(f for _, f in ck.history)
    assert ck.val_f1 == best
    assert ck.step == min(s for s, f in ck.history if f == best)
    assert all(np.isfinite(e["loss"]) for e in logs if "loss" in e)


def test_train_fold_deterministic():
    train, val = small_split()
    a = train_fold(TrainConfig(**SMALL, seed=3), train, val)
    b = train_fold(TrainConfig(**SMALL, seed=3), train, val)
    assert a.step == b.step and a.history == b.history
    assert a.state.keys() == b.state.keys()
    assert all(torch.equal(a.state[k], b.state[k]) for k in a.state)


def test_train_fold_seed_matters():
    train, val = small_split()
    a = train_fold(TrainConfig(**dict(SMALL, epochs=1), seed=1), train, val)
    b = train_fold(TrainConfig(**dict(SMALL, epochs=1), seed=2), train, val)
    assert any(not torch.equal(a.state[k], b.state[k]) for k in a.state)


def test_train_fold_rejects_overlap():
    train, val = small_split()
    with pytest.raises(TrainingError):
        train_fold(TrainConfig(**SMALL), train, val + train[:1])


def test_non_finite_loss_reports_batch():
    train, val = small_split()
    cfg = TrainConfig(**SMALL, class_weights=(1e308, 1e308, 1e308))
    with pytest.raises(TrainingError, match="batch ids"):
        train_fold(cfg, train, val)


def test_class_weight_scaling_under_sgd():
    train, val = small_split(80)
    base = dict(SMALL, epochs=1, optimizer="sgd", weight_decay=0.0, grad_clip=None)
    a = train_fold(TrainConfig(**base, backbone_max_lr=0.4, head_max_lr=0.4), train, val)
    c = 4.0
    b = train_fold(
        TrainConfig(**base, backbone_max_lr=0.4 / c, head_max_lr=0.4 / c, class_weights=(c, c, 0.1 * c)), train, val
    )
    assert a.history == b.history
    assert all(torch.equal(a.state[k], b.state[k]) for k in a.state)
    ma, mb = a.build_model(), b.build_model()
    pa = model_logits(ma, val).argmax(1)
    pb = model_logits(mb, val).argmax(1)
    assert np.array_equal(pa, pb)


# Monte Carlo dropout


def _model(rate, seed=0):
    enc = tiny_encoder(seed=seed)
    head = ClassifierHead(8, dropout_rate=rate, samples=5, seed=seed, init_std=0.5).double()
    return EntitySentimentModel(enc, head), TokenizedInput((4, 5, 6, 7), (1, 3))


def test_mc_dropout_rate_zero_equals_eval():
    model, inp = _model(0.0)
    with torch.no_grad():
        ref = model.eval()(collate([inp]))["final"][0]
    for t in (1, 7):
        assert torch.equal(mc_dropout_predict(model, inp, t, torch.Generator().manual_seed(0)), ref)
    assert not model.training


def test_mc_dropout_single_pass_is_one_stochastic_pass():
    model, inp = _model(0.5)
    out = mc_dropout_predict(model, inp, 1, torch.Generator().manual_seed(9))
    model.train()
    with torch.no_grad():
        ref = model(collate([inp]), torch.Generator().manual_seed(9))["final"][0]
    assert torch.equal(out, ref)


def test_mc_dropout_mean_matches_replay():
    model, inp = _model(0.5)
    mean, passes = mc_dropout_predict(model, inp, 1000, torch.Generator().manual_seed(4), return_passes=True)
    arr = passes.numpy()
    assert arr.shape == (1000, 3)
    assert np.unique(arr[:, 0]).size > 1
    ext = arr.mean(axis=0)
    se = arr.std(axis=0, ddof=1) / math.sqrt(len(arr))
    assert np.all(np.abs(mean.numpy() - ext) <= 3 * se + 1e-15)


def test_mc_dropout_rejects_zero_passes():
    model, inp = _model(0.5)
    with pytest.raises(ValueError):
        mc_dropout_predict(model, inp, 0)


# pretraining


def test_mask_tokens_targets():
    g = torch.Generator().manual_seed(0)
    ids = torch.randint(4, 50, (16, 10), generator=g)
    attention = torch.ones_like(ids, dtype=torch.bool)
    attention[:, 7:] = False
    corrupted, targets = mask_tokens(ids, attention, 50, g)
    scored = targets != -100
    assert scored.any(dim=1).all()
    assert not scored[:, 7:].any()
    assert torch.equal(targets[scored], ids[scored])
    assert torch.equal(corrupted[~scored], ids[~scored])


def test_pretraining_lowers_loss():
    recs = cue_corpus(200, seed=1)
    enc = tiny_encoder(words=[w.lower() for r in recs for w in r.sentence.split()], hidden=16, dtype=torch.float32)
    losses = pretrain_mlm(enc, [r.sentence for r in recs], epochs=6, seed=0)
    assert len(losses) == 6 and losses[-1] < losses[0]
    assert not enc.training


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_tokenized_training_inputs_align(seed):
    recs = cue_corpus(5, seed=seed, n_entities=5)
    enc = tiny_encoder(words=[w.lower() for r in recs for w in r.sentence.split()])
    for r in recs:
        inp = tokenize(r.sentence, r.entity_char_span, enc.vocab)
        k, m = inp.entity_token_span
        assert 0 <= k < m <= len(inp)
