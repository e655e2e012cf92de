"""Shared oracles for the test suite."""

import numpy as np
import torch

from hamam.dataset import Record
from hamam.encoder import EncoderConfig, ToyEncoder, Vocabulary


def tiny_encoder(words=("a", "b", "c", "d", "e", "f"), hidden=8, heads=2, layers=2, seed=0, dtype=torch.float64):
    vocab = Vocabulary.from_corpus([], extra=words)
    cfg = EncoderConfig(vocab_size=len(vocab), hidden_size=hidden, num_heads=heads, num_layers=layers, max_length=16,
                        init_std=0.5)
    return ToyEncoder(vocab, cfg, seed=seed).to(dtype)


def finite_difference_grads(params, loss_fn, eps=1e-6):
    """Central differences of ``loss_fn()`` w.r.t. every entry of ``params``."""
    grads = []
    with torch.no_grad():
        for p in params:
            g = torch.zeros_like(p)
            flat, gflat = p.view(-1), g.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                up = float(loss_fn())
                flat[i] = orig - eps
                down = float(loss_fn())
                flat[i] = orig
                gflat[i] = (up - down) / (2 * eps)
            grads.append(g)
    return grads


def relative_error(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


def make_record(rid, words, entity_index, label=None, entity_len=1):
    """Record whose entity is ``words[entity_index : entity_index + entity_len]``."""
    sentence = " ".join(words)
    start = sum(len(w) + 1 for w in words[:entity_index])
    entity = " ".join(words[entity_index : entity_index + entity_len])
    return Record(rid, sentence, (start, start + len(entity)), entity, label)
