"""Tokenization with entity-span alignment and the reference toy encoder.

The toy encoder is a small pre-LayerNorm transformer with learned position
embeddings and an MLM output head tied to the input embeddings. Any object
satisfying :class:`Backbone` can stand in for it.
"""

from __future__ import annotations

import hashlib
import math
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import torch
import torch.nn.functional as F
from torch import nn

from hamam.errors import AlignmentError, ValidationError, VocabularyError

PAD, UNK, MASK, SENTIMENT = "[PAD]", "[UNK]", "[MASK]", "[SENTIMENT]"
SPECIALS = (PAD, UNK, MASK, SENTIMENT)
PAD_ID, UNK_ID, MASK_ID, SENTIMENT_ID = range(4)

_WORD_RE = re.compile(r"\w+|[^\w\s]")


def split_words(sentence: str) -> list[tuple[str, int, int]]:
    """Whitespace-plus-punctuation split with character offsets."""
    return [(m.group(), m.start(), m.end()) for m in _WORD_RE.finditer(sentence)]


class Vocabulary:
    """Closed vocabulary. Lookups are case-insensitive; ids 0-3 are the specials."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[:4]) != SPECIALS:
            raise VocabularyError(f"vocabulary must start with {SPECIALS}")
        if len(set(tokens)) != len(tokens):
            raise VocabularyError("vocabulary contains duplicate tokens")
        self.tokens = tokens
        self._index = {t: i for i, t in enumerate(tokens)}

    @classmethod
    def from_corpus(cls, sentences: Iterable[str], extra: Iterable[str] = (), min_count: int = 1) -> Vocabulary:
        counts = Counter(w.lower() for s in sentences for w, _, _ in split_words(s))
        counts.update(w.lower() for w in extra)
        words = sorted(w for w, c in counts.items() if c >= min_count and w not in SPECIALS)
        return cls(list(SPECIALS) + words)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index or token.lower() in self._index

    def id(self, token: str) -> int:
        if token in SPECIALS:
            return self._index[token]
        return self._index.get(token.lower(), UNK_ID)

    def strict_id(self, token: str) -> int:
        """Like :meth:`id` but raises for out-of-vocabulary tokens."""
        i = self.id(token)
        if i == UNK_ID and token != UNK:
            raise VocabularyError(f"token {token!r} is not in the vocabulary")
        return i

    @property
    def hash(self) -> str:
        return hashlib.sha256("\n".join(self.tokens).encode("utf-8")).hexdigest()

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> Vocabulary:
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(lines)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def __repr__(self):
        return f"Vocabulary(size={len(self)})"


@dataclass(frozen=True)
class TokenizedInput:
    """Token ids plus the half-open entity token span ``(k, m)``.

    ``inserted_position`` records where a marker token ([SENTIMENT] or, for
    zero-shot scoring, [MASK]) was inserted before the entity.
    """

    token_ids: tuple[int, ...]
    entity_token_span: tuple[int, int]
    is_masked: bool = False
    has_sentiment_token: bool = False
    inserted_position: int | None = None
    tokens: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        k, m = self.entity_token_span
        if not 0 <= k < m <= len(self.token_ids):
            raise ValidationError(f"entity span ({k}, {m}) invalid for length {len(self.token_ids)}")
        if self.is_masked and self.has_sentiment_token:
            raise ValidationError("an input cannot be both entity-masked and carry [SENTIMENT]")

    def __len__(self) -> int:
        return len(self.token_ids)


def tokenize(sentence: str, entity_char_span: tuple[int, int], vocab: Vocabulary) -> TokenizedInput:
    """Tokenize and locate the tokens overlapping the entity character span."""
    start, end = entity_char_span
    if not 0 <= start < end <= len(sentence):
        raise ValidationError(f"character span ({start}, {end}) invalid for sentence of length {len(sentence)}")
    words = split_words(sentence)
    hits = [i for i, (_, s, e) in enumerate(words) if s < end and e > start]
    if not hits:
        raise AlignmentError(f"no token overlaps character span ({start}, {end}) in {sentence!r}")
    return TokenizedInput(
        token_ids=tuple(vocab.id(w) for w, _, _ in words),
        entity_token_span=(hits[0], hits[-1] + 1),
        tokens=tuple(w for w, _, _ in words),
    )


def mask_entity(inp: TokenizedInput) -> TokenizedInput:
    """Replace every entity token with its own [MASK]; length and span are kept."""
    if inp.is_masked:
        raise ValidationError("input is already entity-masked")
    if inp.inserted_position is not None:
        raise ValidationError("cannot mask an input that carries an inserted marker token")
    k, m = inp.entity_token_span
    ids = inp.token_ids[:k] + (MASK_ID,) * (m - k) + inp.token_ids[m:]
    tokens = inp.tokens[:k] + (MASK,) * (m - k) + inp.tokens[m:] if inp.tokens else ()
    return replace(inp, token_ids=ids, is_masked=True, tokens=tokens)


def insert_before_entity(inp: TokenizedInput, token_id: int) -> TokenizedInput:
    if inp.is_masked or inp.inserted_position is not None:
        raise ValidationError("marker insertion requires an unmasked input without prior insertion")
    k, m = inp.entity_token_span
    ids = inp.token_ids[:k] + (token_id,) + inp.token_ids[k:]
    tokens = inp.tokens[:k] + (SPECIALS[token_id] if token_id < 4 else "?",) + inp.tokens[k:] if inp.tokens else ()
    return replace(
        inp,
        token_ids=ids,
        entity_token_span=(k + 1, m + 1),
        has_sentiment_token=token_id == SENTIMENT_ID,
        inserted_position=k,
        tokens=tokens,
    )


def insert_sentiment_token(inp: TokenizedInput) -> TokenizedInput:
    return insert_before_entity(inp, SENTIMENT_ID)


def pad_inputs(
    inputs: Sequence[TokenizedInput], device: torch.device | None = None
) -> tuple[torch.Tensor, torch.Tensor]:
    """Right-pad to a ``(B, L)`` id tensor and a boolean attention mask."""
    length = max(len(x) for x in inputs)
    ids = torch.full((len(inputs), length), PAD_ID, dtype=torch.long, device=device)
    attention = torch.zeros((len(inputs), length), dtype=torch.bool, device=device)
    for row, x in enumerate(inputs):
        ids[row, : len(x)] = torch.tensor(x.token_ids, dtype=torch.long)
        attention[row, : len(x)] = True
    return ids, attention


class Backbone(Protocol):
    """What the heads need from a transformer."""

    vocab: Vocabulary
    hidden_size: int

    def forward(self, ids: torch.Tensor, attention_mask: torch.Tensor | None = None) -> torch.Tensor: ...

    def encode(self, inp: TokenizedInput) -> torch.Tensor: ...

    def mlm_distribution(self, inp: TokenizedInput, position: int) -> torch.Tensor: ...

    def parameters(self): ...


@dataclass
class EncoderConfig:
    vocab_size: int
    hidden_size: int = 64
    num_layers: int = 2
    num_heads: int = 4
    ffn_size: int | None = None
    max_length: int = 128
    init_std: float = 0.02

    def __post_init__(self):
        if self.hidden_size % self.num_heads:
            raise ValidationError("hidden_size must be divisible by num_heads")
        if self.ffn_size is None:
            self.ffn_size = 4 * self.hidden_size


class SelfAttention(nn.Module):
    def __init__(self, hidden: int, heads: int):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(hidden, 3 * hidden)
        self.out = nn.Linear(hidden, hidden)

    def forward(self, x: torch.Tensor, key_mask: torch.Tensor | None) -> torch.Tensor:
        b, n, d = x.shape
        q, k, v = self.qkv(x).view(b, n, 3, self.heads, d // self.heads).permute(2, 0, 3, 1, 4)
        scores = q @ k.transpose(-1, -2) / math.sqrt(d // self.heads)
        if key_mask is not None:
            scores = scores.masked_fill(~key_mask[:, None, None, :], torch.finfo(scores.dtype).min)
        ctx = scores.softmax(dim=-1) @ v
        return self.out(ctx.transpose(1, 2).reshape(b, n, d))


class EncoderLayer(nn.Module):
    def __init__(self, hidden: int, heads: int, ffn: int):
        super().__init__()
        self.attn_norm = nn.LayerNorm(hidden)
        self.attn = SelfAttention(hidden, heads)
        self.ffn_norm = nn.LayerNorm(hidden)
        self.ffn_in = nn.Linear(hidden, ffn)
        self.ffn_out = nn.Linear(ffn, hidden)

    def forward(self, x, key_mask=None):
        x = x + self.attn(self.attn_norm(x), key_mask)
        return x + self.ffn_out(F.gelu(self.ffn_in(self.ffn_norm(x))))


class ToyEncoder(nn.Module):
    """Reference backbone: BERT-style encoder small enough for finite differences."""

    def __init__(self, vocab: Vocabulary, config: EncoderConfig | None = None, seed: int = 0):
        super().__init__()
        self.vocab = vocab
        self.config = config or EncoderConfig(vocab_size=len(vocab))
        if self.config.vocab_size != len(vocab):
            raise VocabularyError("config.vocab_size does not match the vocabulary")
        c = self.config
        self.token_embedding = nn.Embedding(c.vocab_size, c.hidden_size)
        self.position_embedding = nn.Embedding(c.max_length, c.hidden_size)
        self.embedding_norm = nn.LayerNorm(c.hidden_size)
        self.layers = nn.ModuleList(
            EncoderLayer(c.hidden_size, c.num_heads, c.ffn_size) for _ in range(c.num_layers)
        )
        self.final_norm = nn.LayerNorm(c.hidden_size)
        self.mlm_dense = nn.Linear(c.hidden_size, c.hidden_size)
        self.mlm_norm = nn.LayerNorm(c.hidden_size)
        self.mlm_bias = nn.Parameter(torch.zeros(c.vocab_size))
        self.neighbor_dense = nn.Linear(c.hidden_size, 2 * c.hidden_size)
        self.reset_parameters(seed)

    @property
    def hidden_size(self) -> int:
        return self.config.hidden_size

    def reset_parameters(self, seed: int) -> None:
        g = torch.Generator().manual_seed(seed)
        std = self.config.init_std
        for name, p in self.named_parameters():
            with torch.no_grad():
                if name.endswith("norm.weight"):
                    p.fill_(1.0)
                elif p.dim() >= 2:
                    p.copy_(torch.randn(p.shape, generator=g, dtype=p.dtype) * std)
                else:
                    p.zero_()

    def forward(self, ids: torch.Tensor, attention_mask: torch.Tensor | None = None) -> torch.Tensor:
        """Hidden states ``(B, L, N)`` for ids ``(B, L)``."""
        if ids.dim() == 1:
            return self.forward(ids[None], None if attention_mask is None else attention_mask[None])[0]
        if ids.shape[1] > self.config.max_length:
            raise ValidationError(f"sequence length {ids.shape[1]} exceeds max_length {self.config.max_length}")
        if ids.numel() and (int(ids.max()) >= self.config.vocab_size or int(ids.min()) < 0):
            raise VocabularyError(f"token id out of range for vocabulary of size {self.config.vocab_size}")
        positions = torch.arange(ids.shape[1], device=ids.device)
        x = self.embedding_norm(self.token_embedding(ids) + self.position_embedding(positions))
        for layer in self.layers:
            x = layer(x, attention_mask)
        return self.final_norm(x)

    def encode(self, inp: TokenizedInput) -> torch.Tensor:
        ids = torch.tensor(inp.token_ids, dtype=torch.long)
        return self.forward(ids[None])[0]

    def mlm_logits(self, hidden: torch.Tensor) -> torch.Tensor:
        h = self.mlm_norm(F.gelu(self.mlm_dense(hidden)))
        return h @ self.token_embedding.weight.T + self.mlm_bias

    def neighbor_logits(self, hidden: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Vocabulary logits for the tokens left and right of each position."""
        left, right = self.neighbor_dense(hidden).chunk(2, dim=-1)
        decoder = self.token_embedding.weight.T
        return left @ decoder + self.mlm_bias, right @ decoder + self.mlm_bias

    def mlm_distribution(self, inp: TokenizedInput, position: int) -> torch.Tensor:
        """Probability vector over the vocabulary at ``position``."""
        if not 0 <= position < len(inp):
            raise ValidationError(f"position {position} outside sequence of length {len(inp)}")
        return self.mlm_logits(self.encode(inp)[position]).softmax(dim=-1)
