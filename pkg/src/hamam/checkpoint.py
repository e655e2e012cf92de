"""Checkpoint container.

Layout: 8-byte magic, 8-byte little-endian header length, a UTF-8 JSON
header (config echo, vocabulary, vocabulary hash, tensor table), then the
raw little-endian tensor bytes in table order. The encoding is fully
deterministic, so identical parameters give identical files.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from hamam.config import TrainConfig
from hamam.encoder import EncoderConfig, ToyEncoder, Vocabulary
from hamam.errors import CheckpointError
from hamam.heads import ClassifierHead, EntitySentimentModel

MAGIC = b"HAMAMCK1"
_DTYPES = {torch.float32: "<f4", torch.float64: "<f8", torch.int64: "<i8"}


@dataclass
class Checkpoint:
    config: TrainConfig
    vocab: list[str]
    encoder_config: dict
    state: dict[str, torch.Tensor]
    step: int
    val_f1: float
    history: list[tuple[int, float]] = field(default_factory=list)

    def build_model(self) -> EntitySentimentModel:
        model = assemble_model(self.config, Vocabulary(self.vocab), EncoderConfig(**self.encoder_config))
        dtype = next(iter(self.state.values())).dtype
        model.to(dtype)
        model.load_state_dict(self.state)
        return model.eval()


def assemble_model(config: TrainConfig, vocab: Vocabulary, encoder_config: EncoderConfig | None = None,
                   backbone=None) -> EntitySentimentModel:
    if backbone is None:
        encoder_config = encoder_config or EncoderConfig(
            vocab_size=len(vocab),
            hidden_size=config.hidden_size,
            num_layers=config.num_layers,
            num_heads=config.num_heads,
            max_length=config.max_length,
        )
        backbone = ToyEncoder(vocab, encoder_config, seed=config.seed)
    head = ClassifierHead(
        backbone.hidden_size,
        dropout_rate=config.dropout_rate,
        samples=config.dropout_samples,
        seed=config.seed + 1,
        init_std=config.head_init_std,
    )
    return EntitySentimentModel(
        backbone, head, variant=config.head_variant, pooling=config.pooling, entity_masking=config.entity_masking
    )


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    table, chunks, offset = [], [], 0
    for name in sorted(ckpt.state):
        t = ckpt.state[name].detach().cpu().contiguous()
        if t.dtype not in _DTYPES:
            raise CheckpointError(f"unsupported dtype {t.dtype} for {name}")
        data = t.numpy().astype(_DTYPES[t.dtype], copy=False).tobytes()
        table.append({"name": name, "dtype": _DTYPES[t.dtype], "shape": list(t.shape), "offset": offset,
                      "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    header = {
        "format": 1,
        "config": ckpt.config.to_dict(),
        "encoder_config": ckpt.encoder_config,
        "vocab": ckpt.vocab,
        "vocab_hash": Vocabulary(ckpt.vocab).hash,
        "step": ckpt.step,
        "val_f1": ckpt.val_f1,
        "history": [list(h) for h in ckpt.history],
        "tensors": table,
    }
    raw = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(raw)) + raw + b"".join(chunks)


def decode_checkpoint(blob: bytes) -> Checkpoint:
    if blob[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (n,) = struct.unpack("<Q", blob[8:16])
    try:
        header = json.loads(blob[16 : 16 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    vocab = header["vocab"]
    raw_hash = hashlib.sha256("\n".join(vocab).encode("utf-8")).hexdigest()
    if raw_hash != header["vocab_hash"]:
        raise CheckpointError("vocabulary hash mismatch; checkpoint is corrupt or was edited")
    body = memoryview(blob)[16 + n :]
    state = {}
    for entry in header["tensors"]:
        chunk = body[entry["offset"] : entry["offset"] + entry["nbytes"]]
        if len(chunk) != entry["nbytes"]:
            raise CheckpointError(f"truncated tensor data for {entry['name']}")
        arr = np.frombuffer(chunk, dtype=entry["dtype"]).reshape(entry["shape"]).copy()
        state[entry["name"]] = torch.from_numpy(arr)
    return Checkpoint(
        config=TrainConfig.from_dict({k: (tuple(v) if k == "class_weights" else v) for k, v in header["config"].items()}),
        vocab=vocab,
        encoder_config=header["encoder_config"],
        state=state,
        step=header["step"],
        val_f1=header["val_f1"],
        history=[tuple(h) for h in header["history"]],
    )


def atomic_write(path: str | Path, data: bytes | str) -> None:
    """Write to a temporary sibling, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    atomic_write(path, encode_checkpoint(ckpt))


def load_checkpoint(path: str | Path) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes())
