"""Command-line interface: ``hamam train | predict | evaluate | zeroshot | report | synth``.

Every command writes its outputs atomically plus one JSON run manifest, and
reports failures on stderr as a JSON object with a ``category`` tag.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import subprocess
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np
import torch

from hamam import __version__
from hamam.checkpoint import atomic_write, load_checkpoint, save_checkpoint
from hamam.config import TrainConfig, parse_config_text, parse_value
from hamam.dataset import SentimentLabel, dump_records, read_records, split_folds
from hamam.decision import DecisionConfig, predict_many
from hamam.encoder import EncoderConfig, ToyEncoder, Vocabulary
from hamam.errors import AlignmentError, HamamError, UsageError, ValidationError
from hamam.evaluation import confusion, error_report, metrics
from hamam.training import pretrain_mlm, train_fold
from hamam.zeroshot import PolarityLexicon, zero_shot_many

SEED_ENV = "HAMAM_SEED"
logger = logging.getLogger("hamam")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _git_describe() -> str | None:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"], capture_output=True, text=True, timeout=5,
            cwd=Path(__file__).resolve().parent,
        )
    except (OSError, subprocess.SubprocessError):
        return None
    if out.returncode != 0:
        return None
    return out.stdout.strip() or None


class RunManifest:
    """Collects what a run read and wrote; saved once at the end."""

    def __init__(self, command: str, argv: list[str]):
        self.started = time.time()
        self.data = {
            "command": command,
            "argv": argv,
            "version": __version__,
            "config_hash": None,
            "seed": None,
            "inputs": {},
            "outputs": [],
            "git_describe": _git_describe(),
        }

    def input(self, path) -> None:
        self.data["inputs"][str(path)] = _sha256(path)

    def output(self, path) -> None:
        self.data["outputs"].append(str(path))

    def save(self, path: Path) -> None:
        self.data["started_at"] = self.started
        self.data["wall_clock_seconds"] = time.time() - self.started
        atomic_write(path, json.dumps(self.data, indent=2, sort_keys=True) + "\n")


def _write(manifest: RunManifest, path: Path, data) -> None:
    atomic_write(path, data)
    manifest.output(path)


def _jsonl(rows) -> str:
    return "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in rows)


# train


def _config_keys() -> list[str]:
    return [f.name for f in fields(TrainConfig)]


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    group = p.add_argument_group("training configuration (overrides the config file)")
    for key in _config_keys():
        flags = sorted({f"--{key}", f"--{key.replace('_', '-')}"})
        group.add_argument(*flags, dest=f"cfg_{key}", metavar="VALUE", default=None)


def _resolve_config(args) -> TrainConfig:
    """Flags beat the config file, which beats $HAMAM_SEED and the defaults."""
    values = {}
    if os.environ.get(SEED_ENV) is not None:
        values["seed"] = parse_value("seed", os.environ[SEED_ENV])
    if args.config is not None:
        values.update(parse_config_text(Path(args.config).read_text(encoding="utf-8")))
    for key in _config_keys():
        raw = getattr(args, f"cfg_{key}")
        if raw is not None:
            values[key] = parse_value(key, raw)
    return TrainConfig.from_dict(values)


def cmd_train(args, manifest: RunManifest) -> int:
    config = _resolve_config(args)
    manifest.data["config_hash"] = config.hash
    manifest.data["seed"] = config.seed
    if args.config:
        manifest.input(args.config)
    manifest.input(args.data)
    records = read_records(args.data)
    if any(r.label is None for r in records):
        raise ValidationError("training data must be fully labelled")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    folds = split_folds(records, config.fold_count, config.seed)
    _write(manifest, out / "config.txt", config.to_text())
    _write(manifest, out / "folds.json", folds.to_json() + "\n")
    summary = []
    for fold in range(config.fold_count):
        train, val = folds.split(records, fold)
        entries = []
        logger.info("fold %d: %d train / %d validation records", fold, len(train), len(val))
        ckpt = train_fold(config, train, val, log=entries.append)
        save_checkpoint(ckpt, out / f"fold_{fold}.ckpt")
        manifest.output(out / f"fold_{fold}.ckpt")
        _write(manifest, out / f"fold_{fold}.log.jsonl", _jsonl(entries))
        summary.append({"fold": fold, "step": ckpt.step, "val_macro_f1_pn": ckpt.val_f1})
        print(json.dumps(summary[-1]))
    _write(manifest, out / "summary.json", json.dumps(summary, indent=2) + "\n")
    return 0


# predict


def _labelled_output(pred, verbose: bool) -> dict:
    row = {"id": pred.id, "label": pred.label.tag}
    if verbose:
        row["probs"] = [float(x) for x in pred.probs]
        row["logits"] = [[float(x) for x in m] for m in pred.per_model_logits]
    return row


def cmd_predict(args, manifest: RunManifest) -> int:
    if not args.checkpoint:
        raise UsageError("predict needs at least one --checkpoint")
    models = []
    for path in args.checkpoint:
        manifest.input(path)
        models.append(load_checkpoint(path).build_model())
    manifest.input(args.data)
    records = read_records(args.data)
    config = DecisionConfig(args.threshold)
    manifest.data["config_hash"] = hashlib.sha256(repr(config).encode()).hexdigest()
    preds = predict_many(models, records, config)
    _write(manifest, Path(args.out), _jsonl(_labelled_output(p, args.verbose) for p in preds))
    return 0


# evaluate / report


def _read_predictions(path) -> dict[str, dict]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                out[str(row["id"])] = {"label": SentimentLabel.parse(row["label"]), "probs": row.get("probs")}
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValidationError(f"{path}: line {number}: bad prediction row ({exc})") from None
    return out


def _aligned(args, manifest: RunManifest):
    manifest.input(args.predictions)
    manifest.input(args.gold)
    preds = _read_predictions(args.predictions)
    golds = read_records(args.gold)
    unlabelled = [r.id for r in golds if r.label is None]
    if unlabelled:
        raise ValidationError(f"gold records without labels: {', '.join(unlabelled[:20])}")
    missing = [r.id for r in golds if r.id not in preds]
    extra = sorted(set(preds) - {r.id for r in golds})
    if missing or extra:
        parts = []
        if missing:
            parts.append(f"missing predictions for: {', '.join(missing[:20])}")
        if extra:
            parts.append(f"predictions without gold: {', '.join(extra[:20])}")
        raise AlignmentError("; ".join(parts))
    gold_labels = [int(r.label) for r in golds]
    pred_labels = [int(preds[r.id]["label"]) for r in golds]
    probs = [preds[r.id]["probs"] or np.eye(3)[preds[r.id]["label"]].tolist() for r in golds]
    return golds, gold_labels, pred_labels, probs


def cmd_evaluate(args, manifest: RunManifest) -> int:
    golds, g, p, probs = _aligned(args, manifest)
    result = metrics(confusion(g, p))
    text = json.dumps(result, indent=2) + "\n"
    _write(manifest, Path(args.out), text)
    if args.errors:
        report = error_report(golds, g, p, probs)
        body = report.to_json() + "\n" if str(args.errors).endswith(".json") else report.render()
        _write(manifest, Path(args.errors), body)
    sys.stdout.write(text)
    return 0


def cmd_report(args, manifest: RunManifest) -> int:
    golds, g, p, probs = _aligned(args, manifest)
    report = error_report(golds, g, p, probs)
    body = report.to_json() + "\n" if args.format == "json" else report.render()
    _write(manifest, Path(args.out), body)
    sys.stdout.write(body)
    return 0


# zeroshot


def _toy_mlm(records, lexicon: PolarityLexicon, pretrain_path, epochs: int, seed: int) -> ToyEncoder:
    sentences = [r.sentence for r in records]
    if pretrain_path:
        sentences = [s for s in Path(pretrain_path).read_text(encoding="utf-8").splitlines() if s.strip()]
    vocab = Vocabulary.from_corpus(sentences + [r.sentence for r in records],
                                   extra=lexicon.good_tokens + lexicon.bad_tokens)
    encoder = ToyEncoder(vocab, EncoderConfig(len(vocab)), seed=seed)
    pretrain_mlm(encoder, sentences, epochs, seed=seed)
    return encoder


def cmd_zeroshot(args, manifest: RunManifest) -> int:
    if args.lexicon:
        manifest.input(args.lexicon)
        lexicon = PolarityLexicon.load(args.lexicon)
    else:
        lexicon = PolarityLexicon.default()
    manifest.input(args.data)
    records = read_records(args.data)
    seed = args.seed if args.seed is not None else int(os.environ.get(SEED_ENV, 0))
    manifest.data["seed"] = seed
    if args.checkpoint:
        manifest.input(args.checkpoint)
        backbone = load_checkpoint(args.checkpoint).build_model().backbone
    else:
        if args.pretrain:
            manifest.input(args.pretrain)
        backbone = _toy_mlm(records, lexicon, args.pretrain, args.pretrain_epochs, seed)
    backbone.eval()
    scores = zero_shot_many(backbone, records, lexicon)
    _write(manifest, Path(args.out), _jsonl(s.to_dict() for s in scores))
    labelled = [(s, r) for s, r in zip(scores, records) if r.label in (SentimentLabel.POSITIVE,
                                                                       SentimentLabel.NEGATIVE)]
    if labelled:
        agree = sum(s.label == r.label for s, r in labelled) / len(labelled)
        print(json.dumps({"scored": len(scores), "polar_gold": len(labelled), "agreement": agree}))
    return 0


# synth


def cmd_synth(args, manifest: RunManifest) -> int:
    from hamam import synthetic

    out = Path(args.out)
    seed = args.seed if args.seed is not None else int(os.environ.get(SEED_ENV, 0))
    manifest.data["seed"] = seed
    if args.kind == "cue":
        _write(manifest, out / "cue.jsonl", dump_records(synthetic.cue_corpus(args.n, seed=seed)))
    elif args.kind == "bias":
        train, val = synthetic.bias_split(seed)
        _write(manifest, out / "bias_train.jsonl", dump_records(train))
        _write(manifest, out / "bias_val.jsonl", dump_records(val))
    else:
        pretrain, records = synthetic.zero_shot_corpora(seed)
        _write(manifest, out / "zeroshot_pretrain.txt", "".join(s + "\n" for s in pretrain))
        _write(manifest, out / "zeroshot_eval.jsonl", dump_records(records))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hamam", description="Entity-level sentiment with half-masked dual-pass models.")
    parser.add_argument("--version", action="version", version=f"hamam {__version__}")
    parser.add_argument("--jobs", type=int, default=1, help="cap on worker threads (default 1)")
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="cross-validated fold training")
    p.add_argument("--data", required=True, help="labelled JSONL records")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="flat 'key = value' config file")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="ensemble prediction from fold checkpoints")
    p.add_argument("--checkpoint", action="append", default=[], help="repeatable")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="predictions JSONL")
    p.add_argument("--threshold", type=float, default=None, help="neutral threshold, e.g. 0.55")
    p.add_argument("--no-verbose", dest="verbose", action="store_false", help="write only id and label")
    p.set_defaults(func=cmd_predict)

    for name, func, help_text in (("evaluate", cmd_evaluate, "metrics JSON"), ("report", cmd_report, "error report")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--predictions", required=True)
        p.add_argument("--gold", required=True)
        p.add_argument("--out", required=True)
        if name == "evaluate":
            p.add_argument("--errors", help="also write an error report (.json for JSON, else text)")
        else:
            p.add_argument("--format", choices=("text", "json"), default="text")
        p.set_defaults(func=func)

    p = sub.add_parser("zeroshot", help="masked-LM zero-shot scoring")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lexicon", help="[good]/[bad] token file (default: bundled list)")
    p.add_argument("--checkpoint", help="use this checkpoint's backbone instead of a fresh toy MLM")
    p.add_argument("--pretrain", help="plain-text sentences for the toy MLM (default: the data sentences)")
    p.add_argument("--pretrain-epochs", type=int, default=10)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_zeroshot)

    p = sub.add_parser("synth", help="write a synthetic corpus")
    p.add_argument("--kind", choices=("cue", "bias", "zeroshot"), default="cue")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)
    return parser


def _fail(category: str, message: str) -> None:
    sys.stderr.write(json.dumps({"error": category, "message": message}) + "\n")


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        _fail(exc.category, str(exc))
        return 2
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        _fail("usage", "--jobs must be >= 1")
        return 2
    torch.set_num_threads(args.jobs)
    manifest = RunManifest(args.command, argv)
    # directory-producing commands keep the manifest inside the directory
    if args.command in ("train", "synth"):
        manifest_path = Path(args.out) / "manifest.json"
    else:
        manifest_path = Path(str(args.out) + ".manifest.json")
    try:
        code = args.func(args, manifest)
    except (HamamError, OSError) as exc:
        category = exc.category if isinstance(exc, HamamError) else "io"
        code = 2 if isinstance(exc, UsageError) else 1
        _fail(category, str(exc))
        manifest.data["error"] = {"category": category, "message": str(exc)}
    manifest.data["exit_code"] = code
    try:
        manifest.save(manifest_path)
    except OSError as exc:
        _fail("io", f"could not write manifest: {exc}")
        code = code or 1
    return code


if __name__ == "__main__":
    sys.exit(main())
