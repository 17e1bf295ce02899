"""Command-line surface: generate / pretrain / finetune / evaluate /
simulate-masking / export-attention."""

import os

_threads = os.environ.get("STDIALOG_NUM_THREADS")
if _threads:
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, _threads)

import argparse
import json
import sys
from pathlib import Path

import numpy as np


def _cmd_generate(args):
    from .corpus import SyntheticConfig, generate_synthetic
    from .shards import write_shards
    from .text import Vocab

    cfg = SyntheticConfig(
        num_dialogs=args.num_dialogs,
        turns_per_dialog=tuple(args.turns_per_dialog),
        vocab_size=args.vocab_size,
        words_per_turn=tuple(args.words_per_turn),
        frame_rate=args.frame_rate,
        noise_std=args.noise_std,
        word_duration=tuple(args.word_duration))
    dialogs = generate_synthetic(cfg, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = write_shards(dialogs, out / "manifest.json",
                            sample_rate=cfg.frame_rate,
                            max_turn_seconds=cfg.max_turn_seconds)
    Vocab.from_tokens(cfg.vocabulary()).save(out / "vocab.txt")
    n_turns = sum(len(d.turns) for d in dialogs)
    print(f"wrote {len(dialogs)} dialogs / {n_turns} turns to {out}")
    print(f"shard checksum {manifest.shard_checksum[:16]}...")
    return 0


def _cmd_pretrain(args):
    from .shards import load_corpus
    from .trainer import TrainConfig, pretrain

    cfg = TrainConfig.from_json(args.config) if args.config else TrainConfig()
    overrides = {
        "steps": args.steps, "seed": args.seed, "batch_size": args.batch_size,
        "peak_lr": args.peak_lr, "k": args.k, "alpha": args.alpha,
        "corpus_fraction": args.corpus_fraction,
    }
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    if args.no_crs:
        cfg.crs_enabled = False
    corpus = load_corpus(args.corpus)
    vocab = None
    if args.vocab:
        from .text import Vocab
        vocab = Vocab.load(args.vocab)
    result = pretrain(cfg, corpus, out_dir=args.out,
                      resume_from=args.resume, vocab=vocab)
    last = result.metrics[-1]
    print(f"pretrained {cfg.steps} steps; final joint loss "
          f"{last['joint']:.4f} (tpp {last['tpp']:.4f} crs {last['crs']:.4f} "
          f"cmlm {last['cmlm']:.4f} cmam {last['cmam']:.4f})")
    print(f"checkpoint: {result.checkpoint_path}")
    return 0


def _load_task_items(corpus_path, labels_path):
    from .finetune import read_labels_manifest
    from .shards import load_corpus
    from .corpus import build_samples

    corpus = load_corpus(corpus_path)
    labels = read_labels_manifest(labels_path)
    items = []
    for d in corpus.dialogs:
        for s in build_samples(d, k=1):
            key = (s.dialog_id, s.target_turn_index)
            if key in labels:
                items.append((s, labels[key]))
    if not items:
        raise SystemExit("no labeled samples found for this corpus")
    return items


def _cmd_finetune(args):
    from .finetune import TaskSpec
    from .trainer import FinetuneConfig, finetune, model_from_checkpoint

    model, vocab, _ = model_from_checkpoint(args.checkpoint)
    items = _load_task_items(args.task_corpus, args.labels)
    num_classes = max(label for _, label in items) + 1
    task = TaskSpec(kind="classification", num_classes=num_classes)
    cfg = FinetuneConfig(seed=args.seed, steps=args.steps,
                         batch_size=args.batch_size, peak_lr=args.peak_lr,
                         speech_noise_std=args.speech_noise_std)
    result = finetune(cfg, model, vocab, task, items, out_dir=args.out)
    print(f"fine-tuned {cfg.steps} steps; final loss "
          f"{result.metrics[-1]['loss']:.4f}")
    print(f"checkpoint: {result.checkpoint_path}")
    return 0


def _cmd_evaluate(args):
    from .finetune import TaskSpec, head_from_registry
    from .trainer import evaluate_task, model_from_checkpoint

    model, vocab, state = model_from_checkpoint(args.checkpoint)
    task_meta = state.get("task")
    if not task_meta:
        raise SystemExit("checkpoint carries no fine-tuned task head")
    task = TaskSpec(kind=task_meta["kind"],
                    num_classes=task_meta["num_classes"])
    head = head_from_registry(model.params)
    items = _load_task_items(args.task_corpus, args.labels)
    acc = evaluate_task(model, vocab, head, task, items,
                        speech_noise_std=args.speech_noise_std)
    print(f"{task.metric}: {acc:.4f} over {len(items)} samples")
    return 0


def _cmd_simulate_masking(args):
    from .masking import (AcousticMaskConfig, DEFAULT_BASELINE_CONFIG,
                          DEFAULT_SPAN_CONFIG, estimate_mask_rate)

    if args.masker == "spectra":
        cfg = DEFAULT_SPAN_CONFIG
    else:
        cfg = DEFAULT_BASELINE_CONFIG
    if args.trigger_prob is not None or args.span is not None:
        cfg = AcousticMaskConfig(
            trigger_prob=(args.trigger_prob if args.trigger_prob is not None
                          else cfg.trigger_prob),
            span_range=(tuple(args.span) if args.span is not None
                        else cfg.span_range))
    mean, stderr = estimate_mask_rate(cfg, args.length, args.trials,
                                      seed=args.seed)
    print(f"masker={args.masker} length={args.length} trials={args.trials}")
    print(f"mean masked fraction: {mean:.6f}")
    print(f"stderr: {stderr:.6f}")
    return 0


def _cmd_export_attention(args):
    from .corpus import build_samples
    from .encoders import export_attention
    from .shards import load_corpus
    from .trainer import model_from_checkpoint

    model, vocab, _ = model_from_checkpoint(args.checkpoint)
    corpus = load_corpus(args.corpus)
    if not 0 <= args.dialog_index < len(corpus.dialogs):
        raise SystemExit(f"dialog index {args.dialog_index} out of range "
                         f"(0..{len(corpus.dialogs) - 1})")
    dialog = corpus.dialogs[args.dialog_index]
    samples = build_samples(dialog, k=args.k)
    wanted = [s for s in samples if s.target_turn_index == args.turn_index]
    if not wanted:
        raise SystemExit(
            f"dialog {dialog.dialog_id} has no sample for turn "
            f"{args.turn_index} (valid: 2..{len(dialog.turns)})")
    fused = model.eval_fused(wanted[0], vocab, capture_attention=True)
    paths = export_attention(fused, args.out)
    meta = json.loads(Path(paths["meta"]).read_text())
    mass = meta["cross_modal_mass"]
    print(f"wrote {len(paths)} files under {args.out}*")
    print(f"cross-modal mass: text->speech {mass['text_to_speech']:.4f}, "
          f"speech->text {mass['speech_to_text']:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stdialog",
        description="Speech-text dialog pre-training at desk scale")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic aligned corpus")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--num-dialogs", type=int, default=8)
    p.add_argument("--out", required=True)
    p.add_argument("--turns-per-dialog", type=int, nargs=2, default=(3, 6))
    p.add_argument("--vocab-size", type=int, default=24)
    p.add_argument("--words-per-turn", type=int, nargs=2, default=(3, 6))
    p.add_argument("--word-duration", type=float, nargs=2, default=(0.15, 0.4))
    p.add_argument("--frame-rate", type=int, default=100)
    p.add_argument("--noise-std", type=float, default=0.05)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("pretrain", help="run joint pre-training")
    p.add_argument("--corpus", required=True, help="manifest.json path")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="TrainConfig JSON file")
    p.add_argument("--vocab", help="vocabulary file (default: from corpus)")
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--peak-lr", type=float)
    p.add_argument("--k", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--no-crs", action="store_true")
    p.add_argument("--corpus-fraction", type=float)
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(func=_cmd_pretrain)

    p = sub.add_parser("finetune", help="fine-tune on a labeled task")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--task-corpus", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--peak-lr", type=float, default=5e-4)
    p.add_argument("--speech-noise-std", type=float, default=0.0)
    p.set_defaults(func=_cmd_finetune)

    p = sub.add_parser("evaluate", help="accuracy of a fine-tuned checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--task-corpus", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--speech-noise-std", type=float, default=0.0)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("simulate-masking",
                       help="Monte Carlo masked-fraction estimate")
    p.add_argument("--length", type=int, default=99)
    p.add_argument("--trials", type=int, default=1_000_000)
    p.add_argument("--masker", choices=("spectra", "baseline"),
                   default="spectra")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trigger-prob", type=float)
    p.add_argument("--span", type=int, nargs=2)
    p.set_defaults(func=_cmd_simulate_masking)

    p = sub.add_parser("export-attention",
                       help="dump fusion attention matrices + metadata")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--dialog-index", type=int, default=0)
    p.add_argument("--turn-index", type=int, default=2)
    p.add_argument("--k", type=int, default=7)
    p.add_argument("--out", required=True, help="output path prefix")
    p.set_defaults(func=_cmd_export_attention)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
