"""Training loops, checkpointing, and metrics logging.

Determinism contract: parameter init draws from stream (seed, 0) and every
training step draws batch selection, corruption, and masking from its own
stream (seed, 1, step).  Per-step randomness is therefore stateless, so a
checkpoint (parameters + optimizer moments + step counter) resumes the
exact uninterrupted trajectory.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from functools import reduce
from pathlib import Path

import numpy as np

from .autodiff import add, scale
from .finetune import (PredictionHead, TaskSpec, evaluate,
                       head_from_registry, init_prediction_head, predict,
                       replace_speech_with_noise, task_loss)
from .masking import AcousticMaskConfig
from .model import ModelConfig, PreparedSample, SpeechTextModel, \
    prepare_sample
from .objectives import LossWeights, make_crs_sample
from .optim import AdamW, AdamWConfig, lr_schedule
from .shards import Corpus
from .text import Vocab, WhitespaceTokenizer

CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    seed: int = 0
    steps: int = 300
    batch_size: int = 8
    peak_lr: float = 1e-3
    warmup_frac: float = 0.01
    schedule: str = "linear"
    weight_decay: float = 0.01
    clip_norm: float = 1.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    k: int = 7
    alpha: float = 1.0
    crs_enabled: bool = True
    crs_class_probs: tuple = (0.25, 0.25, 0.25, 0.25)
    text_mask_prob: float = 0.15
    text_corruption: tuple = (0.8, 0.1, 0.1)
    acoustic_trigger_prob: float = 0.15
    acoustic_span: tuple = (2, 4)     # desk turns hold ~5-20 frames
    tpp_on_masked: bool = True
    corpus_fraction: float = 1.0
    checkpoint_every: int = 0         # 0 = final checkpoint only
    model: ModelConfig = field(default_factory=ModelConfig)

    def acoustic_config(self) -> AcousticMaskConfig:
        return AcousticMaskConfig(trigger_prob=self.acoustic_trigger_prob,
                                  span_range=tuple(self.acoustic_span))

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in (
            "seed", "steps", "batch_size", "peak_lr", "warmup_frac",
            "schedule", "weight_decay", "clip_norm", "adam_beta1",
            "adam_beta2", "k", "alpha", "crs_enabled", "crs_class_probs",
            "text_mask_prob", "text_corruption", "acoustic_trigger_prob",
            "acoustic_span", "tpp_on_masked", "corpus_fraction",
            "checkpoint_every")}
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        model = ModelConfig.from_dict(d.pop("model"))
        for key in ("crs_class_probs", "text_corruption", "acoustic_span"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(model=model, **d)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))


class MetricsLog:
    """Append-only per-step records with monotone step numbers."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self.rows: list = []
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")

    def append(self, record: dict) -> None:
        if self.rows and record["step"] <= self.rows[-1]["step"]:
            raise ValueError(
                f"metrics step {record['step']} not after "
                f"{self.rows[-1]['step']}")
        self.rows.append(record)
        if self.path:
            with open(self.path, "a") as fh:
                fh.write(json.dumps(record) + "\n")

    @staticmethod
    def read(path) -> list:
        return [json.loads(line)
                for line in Path(path).read_text().splitlines() if line]


def build_vocab(corpus: Corpus, tokenizer=None) -> Vocab:
    tokenizer = tokenizer or WhitespaceTokenizer()
    return Vocab.from_tokens(tokenizer.vocabulary_tokens(
        corpus.vocabulary_words()))


def _mean_batch_loss(tensors: list):
    total = reduce(add, tensors)
    return scale(total, 1.0 / len(tensors))


def _batch_indices(rng: np.random.Generator, n_samples: int,
                   batch_size: int) -> np.ndarray:
    """Without replacement; a batch larger than the pool takes whole
    permutations, i.e. several differently-masked passes per sample."""
    if batch_size <= n_samples:
        return rng.choice(n_samples, size=batch_size, replace=False)
    parts = []
    need = batch_size
    while need > 0:
        perm = rng.permutation(n_samples)
        parts.append(perm[:need])
        need -= len(parts[-1])
    return np.concatenate(parts)


def _component_value(loss) -> float:
    return float(loss.data) if loss is not None else 0.0


@dataclass
class TrainResult:
    model: SpeechTextModel
    vocab: Vocab
    metrics: list
    checkpoint_path: Path | None = None
    head: PredictionHead | None = None
    task: TaskSpec | None = None


def pretrain(cfg: TrainConfig, corpus: Corpus, out_dir=None,
             resume_from=None, vocab: Vocab | None = None) -> TrainResult:
    """Joint pre-training over all samples of the corpus."""
    out_dir = Path(out_dir) if out_dir else None
    if vocab is None:
        vocab = build_vocab(corpus)
    model_cfg = replace(cfg.model, vocab_size=vocab.size)
    model = SpeechTextModel(model_cfg, seed=cfg.seed)
    opt = AdamW(model.parameters(),
                AdamWConfig(beta1=cfg.adam_beta1, beta2=cfg.adam_beta2,
                            weight_decay=cfg.weight_decay,
                            clip_norm=cfg.clip_norm))
    start_step = 0
    if resume_from is not None:
        state = load_checkpoint(resume_from)
        if state["vocab"].id_to_token != vocab.id_to_token:
            raise ValueError("checkpoint vocabulary does not match corpus")
        _restore_params(model, state)
        opt.load_state_dict(state["optimizer"])
        start_step = state["step"]
    samples = corpus.all_samples(k=cfg.k)
    if cfg.corpus_fraction < 1.0:
        keep = max(1, int(len(samples) * cfg.corpus_fraction))
        samples = samples[:keep]
    if not samples:
        raise ValueError("corpus yields no samples (all dialogs too short?)")
    weights = LossWeights(alpha=cfg.alpha)
    acfg = cfg.acoustic_config()
    metrics = MetricsLog(out_dir / "metrics.jsonl" if out_dir else None)
    for step in range(start_step + 1, cfg.steps + 1):
        rng = np.random.default_rng((cfg.seed, 1, step))
        idx = _batch_indices(rng, len(samples), cfg.batch_size)
        model.zero_grad()
        sums = {"tpp": 0.0, "crs": 0.0, "cmlm": 0.0, "cmam": 0.0}
        joints = []
        t0 = time.monotonic()
        for i in idx:
            sample = samples[int(i)]
            label = None
            if cfg.crs_enabled:
                sample, label = make_crs_sample(sample, corpus.dialogs, rng,
                                                cfg.crs_class_probs)
            prepared = prepare_sample(
                sample, vocab, model.config, rng=rng, crs_label=label,
                text_mask_prob=cfg.text_mask_prob,
                text_corruption=cfg.text_corruption, acoustic_config=acfg)
            losses = model.compute_losses(prepared, weights,
                                          crs_enabled=cfg.crs_enabled,
                                          tpp_on_masked=cfg.tpp_on_masked)
            joints.append(losses["joint"])
            for key in sums:
                sums[key] += _component_value(losses[key])
        batch_loss = _mean_batch_loss(joints)
        batch_loss.backward()
        lr = lr_schedule(step, cfg.steps, cfg.peak_lr, cfg.warmup_frac,
                         cfg.schedule)
        opt.step(lr)
        n = len(idx)
        metrics.append({
            "step": step, "joint": float(batch_loss.data),
            "tpp": sums["tpp"] / n, "crs": sums["crs"] / n,
            "cmlm": sums["cmlm"] / n, "cmam": sums["cmam"] / n,
            "lr": lr, "wall_time": time.monotonic() - t0})
        if out_dir and cfg.checkpoint_every and \
                step % cfg.checkpoint_every == 0 and step < cfg.steps:
            save_checkpoint(out_dir / f"checkpoint-{step:06d}.npz", model,
                            vocab, opt, step, cfg)
    path = None
    if out_dir:
        path = out_dir / "checkpoint-final.npz"
        save_checkpoint(path, model, vocab, opt, cfg.steps, cfg)
    return TrainResult(model=model, vocab=vocab, metrics=metrics.rows,
                       checkpoint_path=path)


@dataclass
class FinetuneConfig:
    seed: int = 0
    steps: int = 300
    batch_size: int = 8
    peak_lr: float = 5e-4
    warmup_frac: float = 0.1
    schedule: str = "cosine"
    weight_decay: float = 0.01
    clip_norm: float = 1.0
    speech_noise_std: float = 0.0   # > 0 runs the text-only control


def finetune(cfg: FinetuneConfig, model: SpeechTextModel, vocab: Vocab,
             task: TaskSpec, train_items: list, out_dir=None) -> TrainResult:
    """Supervised fine-tuning of the whole model plus a fresh head."""
    out_dir = Path(out_dir) if out_dir else None
    rng_init = np.random.default_rng((cfg.seed, 2))
    if "head.w1" in model.params:
        head = head_from_registry(model.params)
    else:
        head = init_prediction_head(model.params, rng_init, model.config.d_h,
                                    task.num_classes, model.config.np_dtype)
    if cfg.speech_noise_std > 0:
        train_items = replace_speech_with_noise(
            train_items, np.random.default_rng((cfg.seed, 3)),
            cfg.speech_noise_std)
    opt = AdamW(model.parameters(),
                AdamWConfig(weight_decay=cfg.weight_decay,
                            clip_norm=cfg.clip_norm))
    metrics = MetricsLog(out_dir / "finetune-metrics.jsonl" if out_dir
                         else None)
    for step in range(1, cfg.steps + 1):
        rng = np.random.default_rng((cfg.seed, 4, step))
        idx = rng.choice(len(train_items),
                         size=min(cfg.batch_size, len(train_items)),
                         replace=False)
        model.zero_grad()
        losses = []
        t0 = time.monotonic()
        for i in idx:
            sample, label = train_items[int(i)]
            prepared = prepare_sample(sample, vocab, model.config, train=False)
            fused = model.forward(prepared).fused
            losses.append(task_loss(predict(fused, head), label, task))
        batch_loss = _mean_batch_loss(losses)
        batch_loss.backward()
        lr = lr_schedule(step, cfg.steps, cfg.peak_lr, cfg.warmup_frac,
                         cfg.schedule)
        opt.step(lr)
        metrics.append({"step": step, "loss": float(batch_loss.data),
                        "lr": lr, "wall_time": time.monotonic() - t0})
    path = None
    if out_dir:
        path = out_dir / "checkpoint-finetuned.npz"
        save_checkpoint(path, model, vocab, opt, cfg.steps, None,
                        extra_meta={"task": {"kind": task.kind,
                                             "num_classes": task.num_classes}})
    return TrainResult(model=model, vocab=vocab, metrics=metrics.rows,
                       checkpoint_path=path, head=head, task=task)


def evaluate_task(model: SpeechTextModel, vocab: Vocab, head: PredictionHead,
                  task: TaskSpec, items: list,
                  speech_noise_std: float = 0.0, noise_seed: int = 99) -> float:
    if speech_noise_std > 0:
        items = replace_speech_with_noise(
            items, np.random.default_rng((noise_seed, 5)), speech_noise_std)

    def forward_fn(sample):
        fused = model.eval_fused(sample, vocab)
        return predict(fused, head).data

    return evaluate(task, forward_fn, items)


# checkpointing ------------------------------------------------------------

def save_checkpoint(path, model: SpeechTextModel, vocab: Vocab, opt: AdamW,
                    step: int, train_cfg: TrainConfig | None,
                    extra_meta: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {}
    for name, p in model.params.items():
        arrays[f"param/{name}"] = p.data
    for name, m in opt.m.items():
        arrays[f"opt_m/{name}"] = m
    for name, v in opt.v.items():
        arrays[f"opt_v/{name}"] = v
    meta = {
        "version": CHECKPOINT_VERSION,
        "step": int(step),
        "opt_t": int(opt.t),
        "model_config": model.config.to_dict(),
        "train_config": train_cfg.to_dict() if train_cfg else None,
        "vocab": vocab.id_to_token,
    }
    if extra_meta:
        meta.update(extra_meta)
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    np.savez(path, **arrays)


def load_checkpoint(path) -> dict:
    path = Path(path)
    with np.load(path) as blob:
        meta = json.loads(bytes(blob["meta"].tobytes()).decode())
        if meta["version"] != CHECKPOINT_VERSION:
            raise ValueError(
                f"checkpoint version {meta['version']} not supported")
        params = {k[len("param/"):]: blob[k] for k in blob.files
                  if k.startswith("param/")}
        opt_m = {k[len("opt_m/"):]: blob[k] for k in blob.files
                 if k.startswith("opt_m/")}
        opt_v = {k[len("opt_v/"):]: blob[k] for k in blob.files
                 if k.startswith("opt_v/")}
    return {
        "meta": meta,
        "step": meta["step"],
        "model_config": ModelConfig.from_dict(meta["model_config"]),
        "train_config": (TrainConfig.from_dict(meta["train_config"])
                         if meta["train_config"] else None),
        "vocab": Vocab(meta["vocab"]),
        "params": params,
        "optimizer": {"t": meta["opt_t"], "m": opt_m, "v": opt_v},
        "task": meta.get("task"),
    }


def _restore_params(model: SpeechTextModel, state: dict) -> None:
    saved = state["params"]
    for name, p in model.params.items():
        if name not in saved:
            raise ValueError(f"checkpoint is missing parameter {name}")
        if saved[name].shape != p.data.shape:
            raise ValueError(
                f"checkpoint parameter {name} has shape {saved[name].shape}, "
                f"model expects {p.data.shape}")
        p.data = saved[name].copy()
    for name in saved:
        if name not in model.params:
            model._register(name, saved[name].copy())


def model_from_checkpoint(path) -> tuple:
    """(model, vocab, state) with parameters restored, heads included."""
    state = load_checkpoint(path)
    model = SpeechTextModel(state["model_config"], seed=0)
    _restore_params(model, state)
    return model, state["vocab"], state
