"""Prediction head, task evaluation, and a synthetic cross-modal task.

The head is two fully-connected layers with a GELU between them, applied
to the fused <s> state.  Regression tasks use squared error and a binary
accuracy thresholded at 0; classification uses cross-entropy and argmax
accuracy.

The synthetic 4-class task encodes one label bit in the transcript (which
marker word opens the current turn) and one bit only in the audio (a tone
signature rendered before the first word, absent from the transcript), so
the text-only ceiling is 2 of 4 classes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import corpus as cp
from .autodiff import (Parameter, Tensor, cross_entropy, gather_rows,
                       gelu, linear, mse, reshape)
from .corpus import Dialog, Sample
from .encoders import FusedRepresentation

REGRESSION = "regression"
CLASSIFICATION = "classification"


@dataclass(frozen=True)
class TaskSpec:
    kind: str
    num_classes: int = 1          # d_o; 1 for regression

    def __post_init__(self):
        if self.kind not in (REGRESSION, CLASSIFICATION):
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.kind == REGRESSION and self.num_classes != 1:
            raise ValueError("regression tasks have a single output")
        if self.kind == CLASSIFICATION and self.num_classes < 2:
            raise ValueError("classification needs >= 2 classes")

    @property
    def metric(self) -> str:
        return ("binary accuracy" if self.kind == REGRESSION
                else "multiclass accuracy")

    @property
    def loss(self) -> str:
        return "squared error" if self.kind == REGRESSION else "cross-entropy"


@dataclass
class PredictionHead:
    w1: Parameter      # [d_h, d_h]
    b1: Parameter      # [d_h]
    w2: Parameter      # [d_h, d_o]
    b2: Parameter      # [d_o]


def init_prediction_head(registry: dict, rng: np.random.Generator, d_h: int,
                         d_o: int, dtype=np.float32) -> PredictionHead:
    def mk(name, array):
        p = Parameter(array, name)
        registry[name] = p
        return p

    return PredictionHead(
        w1=mk("head.w1", (0.02 * rng.standard_normal((d_h, d_h))).astype(dtype)),
        b1=mk("head.b1", np.zeros(d_h, dtype)),
        w2=mk("head.w2", (0.02 * rng.standard_normal((d_h, d_o))).astype(dtype)),
        b2=mk("head.b2", np.zeros(d_o, dtype)))


def head_from_registry(registry: dict) -> PredictionHead:
    try:
        return PredictionHead(registry["head.w1"], registry["head.b1"],
                              registry["head.w2"], registry["head.b2"])
    except KeyError:
        raise KeyError("checkpoint has no fine-tuning head parameters")


def predict(fused: FusedRepresentation, head: PredictionHead) -> Tensor:
    """W2 gelu(W1 h + b1) + b2 on the fused <s> state; output [d_o]."""
    h0 = gather_rows(fused.hidden, np.array([0]))
    hidden = gelu(linear(h0, head.w1, head.b1))
    out = linear(hidden, head.w2, head.b2)
    return reshape(out, (head.b2.data.shape[0],))


def task_loss(output: Tensor, label, task: TaskSpec) -> Tensor:
    if task.kind == REGRESSION:
        target = np.asarray([float(label)], dtype=output.dtype)
        return mse(output, target)
    logits = reshape(output, (1, task.num_classes))
    return cross_entropy(logits, np.asarray([int(label)]))


def evaluate(task: TaskSpec, forward_fn, dataset: list) -> float:
    """Accuracy of ``forward_fn(sample) -> np.ndarray`` over (sample, label)
    pairs.  Regression counts sign agreement around 0; classification
    counts argmax hits."""
    if not dataset:
        raise ValueError("cannot evaluate on an empty dataset")
    hits = 0
    for sample, label in dataset:
        out = np.asarray(forward_fn(sample))
        if task.kind == REGRESSION:
            hits += int((out[0] >= 0.0) == (float(label) >= 0.0))
        else:
            hits += int(int(out.argmax()) == int(label))
    return hits / len(dataset)


# synthetic cross-modal task ---------------------------------------------

@dataclass
class CrossModalTaskConfig:
    num_dialogs: int = 64
    vocab_size: int = 24
    text_marker_ids: tuple = (0, 1)    # word id opening the current turn
    tone_id_offset: int = 1000         # audio-only signature id namespace
    tone_seconds: float = 0.3
    context_words: tuple = (2, 4)
    body_words: tuple = (2, 4)
    frame_rate: int = 100
    noise_std: float = 0.05
    word_duration: tuple = (0.15, 0.35)

    @property
    def task_spec(self) -> TaskSpec:
        return TaskSpec(kind=CLASSIFICATION, num_classes=4)


def make_cross_modal_task(cfg: CrossModalTaskConfig, seed: int) -> tuple:
    """Two-turn dialogs whose label joins a text bit and an audio-only bit.

    Returns (dialogs, labels_by_dialog_id, TaskSpec).  label =
    2*text_bit + speech_bit; text_bit is which marker word opens turn 2,
    speech_bit is whether a tone signature precedes the words in turn 2's
    waveform (never surfaced in the transcript).
    """
    rng = np.random.default_rng((seed, 0xF1E7))
    base = cp.SyntheticConfig(
        num_dialogs=1, turns_per_dialog=(1, 1), vocab_size=cfg.vocab_size,
        words_per_turn=cfg.context_words, frame_rate=cfg.frame_rate,
        noise_std=cfg.noise_std, word_duration=cfg.word_duration)
    dialogs = []
    labels = {}
    tone_samples = int(round(cfg.tone_seconds * cfg.frame_rate))
    for i in range(cfg.num_dialogs):
        text_bit = int(rng.integers(0, 2))
        speech_bit = int(rng.integers(0, 2))
        context = cp.render_turn(1, base, rng)
        body_cfg = replace(base, words_per_turn=cfg.body_words)
        body = cp.render_turn(2, body_cfg, rng)
        marker_id = cfg.text_marker_ids[text_bit]
        marker_dur = int(round(rng.uniform(*cfg.word_duration)
                               * cfg.frame_rate))
        marker_sig = cp.word_signature(marker_id, base.signature_period)
        reps = -(-marker_dur // base.signature_period)
        marker_wave = np.tile(marker_sig, reps)[:marker_dur]
        if cfg.noise_std > 0:
            marker_wave = marker_wave + rng.normal(
                0, cfg.noise_std, marker_wave.shape).astype(np.float32)
        if speech_bit:
            tone_sig = cp.word_signature(cfg.tone_id_offset,
                                         base.signature_period)
            prefix = np.tile(tone_sig,
                             -(-tone_samples // base.signature_period))
            prefix = prefix[:tone_samples].astype(np.float32)
        else:
            prefix = np.zeros(tone_samples, np.float32)
        if cfg.noise_std > 0:
            prefix = prefix + rng.normal(
                0, cfg.noise_std, prefix.shape).astype(np.float32)
        offset = (tone_samples + marker_dur) / cfg.frame_rate
        words = [cp.WordAlignment(base.word_text(marker_id),
                                  tone_samples / cfg.frame_rate,
                                  (tone_samples + marker_dur) / cfg.frame_rate)]
        words += [cp.WordAlignment(w.word, w.start_time + offset,
                                   w.end_time + offset) for w in body.words]
        waveform = np.concatenate(
            [prefix, marker_wave, body.waveform]).astype(np.float32)
        current = cp.Turn(turn_index=2, waveform=waveform, words=words,
                          sample_rate=cfg.frame_rate)
        dialog = cp.Dialog(dialog_id=f"task{seed:03d}_{i:04d}",
                           turns=[context, current])
        dialogs.append(dialog)
        labels[dialog.dialog_id] = 2 * text_bit + speech_bit
    return dialogs, labels, cfg.task_spec


def task_samples(dialogs: list, labels: dict) -> list:
    """(Sample, label) pairs: one per dialog via the standard constructor."""
    out = []
    for d in dialogs:
        for s in cp.build_samples(d, k=1):
            out.append((s, labels[d.dialog_id]))
    return out


def replace_speech_with_noise(items: list, rng: np.random.Generator,
                              std: float = 1.0) -> list:
    """Text-only control: both speech turns become pure Gaussian noise."""
    out = []
    for sample, label in items:
        noisy = replace(
            sample,
            speech_prev=rng.normal(0, std, len(sample.speech_prev))
            .astype(np.float32),
            speech_cur=rng.normal(0, std, len(sample.speech_cur))
            .astype(np.float32))
        out.append((noisy, label))
    return out


def write_labels_manifest(path, labels: dict) -> None:
    """JSON lines of {dialog_id, target_turn_index, label}."""
    with open(path, "w") as fh:
        for dialog_id, label in sorted(labels.items()):
            fh.write(json.dumps({"dialog_id": dialog_id,
                                 "target_turn_index": 2,
                                 "label": int(label)}) + "\n")


def read_labels_manifest(path) -> dict:
    labels = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        labels[(rec["dialog_id"], rec["target_turn_index"])] = rec["label"]
    return labels
