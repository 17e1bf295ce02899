#!/usr/bin/env python3
"""Fine-tune on the synthetic 4-class cross-modal task, with the
speech-replaced-by-noise control, and report both accuracies.

The label joins a transcript bit and an audio-only bit, so the control's
ceiling is half the classes; the gap measures how much acoustic
information the fusion actually carries.
"""

import argparse
import copy
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from stdialog import presets
from stdialog.finetune import make_cross_modal_task, task_samples
from stdialog.trainer import evaluate_task, finetune, pretrain


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--pretrain-steps", type=int, default=200)
    parser.add_argument("--finetune-steps", type=int, default=300)
    args = parser.parse_args()

    t0 = time.monotonic()
    corpus, pre_cfg = presets.finetune_pretrain_setup()
    pre_cfg.steps = args.pretrain_steps
    pre = pretrain(pre_cfg, corpus)
    print(f"pretrained {pre_cfg.steps} steps "
          f"(joint {pre.metrics[-1]['joint']:.3f}, "
          f"{time.monotonic() - t0:.0f}s)")

    task_cfg = presets.cross_modal_task_config()
    train_d, train_l, task = make_cross_modal_task(task_cfg,
                                                   presets.FINETUNE_TASK_SEED)
    eval_d, eval_l, _ = make_cross_modal_task(task_cfg,
                                              presets.FINETUNE_EVAL_SEED)
    train_items = task_samples(train_d, train_l)
    eval_items = task_samples(eval_d, eval_l)

    accuracies = {}
    for control in (False, True):
        model = copy.deepcopy(pre.model)
        cfg = presets.finetune_config(steps=args.finetune_steps,
                                      control=control)
        result = finetune(cfg, model, pre.vocab, task, list(train_items))
        acc = evaluate_task(model, pre.vocab, result.head, task, eval_items,
                            speech_noise_std=cfg.speech_noise_std)
        name = "text-only control" if control else "full model"
        accuracies[name] = acc
        print(f"{name:18s}: eval accuracy {acc:.3f} "
              f"({time.monotonic() - t0:.0f}s)")
    gap = accuracies["full model"] - accuracies["text-only control"]
    print(f"cross-modal gap: {gap:+.3f}")


if __name__ == "__main__":
    main()
