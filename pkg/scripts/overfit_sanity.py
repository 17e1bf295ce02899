#!/usr/bin/env python3
"""32-sample overfit run: loss trajectory, alignment MAE, selection accuracy.

Usage: python scripts/overfit_sanity.py [--steps 500]
"""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

import numpy as np

from stdialog import presets
from stdialog.objectives import make_crs_sample
from stdialog.text import tokenize_sample
from stdialog.trainer import pretrain


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--steps", type=int, default=500)
    parser.add_argument("--out", help="optional metrics/checkpoint directory")
    args = parser.parse_args()

    corpus = presets.overfit_corpus()
    cfg = presets.overfit_train_config(steps=args.steps)
    t0 = time.monotonic()
    result = pretrain(cfg, corpus, out_dir=args.out)
    elapsed = time.monotonic() - t0
    m = result.metrics
    for step in (1, 10, 50, 100, 250, args.steps):
        if step <= len(m):
            r = m[step - 1]
            print(f"step {r['step']:4d}: joint {r['joint']:.4f}  "
                  f"tpp {r['tpp']:.5f} crs {r['crs']:.4f} "
                  f"cmlm {r['cmlm']:.4f} cmam {r['cmam']:.4f}")
    reduction = 1 - m[-1]["joint"] / m[9]["joint"]
    print(f"joint-loss reduction from step 10: {reduction:.2%}")

    model, vocab = result.model, result.vocab
    samples = corpus.all_samples(k=cfg.k)
    errs = []
    for s in samples:
        fused = model.eval_fused(s, vocab)
        tok = tokenize_sample(s, vocab)
        errs.append(model.tpp_absolute_errors(fused, tok.word_boundaries))
    print(f"alignment MAE (normalized times): "
          f"{float(np.concatenate(errs).mean()):.4f}")

    rng = np.random.default_rng(123)
    trials = 400
    hits = 0
    for _ in range(trials):
        s = samples[int(rng.integers(len(samples)))]
        corrupted, label = make_crs_sample(s, corpus.dialogs, rng)
        hits += int(model.crs_predict(model.eval_fused(corrupted, vocab))
                    == label)
    print(f"response-selection accuracy: {hits / trials:.3f}")
    print(f"wall time: {elapsed:.0f}s")


if __name__ == "__main__":
    main()
