#!/usr/bin/env python3
"""Masked-fraction estimates for both maskers vs the exact recursion.

Usage: python scripts/masking_rate.py [--trials N] [--length L]
"""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from stdialog.masking import (DEFAULT_BASELINE_CONFIG, DEFAULT_SPAN_CONFIG,
                              estimate_mask_rate, expected_mask_rate)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--trials", type=int, default=100_000)
    parser.add_argument("--length", type=int, default=99)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    for name, cfg in (("span", DEFAULT_SPAN_CONFIG),
                      ("baseline", DEFAULT_BASELINE_CONFIG)):
        t0 = time.monotonic()
        mean, stderr = estimate_mask_rate(cfg, args.length, args.trials,
                                          seed=args.seed)
        exact = expected_mask_rate(cfg, args.length)
        print(f"{name:9s} trigger={cfg.trigger_prob} span={cfg.span_range}: "
              f"monte-carlo {mean:.4f} +/- {stderr:.5f}  "
              f"exact {exact:.4f}  ({time.monotonic() - t0:.1f}s)")


if __name__ == "__main__":
    main()
