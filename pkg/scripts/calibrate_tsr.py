"""Pick the line-map binarization threshold for toy structure-transformer training.

Trains the tiny model once per calibration seed, scores masked-region line F1 on a
calibration split at each candidate threshold, and selects the threshold with the
best mean F1. Calibration seeds and the calibration split are disjoint from the
seed and held-out scenes used by the acceptance check."""
import argparse
import json
import time

import numpy as np

from sketchinpaint.train import TSRTrainConfig, evaluate_tsr, smoothed, train_tsr_toy
from sketchinpaint.tsr import TSR, TSRConfig

CALIBRATION_SPLIT = 1000  # evaluate_tsr seed offset; the acceptance check scores split 0
THRESHOLDS = (0.02, 0.03, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.4, 0.5)


def run(seed: int, steps: int, lr: float, batch: int, channels) -> dict:
    t0 = time.time()
    model = TSR(TSRConfig.tiny(channels=tuple(channels)), np.random.default_rng(seed))
    res = train_tsr_toy(model, TSRTrainConfig(steps=steps, lr=lr, batch=batch, seed=seed))
    s = smoothed(res.losses, 50)
    window = min(50, len(s))
    f1 = {th: evaluate_tsr(model, scenes=64, seed=CALIBRATION_SPLIT + seed, threshold=th)["line"].f1
          for th in THRESHOLDS}
    return {"seed": seed, "ratio": float(s[-1] / s[window - 1]), "f1": f1, "seconds": time.time() - t0}


def markdown(rows: list[dict], best: float, args) -> str:
    head = "| seed | BCE ratio | " + " | ".join(f"F1@{th}" for th in THRESHOLDS) + " | seconds |"
    lines = [
        f"Settings: {args.steps} steps, lr {args.lr}, batch {args.batch}, channels {tuple(args.channels)}.",
        "",
        head,
        "|" + "---|" * (len(THRESHOLDS) + 3),
    ]
    for r in rows:
        cells = " | ".join(f"{r['f1'][th]:.3f}" for th in THRESHOLDS)
        lines.append(f"| {r['seed']} | {r['ratio']:.3f} | {cells} | {r['seconds']:.0f} |")
    mean = " | ".join(f"{np.mean([r['f1'][th] for r in rows]):.3f}" for th in THRESHOLDS)
    lines.append(f"| mean | {np.mean([r['ratio'] for r in rows]):.3f} | {mean} | |")
    lines += ["", f"Selected threshold: {best}"]
    return "\n".join(lines) + "\n"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3])
    ap.add_argument("--steps", type=int, default=500)
    ap.add_argument("--lr", type=float, default=TSRTrainConfig().lr)
    ap.add_argument("--batch", type=int, default=TSRTrainConfig().batch)
    ap.add_argument("--channels", type=int, nargs=4, default=list(TSRConfig.tiny().channels))
    ap.add_argument("--out", default=None, help="write the markdown table here")
    args = ap.parse_args()
    rows = []
    for seed in args.seeds:
        rows.append(run(seed, args.steps, args.lr, args.batch, args.channels))
        print(json.dumps(rows[-1]), flush=True)
    best = max(THRESHOLDS, key=lambda th: np.mean([r["f1"][th] for r in rows]))
    table = markdown(rows, best, args)
    print(table)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(table)


if __name__ == "__main__":
    main()
