"""Train the tiny structure upsampler on synthetic line pairs and report held-out 2× F1."""
import argparse
import json
import time
from pathlib import Path

import numpy as np

from sketchinpaint.sketch import SSU, SSUConfig
from sketchinpaint.tensor.serialize import save_checkpoint
from sketchinpaint.train import SSUTrainConfig, evaluate_ssu, train_ssu


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--steps", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/ssu")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    model = SSU(SSUConfig.tiny(), np.random.default_rng(args.seed))
    res = train_ssu(model, SSUTrainConfig(steps=args.steps, seed=args.seed))
    res.log.write_csv(out / "curve.csv")
    save_checkpoint(out / "model.ckpt", model.state_dict())
    prf = evaluate_ssu(model, sets=32, size=64, seed=args.seed)
    summary = {"f1": prf.f1, "precision": prf.precision, "recall": prf.recall, "seconds": time.time() - t0}
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary))


if __name__ == "__main__":
    main()
