"""Overfit a small synthetic corpus and report train-set metric gains.

    python scripts/overfit.py --task denoise --epochs 500
    python scripts/overfit.py --task restore --channels 64
"""

import argparse
import json
import logging
import time

import numpy as np

from wavecrn.experiments import OverfitSetup, run_overfit


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--task", choices=("denoise", "restore"), default="denoise")
    ap.add_argument("--epochs", type=int, default=500)
    ap.add_argument("--channels", type=int, default=OverfitSetup.channels)
    ap.add_argument("--kernel", type=int, default=OverfitSetup.kernel)
    ap.add_argument("--depth", type=int, default=OverfitSetup.depth)
    ap.add_argument("--lr", type=float, default=OverfitSetup.lr)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--every", type=int, default=50, help="print progress every N epochs")
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)

    setup = OverfitSetup(
        task=args.task, epochs=args.epochs, channels=args.channels, kernel=args.kernel,
        depth=args.depth, lr=args.lr, seed=args.seed,
    )
    t0 = time.time()
    res = run_overfit(setup, progress_every=args.every)
    out = {k: v for k, v in res.items() if k != "losses"}
    out["first_l1"], out["final_l1"] = res["losses"][0], res["losses"][-1]
    out["seconds"] = round(time.time() - t0, 1)
    print(json.dumps(out, indent=2, default=lambda x: float(np.asarray(x))))


if __name__ == "__main__":
    main()
