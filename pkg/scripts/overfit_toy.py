"""Overfit the toy model on the fixed 8-scene synthetic set and trace pixel mIoU.

    python scripts/overfit_toy.py [--steps 300] [--every 25] [--out runs/overfit] [KEY=VALUE ...]

Extra KEY=VALUE arguments are config overrides (same syntax as ``--set``).
"""
import argparse
import json
import time
from pathlib import Path

import numpy as np

from rangesam.config import RunConfig, apply_overrides
from rangesam.engine import Trainer, evaluate_pixels
from rangesam.kitti import CLASS_NAMES


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=300)
    ap.add_argument("--every", type=int, default=25)
    ap.add_argument("--target", type=float, default=0.90)
    ap.add_argument("--out", default="runs/overfit")
    ap.add_argument("overrides", nargs="*")
    args = ap.parse_args()

    cfg = apply_overrides(RunConfig.toy(synthetic=True), args.overrides)
    out = Path(args.out)
    tr = Trainer(cfg, out_dir=out)
    t0 = time.perf_counter()
    trace = []

    def probe(t, rec):
        if t.step % args.every:
            return
        res = evaluate_pixels(t.model, t.ds, t.cfg).miou()
        present = {CLASS_NAMES[c]: round(float(v), 3) for c, v in enumerate(res.per_class) if not np.isnan(v)}
        row = {"step": t.step, "seconds": round(time.perf_counter() - t0, 1), "loss": rec["total"],
               "miou": round(res.mean, 4), "per_class": present}
        trace.append(row)
        print(json.dumps(row), flush=True)

    tr.fit(max_steps=args.steps, callback=probe)
    hit = next((r for r in trace if r["miou"] >= args.target), None)
    print(f"target {args.target}: " + (f"reached at step {hit['step']} ({hit['seconds']}s)" if hit else "not reached"))
    (out / "trace.json").write_text(json.dumps(trace, indent=1))


if __name__ == "__main__":
    main()
