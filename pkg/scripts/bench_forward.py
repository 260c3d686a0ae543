"""Time one full-size forward pass (64x2048, batch 1) and report peak memory."""
import resource
import sys
import time

import numpy as np

from rangesam.autodiff import Tensor, no_grad
from rangesam.model import ModelConfig, RangeSAM


def main(grad=False):
    model = RangeSAM(ModelConfig(), seed=0).eval()
    x = Tensor(np.random.default_rng(0).normal(size=(1, 6, 64, 2048)).astype(np.float32))
    t0 = time.perf_counter()
    if grad:
        main_out, aux = model(x)
    else:
        with no_grad():
            main_out, aux = model(x)
    dt = time.perf_counter() - t0
    peak = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024  # kB -> MB on linux
    print(f"main {main_out.shape}, aux {[a.shape for a in aux]}")
    print(f"forward {dt:.1f}s, peak rss {peak:.0f} MB")


if __name__ == "__main__":
    main(grad="--grad" in sys.argv)
