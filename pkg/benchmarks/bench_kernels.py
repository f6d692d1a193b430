"""Numpy vs numba timings for the hot kernels and one full training step.

    python benchmarks/bench_kernels.py [--repeats 20]

Kernel rows call both variants directly in one process. The training-step
row runs a fresh interpreter per backend so ``CMTS_NUMBA`` decides which
variant the package binds at import time.
"""
import argparse
import os
import subprocess
import sys
import time

import numpy as np

from cmts import kernels

STEP_SNIPPET = r"""
import time, numpy as np
from cmts import model as cm, scenario_data as sd, training as tr, numeric as nm
safe = sd.generate_safe_corpus(16, seed=0)
col = sd.generate_collision_corpus(safe, seed=0)
mc = cm.ModelConfig()
store = cm.init_params(mc, 0)
bs, bc = tr.make_batch(safe, mc), tr.make_batch(col, mc)
def step(k):
    tr.loss_and_grad(bs, bc, store, tr.LossWeights(), np.random.default_rng(k), mc)
    nm.optimizer_step(store)
step(0)  # compile / warm caches
t = time.perf_counter()
for k in range(REPEATS):
    step(k + 1)
print((time.perf_counter() - t) / REPEATS)
"""


def best_of(fn, repeats):
    fn()  # warm-up (includes numba compilation)
    times = []
    for _ in range(repeats):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def kernel_cases(rng):
    T, B, I, H, O = 50, 16, 4, 64, 4
    W, Uzr, Uh = rng.normal(size=(3 * H, I)) * 0.1, rng.normal(size=(2 * H, H)) * 0.1, rng.normal(size=(H, H)) * 0.1
    b = rng.normal(size=3 * H) * 0.1
    WT, UzrT, UhT = np.ascontiguousarray(W.T), np.ascontiguousarray(Uzr.T), np.ascontiguousarray(Uh.T)
    X, h0 = rng.normal(size=(T, B, I)), rng.normal(size=(B, H))
    Hs, Z, R, HH = kernels._gru_seq_forward_py(X, h0, WT, b, UzrT, UhT)
    dHs = rng.normal(size=Hs.shape)
    Wo, bo = rng.normal(size=(O, H)) * 0.1, np.zeros(O)
    WoT = np.ascontiguousarray(Wo.T)
    roll = kernels._gru_rollout_forward_py(X[0], h0, T, WT, b, UzrT, UhT, WoT, bo)
    dY = rng.normal(size=roll[-1].shape)
    maps = (rng.random((B, 1, 32, 32)) < 0.5).astype(np.float64)
    Wc, bc = rng.normal(size=(8, 1, 3, 3)), np.zeros(8)
    dconv = rng.normal(size=(B, 8, 16, 16))
    return {
        "gru_seq_forward": lambda k: k(X, h0, WT, b, UzrT, UhT),
        "gru_seq_backward": lambda k: k(Hs, Z, R, HH, dHs, W, Uzr, Uh),
        "gru_rollout_forward": lambda k: k(X[0], h0, T, WT, b, UzrT, UhT, WoT, bo),
        "gru_rollout_backward": lambda k: k(roll[1], roll[2], roll[3], roll[4], dY, W, Uzr, Uh, Wo),
        "conv_forward": lambda k: k(maps, Wc, bc),
        "conv_backward": lambda k: k(maps, Wc, dconv),
    }


def train_step_seconds(numba_on, repeats):
    env = dict(os.environ, CMTS_NUMBA="1" if numba_on else "0")
    code = STEP_SNIPPET.replace("REPEATS", str(repeats))
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--skip-step", action="store_true", help="kernel rows only")
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    print(f"{'kernel (B=16, T=50, H=64)':<28}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for name, call in kernel_cases(rng).items():
        t_py = best_of(lambda: call(getattr(kernels, f"_{name}_py")), args.repeats)
        t_nb = best_of(lambda: call(getattr(kernels, f"_{name}_nb")), args.repeats)
        print(f"{name:<28}{1e3 * t_py:>12.3f}{1e3 * t_nb:>12.3f}{t_py / t_nb:>9.1f}x")
    if not args.skip_step:
        t_py = train_step_seconds(False, args.repeats)
        t_nb = train_step_seconds(True, args.repeats)
        print(f"{'full training step':<28}{1e3 * t_py:>12.3f}{1e3 * t_nb:>12.3f}{t_py / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
