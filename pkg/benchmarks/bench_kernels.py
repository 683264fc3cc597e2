"""Compare the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--end-to-end]

``--end-to-end`` also times one desk-scale training run in a fresh
interpreter with and without ``METATRUST_DISABLE_NUMBA=1``.
"""
from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from metatrust import _accel, kernels
from metatrust.learner import ParamLayout


def cases(rng):
    x64 = rng.normal(size=64)
    n = 512
    r, v, d = rng.normal(size=n), rng.normal(size=n + 1), (rng.random(n) < 0.01).astype(float)
    layout = ParamLayout(2, (32, 32), 1)
    flat, obs = layout.init(rng), rng.normal(size=2)
    return [
        ("population_variance[64]", kernels.population_variance_jit, kernels.population_variance_np, (x64,), 20000),
        ("gae[512]", kernels.gae_jit, kernels.gae_np, (r, v, d, 0.99, 0.95), 2000),
        ("td_weights[512]", kernels.td_weights_jit, kernels.td_weights_np, (r, 1.0), 5000),
        ("forward_single[2-32-32-1]", kernels.forward_single_jit, kernels.forward_single_np,
         (flat, layout.sizes, obs), 20000),
        ("valley_step", kernels.valley_step_jit, kernels._valley_step, (0.5, 0.3), 100000),
        ("pendulum_step", kernels.pendulum_step_jit, kernels._pendulum_step, (0.5, 0.3, 1.0), 100000),
    ]


def end_to_end():
    code = (
        "import time; from metatrust.harness import load_config, run_single;"
        "cfg = load_config(profile_name='desk', overrides={'seeds': 1});"
        "run_single(cfg, cfg.variants[0], 0, write=False);"
        "t = time.perf_counter(); run_single(cfg, cfg.variants[0], 0, write=False);"
        "print(time.perf_counter() - t)"
    )
    out = {}
    for label, flag in (("numba", "0"), ("numpy", "1")):
        env = {**os.environ, "METATRUST_DISABLE_NUMBA": flag}
        res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        out[label] = float(res.stdout.strip().splitlines()[-1])
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--end-to-end", action="store_true")
    args = ap.parse_args(argv)
    if not _accel.NUMBA_AVAILABLE:
        print("numba is not installed; nothing to compare")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':<28}{'numba us':>12}{'numpy us':>12}{'speedup':>10}")
    for name, fast, slow, call_args, number in cases(rng):
        fast(*call_args)  # compile outside the timed region
        tf = min(timeit.repeat(lambda: fast(*call_args), number=number, repeat=args.repeat)) / number
        ts = min(timeit.repeat(lambda: slow(*call_args), number=number, repeat=args.repeat)) / number
        print(f"{name:<28}{tf * 1e6:>12.2f}{ts * 1e6:>12.2f}{ts / tf:>9.1f}x")
    if args.end_to_end:
        t = end_to_end()
        print(f"\ndesk run, one seed: numba {t['numba']:.2f}s, numpy {t['numpy']:.2f}s "
              f"({t['numpy'] / t['numba']:.1f}x)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
