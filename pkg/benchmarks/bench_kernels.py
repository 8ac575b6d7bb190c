#!/usr/bin/env python3
"""Benchmark the numba kernel build against the pure-numpy fallback.

Times each hot kernel on default experiment shapes (d=100 models, shards
of 400 examples, 10-neighbor pools) plus one end-to-end round loop.

    python benchmarks/bench_kernels.py [--repeat 200]

The same selection is available at runtime through DFLSIM_BACKEND
(auto | numba | numpy).
"""

import argparse
import time

import numpy as np

from dflsim import _kernels_numpy as knp

try:
    from dflsim import _kernels_numba as knb
except ImportError:
    knb = None


def timeit(fn, args, repeat):
    fn(*args)  # warm-up (and JIT compile)
    start = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - start) / repeat


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=200)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    pool = rng.normal(size=(10, 100))       # received models at one client
    ref = rng.normal(size=100)
    shard_x = rng.normal(size=(400, 100))   # default regression shard
    shard_y = rng.normal(size=400)
    w0 = rng.normal(size=100)
    full_batch = np.tile(np.arange(400, dtype=np.int64), (1, 1))
    mini_batches = rng.integers(0, 400, size=(20, 32)).astype(np.int64)
    cls_x = rng.normal(size=(320, 20))
    cls_y = rng.integers(0, 10, size=320).astype(np.int64)
    cls_w = rng.normal(scale=0.1, size=20 * 10 + 10)
    cls_batches = rng.integers(0, 320, size=(5, 32)).astype(np.int64)

    cases = [
        ("pairwise_sq_dists(10x100)", "pairwise_sq_dists", (pool,)),
        ("dists_to_ref(10x100)", "dists_to_ref", (pool, ref)),
        ("krum_scores(10x100, k=6)", "krum_scores", (pool, 6)),
        ("trimmed_mean(10x100, trim=2)", "trimmed_mean", (pool, 2)),
        ("coord_median(10x100)", "coord_median", (pool,)),
        ("linreg_sgd full batch x1", "linreg_sgd", (shard_x, shard_y, w0, 6e-4, full_batch)),
        ("linreg_sgd 20x32 mini", "linreg_sgd", (shard_x, shard_y, w0, 6e-4, mini_batches)),
        ("logreg_sgd 5x32 mini", "logreg_sgd", (cls_x, cls_y, cls_w, 3e-3, cls_batches, 10)),
    ]

    header = f"{'kernel':32s} {'numpy':>12s} {'numba':>12s} {'speedup':>8s}"
    print(header)
    print("-" * len(header))
    for label, name, call_args in cases:
        t_np = timeit(getattr(knp, name), call_args, args.repeat)
        if knb is None:
            print(f"{label:32s} {t_np * 1e6:10.1f}us {'n/a':>12s} {'':>8s}")
            continue
        t_nb = timeit(getattr(knb, name), call_args, args.repeat)
        print(f"{label:32s} {t_np * 1e6:10.1f}us {t_nb * 1e6:10.1f}us {t_np / t_nb:7.1f}x")

    # end-to-end: one default experiment under each backend
    from dflsim.config import ExperimentConfig

    import dflsim.aggregation as aggregation
    import dflsim.attacks as attacks
    import dflsim.backend as backend
    import dflsim.protocol as protocol

    bound = (backend, aggregation, attacks, protocol)  # modules holding a `kernels` name

    def one_run(kernels_module):
        saved = backend.kernels
        for mod in bound:
            mod.kernels = kernels_module
        try:
            cfg = ExperimentConfig()
            cfg.rounds = 100
            cfg.aggregator.rule = "balance"
            cfg.attack.kind = "gaussian"
            start = time.perf_counter()
            protocol.run_experiment(cfg)
            return time.perf_counter() - start
        finally:
            for mod in bound:
                mod.kernels = saved

    t_np = one_run(knp)
    line = f"{'100-round experiment':32s} {t_np * 1e3:10.1f}ms"
    if knb is not None:
        t_nb = one_run(knb)
        line += f" {t_nb * 1e3:10.1f}ms {t_np / t_nb:7.1f}x"
    print(line)


if __name__ == "__main__":
    main()
