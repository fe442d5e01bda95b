"""Time the hot kernels under numba and under the plain numpy fallback.

The backend is fixed at import time, so each backend runs in its own
subprocess with SPARSE_OT_NUMBA set accordingly.  Usage::

    python benchmarks/bench_kernels.py            # both backends, side by side
    python benchmarks/bench_kernels.py --quick    # smaller sizes
"""
import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def best_of(fn, repeat):
    fn()  # warm-up, also triggers jit compilation
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def cases(quick):
    from sparse_ot import icnn, kernels, trainer

    rng = np.random.default_rng(0)
    n = 128 if quick else 256
    X, Y = rng.normal(size=(n, 10)), rng.normal(size=(n, 10))
    C = kernels.sq_euclidean_cost(X, Y)
    la = np.full(n, -np.log(n))
    z = np.zeros(n)
    dirs = rng.normal(size=(128, 10))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)

    p = 50_000
    theta, grad = rng.normal(size=p), rng.normal(size=p)
    m, v = np.zeros(p), np.zeros(p)
    mask = rng.random(p) < 0.5

    d = 50
    net = icnn.init(d, [64, 64, 1], seed=0, quadratic=1.0)
    batch = rng.normal(size=(128, d))

    cfg = trainer.TrainConfig(widths=[64, 64, 1], inner_steps=5, batch_size=128)
    pair = trainer.init_pair(d, cfg)
    P, Q = trainer.as_sampler(rng.normal(size=(1000, d)) + 1.0), trainer.as_sampler(rng.normal(size=(1000, d)))

    return {
        "sq_euclidean_cost": lambda: kernels.sq_euclidean_cost(X, Y),
        "sinkhorn_log (200 iters)": lambda: kernels.sinkhorn_log(C, la, la, 0.1, 200, 0.0, z, z),
        "hungarian": lambda: kernels.hungarian(C),
        "sliced_sq_w2": lambda: kernels.sliced_sq_w2(X, Y, dirs),
        "adam_update": lambda: kernels.adam_update(theta, grad, m, v, 1, 1e-4, 0.5, 0.9, 1e-8, mask),
        "icnn input grad": lambda: icnn.input_grad(net, batch),
        "train_step (d=50)": lambda: trainer.train_step(pair, P, Q, cfg, 0.1),
    }


def worker(quick, repeat):
    from sparse_ot._accel import backend_name

    out = {"backend": backend_name(), "times": {}}
    for name, fn in cases(quick).items():
        out["times"][name] = best_of(fn, repeat)
    print(json.dumps(out))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--quick", action="store_true")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.worker:
        worker(args.quick, args.repeat)
        return

    results = {}
    for flag in ("1", "0"):
        env = dict(os.environ, SPARSE_OT_NUMBA=flag)
        cmd = [sys.executable, __file__, "--worker", "--repeat", str(args.repeat)] + (["--quick"] if args.quick else [])
        proc = subprocess.run(cmd, env=env, capture_output=True, text=True, check=True)
        res = json.loads(proc.stdout.strip().splitlines()[-1])
        results[res["backend"]] = res["times"]

    nb, npy = results.get("numba", {}), results.get("numpy", {})
    print(f"{'kernel':28s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for name in npy:
        a, b = nb.get(name, float("nan")), npy[name]
        print(f"{name:28s} {1e3 * a:10.3f} {1e3 * b:10.3f} {b / a:8.1f}x")


if __name__ == "__main__":
    main()
