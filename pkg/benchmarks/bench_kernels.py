"""Compare the compiled and pure-Python kernel backends.

Times each kernel on training-sized arrays, then one full training step
(forward, backward, Adam) of the EL1+MP and EL3 models, single threaded.

    python benchmarks/bench_kernels.py [--repeats 20] [--batch 64] [--json out.json]
"""
from __future__ import annotations

import argparse
import json
import statistics
import time

import numpy as np
from threadpoolctl import threadpool_limits

from adaloc.model import Regressor, forward_tensor, parse_arch
from adaloc.rng import generator
from adaloc.tensor import Adam, kernels, mse_loss


def median_time(fn, repeats):
    fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def kernel_cases(batch):
    r = generator(0, "bench", "kernels")
    # kernels see 2-D row blocks: attention scores and encoder activations
    scores = r.standard_normal((batch * 2 * 128, 128)).astype(np.float32)
    soft = kernels.softmax_fwd(scores)
    x = r.standard_normal((batch * 128, 46)).astype(np.float32)
    gamma, beta = np.ones(46, np.float32), np.zeros(46, np.float32)
    _, xhat, rstd = kernels.layernorm_fwd(x, gamma, beta, 1e-5)
    pooled, idx = kernels.maxpool_fwd(x, 4)
    return {
        "softmax_fwd": lambda: kernels.softmax_fwd(scores),
        "softmax_bwd": lambda: kernels.softmax_bwd(soft, scores),
        "layernorm_fwd": lambda: kernels.layernorm_fwd(x, gamma, beta, 1e-5),
        "layernorm_bwd": lambda: kernels.layernorm_bwd(x, xhat, rstd, gamma),
        "maxpool_fwd": lambda: kernels.maxpool_fwd(x, 4),
        "maxpool_bwd": lambda: kernels.maxpool_bwd(pooled, idx, 46),
    }


def step_case(arch, batch):
    r = generator(0, "bench", "step", arch)
    model = Regressor(parse_arch(arch), seed=0)
    opt = Adam(list(model.weights.values()), lr=6e-4)
    x = r.standard_normal((batch, 128, 46)).astype(np.float32)
    y = r.standard_normal((batch, 2)).astype(np.float32)

    def step():
        opt.zero_grad()
        loss = mse_loss(forward_tensor(x, model.config, model.weights), y)
        loss.backward()
        opt.step()
    return step


def run(repeats, batch):
    rows = []
    for backend in kernels.available_backends():
        prev = kernels.use_backend(backend)
        try:
            for name, fn in kernel_cases(batch).items():
                rows.append({"case": name, "backend": backend, "seconds": median_time(fn, repeats)})
            for arch in ("el=1,ln=off,mp=on", "el=3,ln=on,mp=on"):
                rows.append({"case": f"train step {arch}", "backend": backend,
                             "seconds": median_time(step_case(arch, batch), max(3, repeats // 4))})
        finally:
            kernels.use_backend(prev)
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--json", metavar="FILE", help="also write the raw timings here")
    args = ap.parse_args(argv)
    if "compiled" not in kernels.available_backends():
        print("compiled kernels are not built; only the Python backend is timed")
    with threadpool_limits(1):
        rows = run(args.repeats, args.batch)
    by_case = {}
    for row in rows:
        by_case.setdefault(row["case"], {})[row["backend"]] = row["seconds"]
    print(f"{'case':<30}{'python (ms)':>14}{'compiled (ms)':>16}{'speedup':>10}")
    for case, t in by_case.items():
        py, c = t.get("python"), t.get("compiled")
        speed = f"{py / c:9.2f}x" if py and c else "        -"
        print(f"{case:<30}{1e3 * py:>14.3f}{(1e3 * c if c else float('nan')):>16.3f}{speed:>10}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
