"""Compare the compiled and numpy kernel backends.

Times each kernel at the sizes seen in training (a 32-scene batch has
roughly 80 pedestrians; the decoder runs 12 steps with K = 6), then one
warmup and one adversarial epoch end to end under each backend.

    python3 benchmarks/bench_kernels.py [--repeat N] [--json out.json]
"""
import argparse
import json
import time

import numpy as np

from trajgan import data, kernels
from trajgan.training import TrainConfig, init_state, train_epoch


def _best_time(fn, repeat):
    fn()
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def kernel_cases(rng):
    cases = []
    for a, h in [(2, 32), (80, 32), (80, 64)]:
        pre = rng.normal(size=(a, 4 * h))
        c = rng.normal(size=(a, h))
        cases.append((f"lstm_forward A={a} H={h}", lambda m, pre=pre, c=c: m.lstm_pointwise_forward(pre, c)))

        def bwd(m, pre=pre, c=c, a=a, h=h):
            _, _, cache = m.lstm_pointwise_forward(pre, c)
            return m.lstm_pointwise_backward(np.ones((a, h)), np.ones((a, h)), cache)
        cases.append((f"lstm_fwd+bwd A={a} H={h}", bwd))
    for rows in (24, 960):
        k = 6
        pi = rng.dirichlet(np.ones(k), size=rows)
        mux, muy = rng.normal(size=(rows, k)), rng.normal(size=(rows, k))
        sx, sy = rng.uniform(0.2, 2, (rows, k)), rng.uniform(0.2, 2, (rows, k))
        rho = rng.uniform(-0.8, 0.8, (rows, k))
        px, py = rng.normal(size=rows), rng.normal(size=rows)
        args = (pi, mux, muy, sx, sy, rho, px, py)
        cases.append((f"gmm_forward rows={rows}", lambda m, args=args: m.gmm_log_prob_forward(*args)))

        def gbwd(m, args=args, rows=rows):
            _, cache = m.gmm_log_prob_forward(*args)
            return m.gmm_log_prob_backward(np.ones(rows), *args[:6], cache)
        cases.append((f"gmm_fwd+bwd rows={rows}", gbwd))
    pts = rng.normal(scale=0.6, size=(6, 2))
    w = rng.dirichlet(np.ones(6))
    cases.append(("weighted_dbscan K=6", lambda m: m.weighted_dbscan(pts, w, 0.5, 0.05)))
    return cases


def epoch_times(backend, scenes):
    out = {}
    for phase, warmup in (("warmup epoch", 1), ("adversarial epoch", 0)):
        with kernels.use_backend(backend):
            cfg = TrainConfig(warmup_epochs=warmup, epochs=1, seed=0)
            state = init_state(cfg)
            t0 = time.perf_counter()
            train_epoch(state, scenes, cfg)
            out[phase] = time.perf_counter() - t0
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--scenes", type=int, default=64)
    ap.add_argument("--json", help="also write results here")
    args = ap.parse_args(argv)

    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled backend not built; only the numpy timings are shown")
    rng = np.random.default_rng(0)
    results = {}
    print(f"{'kernel':32s}" + "".join(f"{b:>14s}" for b in backends) + "   speedup")
    for name, fn in kernel_cases(rng):
        row = {b: _best_time(lambda: fn(kernels.backend_module(b)), args.repeat) for b in backends}
        results[name] = row
        speed = f"{row['python'] / row['cython']:8.2f}x" if "cython" in row else ""
        print(f"{name:32s}" + "".join(f"{row[b] * 1e6:12.1f}us" for b in backends) + "  " + speed)

    scenes = data.generate_sfm(data.SfmConfig(seed=0), args.scenes)
    per_backend = {b: epoch_times(b, scenes) for b in backends}
    for phase in ("warmup epoch", "adversarial epoch"):
        row = {b: per_backend[b][phase] for b in backends}
        results[f"{phase} ({args.scenes} scenes)"] = row
        speed = f"{row['python'] / row['cython']:8.2f}x" if "cython" in row else ""
        print(f"{phase + f' ({args.scenes} scenes)':32s}" + "".join(f"{row[b] * 1e3:12.1f}ms" for b in backends)
              + "  " + speed)
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(results, fh, indent=1, sort_keys=True)


if __name__ == "__main__":
    main()
