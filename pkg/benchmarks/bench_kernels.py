"""Compare the compiled and NumPy per-step kernels.

    python3 benchmarks/bench_kernels.py [--batch 32] [--agents 9] [--repeat 50]

Prints the mean time per call for each kernel and backend, and the speed-up.
Also times one full differentiable rollout with each backend.
"""

import argparse
import importlib
import os
import timeit

import numpy as np


def _inputs(rng, B, N):
    x = rng.uniform(0, 250, (B, N))
    v = rng.uniform(0, 30, (B, N))
    lane = rng.integers(0, 2, (B, N)).astype(np.int64)
    phi = np.zeros((B, N))
    y = np.where(lane == 0, -3.6, 0.0)
    return x, v, lane, phi, y


def bench_kernels(B, N, repeat):
    from mpgmerge import _kernels_py as py
    try:
        from mpgmerge import _kernels as cy
    except ImportError:
        cy = None
    rng = np.random.default_rng(0)
    x, v, lane, phi, y = _inputs(rng, B, N)
    lead, foll = py.neighbors(x, lane, True)
    calls = {
        "neighbors": lambda m: m.neighbors(x, lane, True),
        "pair_terms": lambda m: m.pair_terms(x, v, lane, 1.0, 1e-3, 180.0, 20.0, 1.0),
        "feasible_bounds": lambda m: m.feasible_bounds(x, v, phi, lead, foll, 0.1, 3.0, 4.5, 9.81, 30.0),
        "collisions": lambda m: m.collisions(x, y, phi, 4.5, 1.8),
    }
    print(f"kernels, batch={B}, agents={N}, repeat={repeat}")
    print(f"{'kernel':<16}{'numpy [us]':>12}{'cython [us]':>13}{'speed-up':>10}")
    for name, fn in calls.items():
        t_py = min(timeit.repeat(lambda: fn(py), number=repeat, repeat=3)) / repeat * 1e6
        if cy is None:
            print(f"{name:<16}{t_py:>12.1f}{'n/a':>13}{'':>10}")
            continue
        t_cy = min(timeit.repeat(lambda: fn(cy), number=repeat, repeat=3)) / repeat * 1e6
        print(f"{name:<16}{t_py:>12.1f}{t_cy:>13.1f}{t_py / t_cy:>9.1f}x")


def bench_rollout(B, N):
    from mpgmerge import kernels
    from mpgmerge.config import desk_config
    from mpgmerge.policy import PolicyParams
    from mpgmerge.training import potential_gradient, sample_initial_states

    cfg = desk_config()
    cfg.scenario.n_leaders = (N - 1) // 2
    cfg.scenario.n_followers = N - 1 - cfg.scenario.n_leaders
    rng = np.random.default_rng(1)
    batch = sample_initial_states(cfg, rng, B)
    params = PolicyParams.init(cfg.scenario.n_agents, cfg.network, rng)
    out = {}
    for backend in ("python", "cython"):
        os.environ["MPGMERGE_PURE_PYTHON"] = "1" if backend == "python" else "0"
        importlib.reload(kernels)
        if kernels.BACKEND != backend:
            continue
        out[backend] = min(timeit.repeat(lambda: potential_gradient(params, batch, cfg), number=1, repeat=3))
    os.environ.pop("MPGMERGE_PURE_PYTHON", None)
    importlib.reload(kernels)
    print(f"\nrollout + gradient, batch={B}, agents={cfg.scenario.n_agents}, steps={cfg.scenario.steps}")
    for k, t in out.items():
        print(f"  {k:<8}{t:8.3f} s")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--agents", type=int, default=9)
    ap.add_argument("--repeat", type=int, default=50)
    a = ap.parse_args()
    bench_kernels(a.batch, a.agents, a.repeat)
    bench_rollout(a.batch, a.agents)
