"""Time the compiled and pure-Python physics kernels on the same workloads.

    python benchmarks/bench_kernels.py [--repeat N]

Prints one line per (workload, backend) with microseconds per call and the
speedup of the compiled kernel. Both backends must produce identical states.
"""
import argparse
import timeit

import numpy as np

from physprobe import _core
from physprobe.physx import Fist, TowerWorld, VerticalWorld, step_tower, step_vertical
from physprobe.towers import FIST_START, canonical_tower


def tower_world(fist: bool):
    f = Fist(np.array(FIST_START)) if fist else None
    w = TowerWorld.from_blocks(canonical_tower(), [(0,), (1, 2), (3,), (4,)], fist=f)
    if fist:
        w.fist.commanded_velocity[:] = (2.0, 0.0, 0.0)
    return w


def workloads():
    def tower_direct(backend):
        w = tower_world(False)
        step_tower(w, {1: np.array([30.0, 0.0, 0.0])}, n_sub=4, backend=backend)
        return w.pos

    def tower_fist(backend):
        w = tower_world(True)
        step_tower(w, None, n_sub=40, backend=backend)
        return w.pos

    def fist_episode(backend):
        w = tower_world(True)
        rng = np.random.default_rng(0)
        for d in rng.integers(4, size=26):
            w.fist.commanded_velocity[:] = 0.0
            w.fist.commanded_velocity[d // 2] = 2.0 if d % 2 == 0 else -2.0
            step_tower(w, None, n_sub=4, backend=backend)
        return w.pos

    def vertical(backend):
        w = VerticalWorld.at_rest([0.7, 1.1, 1.6, 1.9])
        step_vertical(w, [20.0, 0.0, 20.0, 0.0], n_sub=40, backend=backend)
        return w.z

    return {"tower_direct_4sub": tower_direct, "tower_fist_40sub": tower_fist,
            "fist_episode_26x4": fist_episode,
            "vertical_40sub": vertical}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args()
    try:
        _core.get_kernels("cython")
    except ImportError:
        print("compiled kernels not built; only the Python backend is available")
        return
    for name, fn in workloads().items():
        a, b = fn("python"), fn("cython")
        assert np.array_equal(a, b), f"{name}: backends disagree"
        t = {}
        for backend in ("python", "cython"):
            t[backend] = min(timeit.repeat(lambda: fn(backend), number=args.repeat,
                                           repeat=3)) / args.repeat
            print(f"{name:20s} {backend:7s} {t[backend] * 1e6:10.1f} us/call")
        print(f"{name:20s} speedup {t['python'] / t['cython']:8.1f}x")


if __name__ == "__main__":
    main()
