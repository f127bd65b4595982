"""Timing comparison of the numba kernels against their numpy fallbacks.

Run as ``python -m ahtn.bench``. Numbers are best-of-five wall times per
call; the first numba call is made before timing so compilation cost does
not land in the table. Finishes with one end-to-end scoring run of the
bundled density exercise under the active backend.
"""

import time

import numpy as np

from . import kernels


def _best_of(fn, args, number: int, repeat: int = 5) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        for _ in range(number):
            fn(*args)
        dt = (time.perf_counter() - t0) / number
        best = min(best, dt)
    return best


def _cases():
    rng = np.random.default_rng(7)
    pts = rng.normal(size=(25, 3))
    tgt = pts + rng.normal(scale=0.02, size=(25, 3))
    center = np.array([0.0, 1.7, 0.0])
    big = rng.normal(size=2000)
    big2 = big + rng.normal(scale=0.5, size=2000)
    long1 = rng.normal(size=100_000)
    long2 = long1 * 0.8 + rng.normal(scale=0.3, size=100_000)
    return [
        ("joint_distances (25x3)", kernels._joint_distances_numpy,
         kernels._joint_distances_numba, (pts, tgt), 20_000),
        ("all_within (25x3)", kernels._all_within_numpy,
         kernels._all_within_numba, (pts, tgt, 0.1), 20_000),
        ("scale_about (25x3)", kernels._scale_about_numpy,
         kernels._scale_about_numba, (pts, center, 1.07), 20_000),
        ("kendall_pair_stats (n=2000)", kernels._kendall_pair_stats_numpy,
         kernels._kendall_pair_stats_numba, (big, big2), 3),
        ("rank_average (n=100k)", kernels._rank_average_numpy,
         kernels._rank_average_numba, (long1,), 20),
        ("pearson (n=100k)", kernels._pearson_numpy,
         kernels._pearson_numba, (long1, long2), 50),
    ]


def main() -> None:
    have_numba = kernels.numba is not None
    print(f"backend selected at import: {kernels.backend_name()}")
    if not have_numba:
        print("numba not importable; timing the numpy fallbacks only")
    header = f"{'kernel':<30} {'numpy':>12} {'numba':>12} {'speedup':>9}"
    print(header)
    print("-" * len(header))
    for name, np_fn, nb_fn, args, number in _cases():
        t_np = _best_of(np_fn, args, number)
        if have_numba:
            nb_fn(*args)  # compile outside the timed region
            t_nb = _best_of(nb_fn, args, number)
            ratio = t_np / t_nb if t_nb > 0 else float("inf")
            print(f"{name:<30} {t_np * 1e6:>10.2f}us {t_nb * 1e6:>10.2f}us "
                  f"{ratio:>8.1f}x")
        else:
            print(f"{name:<30} {t_np * 1e6:>10.2f}us {'-':>12} {'-':>9}")

    from .engine import EngineConfig, build_reference_set, score_recording
    from .fixtures import hydrometer_network, hydrometer_reference

    net = hydrometer_network()
    rec = hydrometer_reference()
    refs = build_reference_set(net, [(rec, 1.0)])
    kernels.warmup()
    t0 = time.perf_counter()
    report = score_recording(EngineConfig(network=net, references=refs), rec)
    dt = time.perf_counter() - t0
    delta = next(s.delta for s in report.scopes if s.delta is not None)
    print(f"\nend-to-end: scored {len(rec.events)} events in {dt * 1e3:.1f}ms "
          f"(delta {delta:.6f}, backend {kernels.backend_name()})")


if __name__ == "__main__":
    main()
