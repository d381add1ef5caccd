"""Compare the numba and numpy kernel lanes: agreement, then speed.

Runs the forward/adjoint operators, the 3D median filter, and a short
Lagrangian solve on both lanes, checks that every output is bit-identical,
and reports per-lane timings with the numba speedup.

    python3 benchmarks/bench_backends.py --height 64 --frames 64 --repeats 5
"""

import argparse
import sys
import time

import numpy as np

from nora import (
    ForwardModel,
    FrameGrid,
    SamplingStrategy,
    SolverConfig,
    VideoMatrix,
    adjoint_apply,
    forward_apply,
    gaussian_psf_px,
    generate_plan,
    median_filter_3d,
    set_backend,
    solve_lagrangian,
)


def build_problem(height, width, frames, lines, seed):
    grid = FrameGrid(height, width)
    rng = np.random.default_rng(seed)
    truth = rng.standard_normal((grid.n_pixels, 5)) @ rng.standard_normal((5, frames))
    video = VideoMatrix(grid, truth)
    plan = generate_plan(grid, frames, lines, SamplingStrategy.ROTATING_EVENLY_SPACED, seed)
    model = ForwardModel(gaussian_psf_px(1.5, 0.0), plan, grid)
    y = forward_apply(video, model)
    return video, model, y


def timed(fn, repeats):
    # warm call first so numba compilation never lands inside the timing
    out = fn()
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return out, best


def run_lane(lane, video, model, y, solver_config, repeats):
    set_backend(lane)
    results, times = {}, {}
    results["forward"], times["forward"] = timed(
        lambda: forward_apply(video, model).data, repeats
    )
    results["adjoint"], times["adjoint"] = timed(
        lambda: adjoint_apply(y, model).data, repeats
    )
    results["median3d"], times["median3d"] = timed(
        lambda: median_filter_3d(video, (3, 3, 3)).data, repeats
    )
    results["solve"], times["solve"] = timed(
        lambda: solve_lagrangian(y, model, solver_config)[0].data, repeats
    )
    return results, times


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--height", type=int, default=64, help="frame lines")
    parser.add_argument("--width", type=int, default=64, help="pixels per line")
    parser.add_argument("--frames", type=int, default=64, help="frame count")
    parser.add_argument("--lines", type=int, default=6, help="sampled lines per frame")
    parser.add_argument("--iters", type=int, default=30, help="solver iterations")
    parser.add_argument("--repeats", type=int, default=5, help="timing repeats")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    video, model, y = build_problem(
        args.height, args.width, args.frames, args.lines, args.seed
    )
    lam = 1e-3 * 2.0 * np.linalg.norm(adjoint_apply(y, model).data, 2)
    solver_config = SolverConfig(
        mode="lagrangian", lam=lam, max_iters=args.iters, rel_tol=1e-12
    )

    try:
        numba_results, numba_times = run_lane(
            "numba", video, model, y, solver_config, args.repeats
        )
    except ImportError:
        print("numba lane unavailable; nothing to compare")
        return 0
    finally:
        set_backend("auto")
    numpy_results, numpy_times = run_lane(
        "numpy", video, model, y, solver_config, args.repeats
    )
    set_backend("auto")

    mismatched = [
        op for op in numpy_results
        if not np.array_equal(numpy_results[op], numba_results[op])
    ]
    if mismatched:
        print(f"LANE MISMATCH on {mismatched}; outputs must be bit-identical")
        return 1

    n = video.grid.n_pixels
    print(
        f"problem: {args.height}x{args.width} ({n} px), {args.frames} frames, "
        f"L'={args.lines}, {args.iters} solver iters"
    )
    print(f"{'op':<10} {'numpy [ms]':>12} {'numba [ms]':>12} {'speedup':>9}")
    for op in ("forward", "adjoint", "median3d", "solve"):
        t_np = numpy_times[op] * 1e3
        t_nb = numba_times[op] * 1e3
        print(f"{op:<10} {t_np:>12.3f} {t_nb:>12.3f} {t_np / t_nb:>8.1f}x")
    print("all lane outputs bit-identical")
    return 0


if __name__ == "__main__":
    sys.exit(main())
