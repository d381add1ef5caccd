"""Command-line pipeline.

Subcommands: phantom (synthesize ground truth), acquire (blur, optional
motion/noise, line subsampling), reconstruct (batched nuclear-norm solve),
evaluate (metrics JSON), phase-diagram (success grid over rank and L').
Every command takes --config/--set/--out, writes its outputs plus a manifest
with the fully resolved configuration, and uses temp-then-rename writes.

Exit codes: 0 ok, 2 configuration error, 3 I/O or file-format error,
4 numerical failure.
"""

import argparse
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from .analysis import (
    TraceSet,
    coherence_mu_b,
    median_filter_3d,
    pals_traces,
    phase_diagram,
    psnr,
    theorem_bounds,
    trace_correlations,
    write_phase_csv,
    write_traces_csv,
)
from .config import parse_config
from .core import (
    FrameGrid,
    MeasurementSet,
    VideoMatrix,
    atomic_write_bytes,
    read_container,
    write_container,
)
from .errors import ConfigError, NoraError, NumericalError
from .operators import ForwardModel, forward_apply, generate_plan
from .phantom import (
    apply_motion,
    apply_noise,
    gen_scene,
    gen_traces,
    matrix_to_scene,
    render_clean,
    scene_to_matrix,
)
from .solver import (
    MODE_CONSTRAINED,
    MODE_LAGRANGIAN,
    scale_epsilon,
    solve,
)


def _jsonable(value):
    """Make floats strict-JSON safe: non-finite values become strings."""
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.floating, float)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    if isinstance(value, np.integer):
        return int(value)
    return value


def _write_json(path, obj):
    atomic_write_bytes(
        path, (json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n").encode()
    )


def _write_manifest(out_dir, command, cfg, inputs, outputs, derived=None):
    manifest = {
        "command": command,
        "config": cfg.to_dict(),
        "inputs": {k: str(v) for k, v in inputs.items()},
        "outputs": sorted(outputs),
    }
    if derived:
        manifest["derived"] = derived
    _write_json(out_dir / f"{command}_manifest.json", manifest)


def _expect(obj, klass, path, what):
    if not isinstance(obj, klass):
        raise ConfigError(f"{path} is not a {what} container")
    return obj


def cmd_phantom(cfg, out_dir, threads):
    grid = cfg.grid()
    frames = cfg.frames()
    cells = cfg.get_int("scene", "cells")
    scene = gen_scene(
        grid,
        cells,
        (cfg.get_float("scene", "radius_min_px"), cfg.get_float("scene", "radius_max_px")),
        seed=cfg.get_int("scene", "seed"),
        edge_soft_px=cfg.get_float("scene", "edge_soft_px"),
    )
    traces = gen_traces(cfg.activity_model(), cells, frames, grid.frame_rate_hz)
    clean = render_clean(scene, traces)

    outputs = ["video.nora", "scene.nora", "traces.csv"]
    write_container(out_dir / "video.nora", clean)
    write_container(out_dir / "scene.nora", scene_to_matrix(scene))
    trace_set = TraceSet(traces, tuple(range(cells)), frame_rate_hz=grid.frame_rate_hz)
    write_traces_csv(trace_set, out_dir / "traces.csv")
    if cells > 0:
        # traces ride in a video container on a degenerate K x 1 grid
        trace_grid = FrameGrid(cells, 1, frame_rate_hz=grid.frame_rate_hz)
        write_container(out_dir / "traces.nora", VideoMatrix(trace_grid, traces))
        outputs.append("traces.nora")
    _write_manifest(out_dir, "phantom", cfg, {}, outputs)
    return 0


def cmd_acquire(cfg, out_dir, threads):
    video_path = cfg.io_path("clean_video", out_dir)
    video = _expect(read_container(video_path), VideoMatrix, video_path, "video")
    grid = cfg.grid()
    if video.grid != grid:
        raise ConfigError(
            f"video grid {video.grid.height_lines}x{video.grid.width_pixels} "
            f"does not match config grid {grid.height_lines}x{grid.width_pixels}"
        )
    derived = {}
    if cfg.get_bool("motion", "enabled"):
        video = apply_motion(video, cfg.motion_model())
        derived["motion_applied"] = True

    plan = generate_plan(
        grid,
        video.frames,
        cfg.lines_per_frame(grid),
        cfg.plan_strategy(),
        seed=cfg.get_int("plan", "seed"),
    )
    model = ForwardModel(cfg.psf(), plan, grid)
    y = forward_apply(video, model)

    if cfg.get_bool("noise", "enabled"):
        level = float(np.mean(np.maximum(y.data, 0.0)))
        noise = cfg.noise_model(reference_level=level)
        y = apply_noise(y, noise)
        derived["noise_reference_level"] = level
        derived["photon_gain"] = noise.photon_gain
        derived["gaussian_sigma"] = noise.gaussian_sigma

    write_container(out_dir / "measurements.nora", y)
    write_container(out_dir / "plan.nora", plan)
    _write_manifest(
        out_dir,
        "acquire",
        cfg,
        {"clean_video": video_path},
        ["measurements.nora", "plan.nora"],
        derived=derived,
    )
    return 0


def _batch_lambda(cfg, y, model):
    """Resolve lam for a Lagrangian batch: explicit value beats lam_factor."""
    from .operators import adjoint_apply

    lam = cfg.get_optional_float("solver", "lam")
    if lam is not None:
        return lam
    factor = cfg.get_optional_float("solver", "lam_factor")
    if factor is None:
        raise ConfigError("Lagrangian mode needs [solver] lam or lam_factor")
    return factor * 2.0 * float(np.linalg.norm(adjoint_apply(y, model).data, 2))


def cmd_reconstruct(cfg, out_dir, threads):
    from .solver import _slice_plan

    meas_path = cfg.io_path("measurements", out_dir)
    y_full = _expect(
        read_container(meas_path), MeasurementSet, meas_path, "measurement"
    )
    grid = y_full.plan.grid
    psf = cfg.psf()
    batch_frames = cfg.get_int("run", "batch_frames")
    if batch_frames < 1:
        raise ConfigError("[run] batch_frames must be >= 1")
    mode = cfg.get_str("solver", "mode").strip().lower()
    preset = cfg.get_str("solver", "eps_preset").strip().lower()

    parts, reports = [], []
    for t0 in range(0, y_full.frames, batch_frames):
        t1 = min(t0 + batch_frames, y_full.frames)
        plan_b = _slice_plan(y_full.plan, t0, t1)
        model_b = ForwardModel(psf, plan_b, grid)
        y_b = MeasurementSet(plan_b, y_full.data[:, t0:t1])

        eps_override = None
        if mode == MODE_CONSTRAINED and preset:
            if cfg.get_optional_float("solver", "eps") is None:
                eps_override = scale_epsilon(preset, y_b.total_samples)
        lam_override = None
        if mode == MODE_LAGRANGIAN:
            lam_override = _batch_lambda(cfg, y_b, model_b)
        config_b = cfg.solver_config(eps_override=eps_override, lam_override=lam_override)

        x_b, rep = solve(y_b, model_b, config_b)
        parts.append(x_b.data)
        if isinstance(rep, list):
            reports.extend(r.to_dict() for r in rep)
        else:
            reports.append(rep.to_dict())

    recon = VideoMatrix(grid, np.concatenate(parts, axis=1))
    write_container(out_dir / "recon.nora", recon)
    _write_json(out_dir / "report.json", {"batches": reports})
    _write_manifest(
        out_dir,
        "reconstruct",
        cfg,
        {"measurements": meas_path},
        ["recon.nora", "report.json"],
    )
    return 0


def cmd_evaluate(cfg, out_dir, threads):
    recon_path = cfg.io_path("recon", out_dir)
    clean_path = cfg.io_path("clean_video", out_dir)
    scene_path = cfg.io_path("scene", out_dir)
    recon = _expect(read_container(recon_path), VideoMatrix, recon_path, "video")
    clean = _expect(read_container(clean_path), VideoMatrix, clean_path, "video")
    scene = matrix_to_scene(
        _expect(read_container(scene_path), VideoMatrix, scene_path, "scene")
    )
    if recon.grid != clean.grid or recon.frames != clean.frames:
        raise ConfigError("reconstruction and clean video shapes differ")
    if scene.grid != clean.grid:
        raise ConfigError("scene grid does not match the videos")

    filtered = recon
    window = None
    if cfg.get_bool("evaluate", "median"):
        window = cfg.median_window()
        filtered = median_filter_3d(recon, window)

    truth_traces = pals_traces(clean, scene)
    est_traces = pals_traces(filtered, scene)
    corr = trace_correlations(est_traces, truth_traces)

    sing = np.linalg.svd(clean.data, compute_uv=False)
    numerical_rank = int(np.sum(sing > 1e-8 * sing[0])) if sing.size else 0
    rank = cfg.get_optional_int("evaluate", "rank")
    if rank is None:
        rank = max(1, min(scene.n_cells + 1, numerical_rank))
    psf = cfg.psf()
    mu_sum = coherence_mu_b(clean, psf, rank, normalization="sum")
    mu_energy = coherence_mu_b(clean, psf, rank, normalization="energy")

    grid = clean.grid
    lines = cfg.lines_per_frame(grid)
    samples_pixels = lines * grid.width_pixels * clean.frames
    samples_lines = lines * clean.frames
    measured_error = float(np.linalg.norm(recon.data - clean.data))
    measured_error_filtered = float(np.linalg.norm(filtered.data - clean.data))

    noise_eps = cfg.get_optional_float("evaluate", "noise_eps")
    requirement = error_bound = bound_satisfied = None
    if noise_eps is not None:
        # the bound counts pixels as samples (the conservative reading) and
        # treats noise_eps as the per-entry noise standard deviation
        requirement, error_bound = theorem_bounds(
            grid.n_pixels,
            clean.frames,
            samples_pixels,
            rank,
            mu_sum,
            noise_eps,
        )
        bound_satisfied = measured_error <= error_bound

    metrics = {
        "psnr_db": psnr(filtered, clean),
        "per_cell_correlation": list(corr.per_cell_r),
        "mean_correlation": corr.mean_r,
        "median_correlation": corr.median_r,
        "excluded_cells": corr.excluded_count,
        "mu_b2": mu_sum,
        "mu_b2_unit_energy": mu_energy,
        "psf_eta": psf.eta,
        "coherence_rank": rank,
        "numerical_rank": numerical_rank,
        "samples_pixels": samples_pixels,
        "samples_lines": samples_lines,
        "noise_eps_per_entry": noise_eps,
        "sample_requirement": requirement,
        "theorem_error_bound": error_bound,
        "measured_error": measured_error,
        "measured_error_filtered": measured_error_filtered,
        "bound_satisfied": bound_satisfied,
        "median_window": list(window) if window else None,
    }
    _write_json(out_dir / "metrics.json", metrics)
    _write_manifest(
        out_dir,
        "evaluate",
        cfg,
        {"recon": recon_path, "clean_video": clean_path, "scene": scene_path},
        ["metrics.json"],
    )
    return 0


def _phase_config_hash(cfg):
    relevant = {
        s: cfg.to_dict()[s] for s in ("grid", "psf", "plan", "phase", "run")
    }
    blob = json.dumps(relevant, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def cmd_phase_diagram(cfg, out_dir, threads):
    from .core import SamplingStrategy
    from .operators import delta_psf

    grid = cfg.grid()
    frames = cfg.frames()
    r_list = cfg.get_int_list("phase", "r_list")
    lprime_list = cfg.get_int_list("phase", "lprime_list")
    trials = cfg.get_int("phase", "trials")

    psf_choice = cfg.get_str("phase", "psf").strip().lower()
    if psf_choice == "delta":
        psf = delta_psf()
    elif psf_choice == "config":
        psf = cfg.psf()
    else:
        raise ConfigError("[phase] psf must be 'delta' or 'config'")
    strat_name = cfg.get_str("phase", "strategy").strip().lower()
    strategies = {
        "uniform": SamplingStrategy.UNIFORM_RANDOM,
        "rotating": SamplingStrategy.ROTATING_EVENLY_SPACED,
    }
    if strat_name not in strategies:
        raise ConfigError("[phase] strategy must be 'uniform' or 'rotating'")
    cfg_hash = _phase_config_hash(cfg)

    cell_dir = out_dir / "phase_cells"
    cell_dir.mkdir(parents=True, exist_ok=True)
    completed = {}
    for path in sorted(cell_dir.glob("cell_R*_L*.json")):
        with open(path) as fh:
            entry = json.load(fh)
        if entry.get("config_hash") == cfg_hash:
            completed[(entry["rank"], entry["lprime"])] = entry["cell"]

    def on_cell(rank, lprime, cell):
        _write_json(
            cell_dir / f"cell_R{rank}_L{lprime}.json",
            {"config_hash": cfg_hash, "rank": rank, "lprime": lprime, "cell": cell},
        )

    result = phase_diagram(
        grid,
        frames,
        r_list,
        lprime_list,
        trials,
        success_threshold=cfg.get_float("phase", "threshold"),
        psf=psf,
        strategy=strategies[strat_name],
        seed=cfg.get_int("phase", "seed"),
        lam_factor=cfg.get_float("phase", "lam_factor"),
        max_iters=cfg.get_int("phase", "max_iters"),
        rel_tol=cfg.get_float("phase", "rel_tol"),
        completed=completed,
        on_cell=on_cell,
        workers=threads,
    )

    write_phase_csv(result, out_dir / "phase.csv")
    boundaries = {
        str(r): result.boundary_lprime(r) for r in result.r_list
    }
    summary = {
        "r_list": list(result.r_list),
        "lprime_list": list(result.lprime_list),
        "success_fraction": result.success_fraction.tolist(),
        "mean_rel_error": result.mean_rel_error.tolist(),
        "failure_counts": result.failure_counts.tolist(),
        "boundary_lprime": boundaries,
        "success_threshold": result.success_threshold,
        "trials": result.trials,
    }
    _write_json(out_dir / "phase_summary.json", summary)
    _write_manifest(
        out_dir, "phase-diagram", cfg, {}, ["phase.csv", "phase_summary.json"]
    )
    return 0


_COMMANDS = {
    "phantom": cmd_phantom,
    "acquire": cmd_acquire,
    "reconstruct": cmd_reconstruct,
    "evaluate": cmd_evaluate,
    "phase-diagram": cmd_phase_diagram,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="nora",
        description="Compressive raster-scan video: phantom, acquire, "
        "reconstruct, evaluate, phase-diagram.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} stage")
        p.add_argument("--config", required=True, help="INI configuration file")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="SECTION.KEY=VALUE",
            help="override a config value (repeatable)",
        )
        p.add_argument("--out", required=True, help="output directory")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        threads = max(1, int(os.environ.get("NORA_THREADS", "1")))
    except ValueError:
        print("error: NORA_THREADS must be an integer", file=sys.stderr)
        return 2
    try:
        cfg = parse_config(args.config, args.overrides)
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        return _COMMANDS[args.command](cfg, out_dir, threads)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        trace = getattr(exc, "trace", None)
        if trace:
            for lam, res in trace:
                print(f"  lam={lam:.6g} residual={res:.6g}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    except NoraError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
