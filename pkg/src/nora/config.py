"""Run configuration: INI files with flat sections plus --set overrides.

Every command resolves its RunConfig to a plain dict of strings before
doing any work; that resolved dict goes into the output manifest so a run
can be replayed exactly.
"""

import configparser
from pathlib import Path

from .core import FrameGrid, SamplingStrategy
from .errors import ConfigError
from .operators import gaussian_psf_px, make_gaussian_psf
from .phantom import ActivityModel, MotionModel, NoiseModel
from .solver import MODE_CONSTRAINED, MODE_LAGRANGIAN, SolverConfig

# section -> key -> default (all strings; empty string means unset)
DEFAULTS = {
    "grid": {
        "height": "32",
        "width": "32",
        "pixel_pitch_um": "1.0",
        "frame_rate_hz": "30.0",
    },
    "run": {
        "frames": "128",
        "batch_frames": "500",
    },
    "scene": {
        "cells": "4",
        "radius_min_px": "2.0",
        "radius_max_px": "4.0",
        "edge_soft_px": "1.0",
        "seed": "1",
    },
    "activity": {
        "spike_rate_hz": "1.0",
        "tau_rise_s": "0.05",
        "tau_decay_s": "0.4",
        "baseline": "0.1",
        "amplitude_jitter": "0.2",
        "seed": "2",
    },
    "psf": {
        "sigma_slow_px": "1.5",
        "sigma_fast_px": "0.0",
        "fwhm_slow_um": "",
        "fwhm_fast_um": "",
        "truncation_sigmas": "4.0",
    },
    "plan": {
        "strategy": "rotating",
        "lines_per_frame": "",
        "speedup": "",
        "seed": "3",
    },
    "motion": {
        "enabled": "false",
        "rigid_sigma_px": "0.5",
        "line_jitter_sigma_px": "0.0",
        "seed": "4",
    },
    "noise": {
        "enabled": "false",
        "photon_gain": "100.0",
        "gaussian_sigma": "0.01",
        "offset": "0.0",
        "snr": "",
        "seed": "5",
    },
    "solver": {
        "mode": "lagrangian",
        "lam": "",
        "lam_factor": "",
        "eps": "",
        "eps_preset": "",
        "mu": "0.0",
        "max_iters": "500",
        "rel_tol": "1e-4",
        "step_scale": "0.99",
        "rank_cap": "",
        "continuation": "false",
        "seed": "6",
    },
    "evaluate": {
        "median": "true",
        "median_window": "9,9,9",
        "rank": "",
        "noise_eps": "",
    },
    "phase": {
        "r_list": "1,2,4,8",
        "lprime_list": "1,2,3,4,6,8,12,16",
        "trials": "5",
        "threshold": "0.05",
        "strategy": "uniform",
        "psf": "delta",
        "lam_factor": "1e-3",
        "max_iters": "400",
        "rel_tol": "1e-5",
        "seed": "7",
    },
    "io": {
        "clean_video": "video.nora",
        "scene": "scene.nora",
        "traces": "traces.csv",
        "measurements": "measurements.nora",
        "recon": "recon.nora",
    },
}

_STRATEGIES = {
    "rotating": SamplingStrategy.ROTATING_EVENLY_SPACED,
    "uniform": SamplingStrategy.UNIFORM_RANDOM,
}


class RunConfig:
    """Resolved configuration with typed accessors and model builders."""

    def __init__(self, values):
        self.values = values

    # -- raw typed getters ------------------------------------------------

    def raw(self, section, key):
        try:
            return self.values[section][key]
        except KeyError:
            raise ConfigError(f"missing config key [{section}] {key}") from None

    def get_str(self, section, key):
        return self.raw(section, key)

    def get_int(self, section, key):
        val = self.raw(section, key)
        try:
            return int(val)
        except ValueError:
            raise ConfigError(f"[{section}] {key} must be an integer, got {val!r}") from None

    def get_float(self, section, key):
        val = self.raw(section, key)
        try:
            return float(val)
        except ValueError:
            raise ConfigError(f"[{section}] {key} must be a number, got {val!r}") from None

    def get_bool(self, section, key):
        val = self.raw(section, key).strip().lower()
        if val in ("1", "true", "yes", "on"):
            return True
        if val in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"[{section}] {key} must be a boolean, got {val!r}")

    def get_optional_float(self, section, key):
        val = self.raw(section, key).strip()
        return float(val) if val else None

    def get_optional_int(self, section, key):
        val = self.raw(section, key).strip()
        return int(val) if val else None

    def get_int_list(self, section, key):
        val = self.raw(section, key)
        try:
            return [int(v) for v in val.replace(" ", "").split(",") if v]
        except ValueError:
            raise ConfigError(
                f"[{section}] {key} must be a comma-separated integer list"
            ) from None

    # -- model builders ---------------------------------------------------

    def grid(self):
        return FrameGrid(
            height_lines=self.get_int("grid", "height"),
            width_pixels=self.get_int("grid", "width"),
            pixel_pitch_um=self.get_float("grid", "pixel_pitch_um"),
            frame_rate_hz=self.get_float("grid", "frame_rate_hz"),
        )

    def frames(self):
        frames = self.get_int("run", "frames")
        if frames < 1:
            raise ConfigError("[run] frames must be >= 1")
        return frames

    def psf(self):
        fwhm_slow = self.get_optional_float("psf", "fwhm_slow_um")
        fwhm_fast = self.get_optional_float("psf", "fwhm_fast_um")
        trunc = self.get_float("psf", "truncation_sigmas")
        if fwhm_slow is not None or fwhm_fast is not None:
            if fwhm_slow is None or fwhm_fast is None:
                raise ConfigError("set both [psf] fwhm_slow_um and fwhm_fast_um")
            return make_gaussian_psf(
                fwhm_fast_um=fwhm_fast,
                fwhm_slow_um=fwhm_slow,
                pixel_pitch_um=self.get_float("grid", "pixel_pitch_um"),
                truncation_sigmas=trunc,
            )
        return gaussian_psf_px(
            sigma_slow_px=self.get_float("psf", "sigma_slow_px"),
            sigma_fast_px=self.get_float("psf", "sigma_fast_px"),
            truncation_sigmas=trunc,
        )

    def plan_strategy(self):
        name = self.get_str("plan", "strategy").strip().lower()
        if name not in _STRATEGIES:
            raise ConfigError(
                f"[plan] strategy must be one of {sorted(_STRATEGIES)}, got {name!r}"
            )
        return _STRATEGIES[name]

    def lines_per_frame(self, grid):
        lines = self.get_optional_int("plan", "lines_per_frame")
        speedup = self.get_optional_float("plan", "speedup")
        if lines is not None and speedup is not None:
            raise ConfigError("set [plan] lines_per_frame or speedup, not both")
        if lines is None:
            if speedup is None:
                raise ConfigError("set [plan] lines_per_frame or speedup")
            if speedup <= 0:
                raise ConfigError("[plan] speedup must be positive")
            lines = max(1, round(grid.height_lines / speedup))
        if not 1 <= lines <= grid.height_lines:
            raise ConfigError(f"lines_per_frame must be in [1, {grid.height_lines}]")
        return lines

    def activity_model(self):
        return ActivityModel(
            spike_rate_hz=self.get_float("activity", "spike_rate_hz"),
            tau_rise_s=self.get_float("activity", "tau_rise_s"),
            tau_decay_s=self.get_float("activity", "tau_decay_s"),
            baseline=self.get_float("activity", "baseline"),
            amplitude_jitter=self.get_float("activity", "amplitude_jitter"),
            seed=self.get_int("activity", "seed"),
        )

    def motion_model(self):
        return MotionModel(
            rigid_sigma_px=self.get_float("motion", "rigid_sigma_px"),
            line_jitter_sigma_px=self.get_float("motion", "line_jitter_sigma_px"),
            seed=self.get_int("motion", "seed"),
        )

    def noise_model(self, reference_level=None):
        """Explicit NoiseModel, or one derived from [noise] snr at the given level."""
        from .phantom import noise_for_snr

        snr = self.get_optional_float("noise", "snr")
        if snr is not None:
            if reference_level is None or reference_level <= 0:
                raise ConfigError(
                    "[noise] snr requires a positive clean reference level"
                )
            return noise_for_snr(
                reference_level,
                snr,
                seed=self.get_int("noise", "seed"),
                offset=self.get_float("noise", "offset"),
            )
        return NoiseModel(
            photon_gain=self.get_float("noise", "photon_gain"),
            gaussian_sigma=self.get_float("noise", "gaussian_sigma"),
            offset=self.get_float("noise", "offset"),
            seed=self.get_int("noise", "seed"),
        )

    def solver_config(self, eps_override=None, lam_override=None):
        mode = self.get_str("solver", "mode").strip().lower()
        if mode not in (MODE_LAGRANGIAN, MODE_CONSTRAINED):
            raise ConfigError("[solver] mode must be lagrangian or constrained")
        return SolverConfig(
            mode=mode,
            lam=lam_override if lam_override is not None
            else self.get_optional_float("solver", "lam"),
            eps=eps_override if eps_override is not None
            else self.get_optional_float("solver", "eps"),
            mu=self.get_float("solver", "mu"),
            max_iters=self.get_int("solver", "max_iters"),
            rel_tol=self.get_float("solver", "rel_tol"),
            step_scale=self.get_float("solver", "step_scale"),
            svd_rank_cap=self.get_optional_int("solver", "rank_cap"),
            seed=self.get_int("solver", "seed"),
            continuation=self.get_bool("solver", "continuation"),
        )

    def median_window(self):
        parts = self.get_str("evaluate", "median_window").replace(" ", "").split(",")
        if len(parts) != 3:
            raise ConfigError("[evaluate] median_window must be three odd integers")
        try:
            return tuple(int(p) for p in parts)
        except ValueError:
            raise ConfigError("[evaluate] median_window must be integers") from None

    def io_path(self, key, out_dir):
        """Input/output path from [io]; relative paths resolve against out_dir."""
        val = Path(self.get_str("io", key))
        return val if val.is_absolute() else Path(out_dir) / val

    def to_dict(self):
        return {s: dict(kv) for s, kv in self.values.items()}


def parse_config(path, overrides=()):
    """Load an INI file over DEFAULTS and apply section.key=value overrides.

    Unknown sections or keys are rejected so typos fail loudly.
    """
    parser = configparser.ConfigParser(interpolation=None)
    if path is not None:
        read = parser.read(path)
        if not read:
            raise FileNotFoundError(f"config file not found: {path}")
    values = {s: dict(kv) for s, kv in DEFAULTS.items()}
    for section in parser.sections():
        if section not in values:
            raise ConfigError(f"unknown config section [{section}]")
        for key, val in parser.items(section):
            if key not in values[section]:
                raise ConfigError(f"unknown config key [{section}] {key}")
            values[section][key] = val
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(
                f"--set expects section.key=value, got {item!r}"
            )
        target, val = item.split("=", 1)
        section, key = target.split(".", 1)
        if section not in values or key not in values[section]:
            raise ConfigError(f"unknown config key [{section}] {key}")
        values[section][key] = val
    return RunConfig(values)
