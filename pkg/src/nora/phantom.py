"""Synthetic fluorescence-video ground truth.

A scene is K soft-edged elliptical footprints plus a smooth background map;
rendered against calcium-like activity traces it yields an exactly
rank-(K+1) video.  Sensor noise (Poisson-Gaussian) and rigid/line-jitter
motion are modeled separately so experiments can toggle them.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .backend import get_kernels
from .core import FrameGrid, MeasurementSet, VideoMatrix, _freeze
from .errors import CapacityError, ConfigError, ShapeError
from .operators import gaussian_psf_px

_EDGE_SOFT_PX = 1.0  # Gaussian falloff width outside the ellipse boundary
_SUPPORT_CUTOFF = 1e-6  # footprint values below this are zeroed
_BACKGROUND_PEAK = 0.1  # background max relative to the unit footprint peak


@dataclass(frozen=True, eq=False)
class Scene:
    """Spatial ground truth: K unit-peak footprints and a background map."""

    grid: FrameGrid
    footprints: np.ndarray  # (K, H, W), nonneg, each with max 1
    background: np.ndarray  # (H, W), nonneg
    seed: int = 0

    def __post_init__(self):
        shape = (self.grid.height_lines, self.grid.width_pixels)
        fps = np.asarray(self.footprints, dtype=np.float64)
        if fps.ndim != 3 or fps.shape[1:] != shape:
            raise ShapeError(f"footprints must be (K, {shape[0]}, {shape[1]})")
        if np.any(fps < 0):
            raise ShapeError("footprints must be nonnegative")
        for k in range(fps.shape[0]):
            if abs(fps[k].max() - 1.0) > 1e-6:
                raise ShapeError(f"footprint {k} must have unit maximum")
        bg = np.asarray(self.background, dtype=np.float64)
        if bg.shape != shape or np.any(bg < 0):
            raise ShapeError(f"background must be nonneg with shape {shape}")
        object.__setattr__(self, "footprints", _freeze(fps))
        object.__setattr__(self, "background", _freeze(bg))

    @property
    def n_cells(self):
        return self.footprints.shape[0]


@dataclass(frozen=True)
class ActivityModel:
    """Calcium-like trace statistics: Poisson events through a rise/decay kernel."""

    spike_rate_hz: float = 0.2
    tau_rise_s: float = 0.05
    tau_decay_s: float = 0.4
    baseline: float = 0.1
    amplitude_jitter: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.tau_rise_s < self.tau_decay_s:
            raise ConfigError("need tau_decay > tau_rise > 0")
        if self.spike_rate_hz < 0 or self.baseline < 0 or self.amplitude_jitter < 0:
            raise ConfigError("rate, baseline and jitter must be nonnegative")


@dataclass(frozen=True)
class NoiseModel:
    """Photodetection noise: Poisson shot noise plus Gaussian read noise."""

    photon_gain: float = 100.0  # counts per fluorescence unit; 0 disables signal
    gaussian_sigma: float = 0.01
    offset: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.photon_gain < 0 or self.gaussian_sigma < 0:
            raise ConfigError("photon_gain and gaussian_sigma must be nonnegative")


@dataclass(frozen=True)
class MotionModel:
    """Per-frame rigid shifts plus per-line fast-scan jitter, both circular."""

    rigid_sigma_px: float = 0.0
    line_jitter_sigma_px: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.rigid_sigma_px < 0 or self.line_jitter_sigma_px < 0:
            raise ConfigError("motion sigmas must be nonnegative")


def ellipse_footprint(
    grid, center, semi_axes, angle_rad=0.0, edge_soft_px=_EDGE_SOFT_PX, smooth_px=0.0
):
    """Unit-peak soft ellipse: plateau inside, Gaussian falloff outside.

    center is (line, pixel), semi_axes (a, b) in pixels along the rotated
    axes; edge_soft_px sets the falloff width.  smooth_px > 0 additionally
    convolves the footprint with an isotropic Gaussian (circular boundary)
    and renormalizes, which keeps the profile inside the optical passband.
    """
    if min(semi_axes) <= 0 or edge_soft_px <= 0 or smooth_px < 0:
        raise ConfigError("semi_axes and edge_soft_px must be positive")
    h = np.arange(grid.height_lines, dtype=np.float64)[:, None]
    w = np.arange(grid.width_pixels, dtype=np.float64)[None, :]
    dh = h - center[0]
    dw = w - center[1]
    ca, sa = math.cos(angle_rad), math.sin(angle_rad)
    u = (dh * ca + dw * sa) / semi_axes[0]
    v = (-dh * sa + dw * ca) / semi_axes[1]
    rho = np.sqrt(u**2 + v**2)
    # unity inside the ellipse, Gaussian falloff in radial distance outside
    outside = np.maximum(rho - 1.0, 0.0) * min(semi_axes)
    fp = np.exp(-0.5 * (outside / edge_soft_px) ** 2)
    fp[fp < _SUPPORT_CUTOFF] = 0.0
    if smooth_px > 0:
        psf = gaussian_psf_px(smooth_px, smooth_px, truncation_sigmas=3.0)
        fp = get_kernels().conv2_circ(
            np.ascontiguousarray(fp[:, :, None]), psf.kernel
        )[:, :, 0]
        fp /= fp.max()
    return fp


def gen_background(grid, sigma_px=None, peak=_BACKGROUND_PEAK, seed=0, smooth_px=0.0):
    """Smooth nonneg background: low-pass-filtered seeded noise, min at 0.

    sigma_px defaults to one tenth of the short grid side.  smooth_px > 0
    applies the same extra Gaussian pass ellipse_footprint uses.
    """
    side = min(grid.height_lines, grid.width_pixels)
    if sigma_px is None:
        sigma_px = side / 10.0
    if sigma_px <= 0 or peak < 0 or smooth_px < 0:
        raise ConfigError("sigma_px must be positive and peak nonnegative")
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((grid.height_lines, grid.width_pixels))
    smooth_psf = gaussian_psf_px(sigma_px, sigma_px, truncation_sigmas=2.5)
    bg = get_kernels().conv2_circ(
        np.ascontiguousarray(noise[:, :, None]), smooth_psf.kernel
    )[:, :, 0]
    if smooth_px > 0:
        extra = gaussian_psf_px(smooth_px, smooth_px, truncation_sigmas=3.0)
        bg = get_kernels().conv2_circ(
            np.ascontiguousarray(bg[:, :, None]), extra.kernel
        )[:, :, 0]
    bg -= bg.min()
    top = bg.max()
    if top > 0:
        bg *= peak / top
    return bg


def gen_scene(grid, n_cells, radius_px_range=(2.0, 4.0), seed=0, edge_soft_px=_EDGE_SOFT_PX):
    """Place n_cells soft ellipses with separated centers over a smooth background.

    Centers are rejection-sampled so footprint plateaus stay inside the grid
    and do not collide (soft tails may touch); running out of room raises
    CapacityError.  The background is low-pass-filtered seeded noise scaled
    to 10% of the footprint peak.
    """
    r_lo, r_hi = float(radius_px_range[0]), float(radius_px_range[1])
    side = min(grid.height_lines, grid.width_pixels)
    if n_cells < 0:
        raise ConfigError("n_cells must be >= 0")
    if not 0 < r_lo <= r_hi or r_hi >= side / 2:
        raise ConfigError(f"radii must satisfy 0 < lo <= hi < {side / 2}")
    rng = np.random.default_rng(seed)

    centers, radii, footprints = [], [], []
    attempts_left = 1000 * max(n_cells, 1)
    while len(centers) < n_cells:
        if attempts_left <= 0:
            raise CapacityError(
                f"placed only {len(centers)} of {n_cells} cells on the "
                f"{grid.height_lines}x{grid.width_pixels} grid"
            )
        attempts_left -= 1
        a = rng.uniform(r_lo, r_hi)
        b = rng.uniform(r_lo, r_hi)
        angle = rng.uniform(0.0, math.pi)
        margin = max(a, b) + edge_soft_px
        if 2 * margin >= side:
            raise CapacityError(f"radius {max(a, b):.2f} leaves no room for a center")
        ch = rng.uniform(margin, grid.height_lines - 1 - margin)
        cw = rng.uniform(margin, grid.width_pixels - 1 - margin)
        clear = all(
            math.hypot(ch - oh, cw - ow) >= max(a, b) + orad
            for (oh, ow), orad in zip(centers, radii)
        )
        if not clear:
            continue
        centers.append((ch, cw))
        radii.append(max(a, b))
        footprints.append(
            ellipse_footprint(grid, (ch, cw), (a, b), angle, edge_soft_px)
        )

    bg = gen_background(
        grid, side / 10.0, _BACKGROUND_PEAK, seed=int(rng.integers(2**63))
    )

    shape = (grid.height_lines, grid.width_pixels)
    fps = np.array(footprints) if footprints else np.zeros((0,) + shape)
    return Scene(grid, fps, bg, seed=seed)


def trace_kernel(tau_rise_s, tau_decay_s, dt_s, length=None):
    """Sampled rise/decay impulse response, normalized to unit peak.

    kernel(t) = exp(-t/tau_decay) - exp(-t/tau_rise) on t = 0, dt, 2dt, ...
    truncated where the decay term falls below 1e-3.
    """
    if not 0 < tau_rise_s < tau_decay_s or dt_s <= 0:
        raise ConfigError("need tau_decay > tau_rise > 0 and dt > 0")
    if length is None:
        length = max(2, int(math.ceil(tau_decay_s * math.log(1e3) / dt_s)) + 1)
    t = np.arange(length) * dt_s
    kern = np.exp(-t / tau_decay_s) - np.exp(-t / tau_rise_s)
    peak = kern.max()
    if peak <= 0:
        raise ConfigError("kernel peak is zero; dt too large for the time constants")
    return kern / peak


def gen_traces(model, n_cells, frames, frame_rate_hz):
    """n_cells x frames nonneg activity: jittered Poisson events through the kernel."""
    if frames < 1 or n_cells < 0 or frame_rate_hz <= 0:
        raise ConfigError("need frames >= 1, n_cells >= 0, frame_rate > 0")
    rng = np.random.default_rng(model.seed)
    dt = 1.0 / frame_rate_hz
    kern = trace_kernel(model.tau_rise_s, model.tau_decay_s, dt)
    traces = np.full((n_cells, frames), float(model.baseline))
    for k in range(n_cells):
        counts = rng.poisson(model.spike_rate_hz * dt, frames)
        amps = np.zeros(frames)
        for t in np.flatnonzero(counts):
            jitter = 1.0 + model.amplitude_jitter * rng.standard_normal(counts[t])
            amps[t] = np.sum(np.maximum(jitter, 0.0))
        if np.any(amps):
            traces[k] += np.convolve(amps, kern)[:frames]
    return traces


def render_clean(scene, traces):
    """X[:, t] = sum_k vec(footprint_k) * traces[k, t] + vec(background)."""
    traces = np.asarray(traces, dtype=np.float64)
    if traces.ndim != 2 or traces.shape[0] != scene.n_cells:
        raise ShapeError(
            f"traces must be ({scene.n_cells}, T), got {traces.shape}"
        )
    n = scene.grid.n_pixels
    left = scene.footprints.reshape(scene.n_cells, n).T  # (N, K)
    data = left @ traces + scene.background.reshape(n)[:, None]
    return VideoMatrix(scene.grid, data)


def apply_motion(video, motion):
    """Circularly shift each frame (rigid) and each line (fast-scan jitter).

    Offsets are rounded seeded Gaussians, so every frame remains an exact
    permutation of its input and total intensity is conserved.
    """
    if motion.rigid_sigma_px == 0 and motion.line_jitter_sigma_px == 0:
        return video
    rng = np.random.default_rng(motion.seed)
    grid = video.grid
    h, w = grid.height_lines, grid.width_pixels
    stack = np.array(video.to_stack())
    cols = np.arange(w)[None, :]
    rows = np.arange(h)[:, None]
    for t in range(video.frames):
        frame = stack[:, :, t]
        if motion.rigid_sigma_px > 0:
            dh, dw = np.rint(rng.normal(0.0, motion.rigid_sigma_px, 2)).astype(int)
            frame = np.roll(frame, (dh, dw), axis=(0, 1))
        if motion.line_jitter_sigma_px > 0:
            dj = np.rint(rng.normal(0.0, motion.line_jitter_sigma_px, h)).astype(int)
            frame = frame[rows, (cols - dj[:, None]) % w]
        stack[:, :, t] = frame
    return VideoMatrix(grid, stack.reshape(grid.n_pixels, video.frames))


def apply_noise(measurements, noise):
    """Poisson-Gaussian corruption: Poisson(gain*y)/gain + N(0, sigma) + offset.

    Negative clean values are clamped to zero first (with a warning giving
    the count); photon_gain 0 drops the signal term entirely.
    """
    rng = np.random.default_rng(noise.seed)
    clean = np.array(measurements.data)
    negatives = int(np.sum(clean < 0))
    if negatives:
        warnings.warn(
            f"clamped {negatives} negative measurement entries before Poisson noise",
            stacklevel=2,
        )
        clean = np.maximum(clean, 0.0)
    if noise.photon_gain > 0:
        out = rng.poisson(noise.photon_gain * clean) / noise.photon_gain
    else:
        out = np.zeros_like(clean)
    if noise.gaussian_sigma > 0:
        out = out + rng.normal(0.0, noise.gaussian_sigma, clean.shape)
    out = out + noise.offset
    return MeasurementSet(measurements.plan, out)


def noise_for_snr(reference_level, snr, seed=0, offset=0.0, poisson_fraction=0.8):
    """NoiseModel whose total noise std at reference_level gives the target SNR.

    The noise variance (level/snr)^2 is split poisson_fraction : rest between
    shot noise (gain = snr^2 / (fraction * level)) and Gaussian read noise.
    """
    if reference_level <= 0 or snr <= 0 or not 0 < poisson_fraction <= 1:
        raise ConfigError("need level > 0, snr > 0, 0 < poisson_fraction <= 1")
    sigma_total_sq = (reference_level / snr) ** 2
    gain = reference_level / (poisson_fraction * sigma_total_sq)
    gauss_var = (1.0 - poisson_fraction) * sigma_total_sq
    return NoiseModel(
        photon_gain=gain,
        gaussian_sigma=math.sqrt(gauss_var),
        offset=offset,
        seed=seed,
    )


def scene_to_matrix(scene):
    """Pack the scene as an N x (K+1) matrix: footprint columns then background."""
    n = scene.grid.n_pixels
    cols = np.concatenate(
        [scene.footprints.reshape(scene.n_cells, n).T,
         scene.background.reshape(n, 1)],
        axis=1,
    )
    return VideoMatrix(scene.grid, cols)


def matrix_to_scene(video, seed=0):
    """Inverse of scene_to_matrix; the last column is the background."""
    if video.frames < 1:
        raise ShapeError("scene matrix needs at least the background column")
    g = video.grid
    k = video.frames - 1
    fps = video.data[:, :k].T.reshape(k, g.height_lines, g.width_pixels)
    bg = video.data[:, k].reshape(g.height_lines, g.width_pixels)
    return Scene(g, fps, bg, seed=seed)
