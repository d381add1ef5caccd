"""The linear acquisition model A(X) = S(B X) and its exact adjoint.

B is circular convolution of each frame with an elongated Gaussian kernel;
S gathers the blurred values on each frame's sampled slow-scan lines
(sample-after-blur).  Circular boundaries keep B normal, so its spectrum is
the 2D DFT of the kernel and the adjoint is plain correlation.
"""

import math
from dataclasses import dataclass

import numpy as np

from .backend import get_kernels
from .core import (
    FrameGrid,
    MeasurementSet,
    SamplingPlan,
    SamplingStrategy,
    VideoMatrix,
)
from .errors import ConfigError, ShapeError

FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))


@dataclass(frozen=True, eq=False)
class Psf:
    """2D blur kernel, slow-scan axis first; eta is its squared 2-norm."""

    kernel: np.ndarray  # (k_slow, k_fast), odd dims, nonneg
    sigma_slow_px: float
    sigma_fast_px: float
    normalized: bool = True

    def __eq__(self, other):
        if not isinstance(other, Psf):
            return NotImplemented
        return (
            np.array_equal(self.kernel, other.kernel)
            and self.sigma_slow_px == other.sigma_slow_px
            and self.sigma_fast_px == other.sigma_fast_px
            and self.normalized == other.normalized
        )

    def __post_init__(self):
        kern = np.asarray(self.kernel, dtype=np.float64)
        if kern.ndim != 2 or kern.shape[0] % 2 == 0 or kern.shape[1] % 2 == 0:
            raise ShapeError("kernel must be 2D with odd dimensions")
        if np.any(kern < 0):
            raise ShapeError("kernel entries must be nonnegative")
        if not np.allclose(kern, kern[::-1, ::-1]):
            raise ShapeError("kernel must be symmetric under 180-degree rotation")
        if not np.any(kern > 0):
            raise ShapeError("kernel must have positive energy")
        kern = np.ascontiguousarray(kern)
        kern.flags.writeable = False
        object.__setattr__(self, "kernel", kern)

    @property
    def eta(self):
        return float(np.sum(self.kernel**2))


def _gaussian_taps(sigma_px, truncation_sigmas):
    if sigma_px <= 0:
        return np.array([1.0])
    radius = int(math.ceil(truncation_sigmas * sigma_px))
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    return np.exp(-0.5 * (offsets / sigma_px) ** 2)


def gaussian_psf_px(sigma_slow_px, sigma_fast_px, truncation_sigmas=4.0):
    """Unit-sum separable Gaussian kernel from per-axis sigmas in pixels.

    A sigma of 0 degenerates that axis to a delta, so (0, 0) is the identity
    blur.
    """
    if sigma_slow_px < 0 or sigma_fast_px < 0 or truncation_sigmas <= 0:
        raise ConfigError("sigmas must be >= 0 and truncation > 0")
    kern = np.outer(
        _gaussian_taps(sigma_slow_px, truncation_sigmas),
        _gaussian_taps(sigma_fast_px, truncation_sigmas),
    )
    kern /= kern.sum()
    return Psf(kern, sigma_slow_px=float(sigma_slow_px), sigma_fast_px=float(sigma_fast_px))


def make_gaussian_psf(fwhm_fast_um, fwhm_slow_um, pixel_pitch_um, truncation_sigmas=4.0):
    """PSF from FWHM widths in microns: sigma = FWHM / (2*sqrt(2 ln 2)) per axis."""
    if fwhm_fast_um < 0 or fwhm_slow_um < 0 or pixel_pitch_um <= 0:
        raise ConfigError("FWHM must be >= 0 and pixel pitch positive")
    return gaussian_psf_px(
        sigma_slow_px=fwhm_slow_um * FWHM_TO_SIGMA / pixel_pitch_um,
        sigma_fast_px=fwhm_fast_um * FWHM_TO_SIGMA / pixel_pitch_um,
        truncation_sigmas=truncation_sigmas,
    )


def delta_psf():
    """1x1 identity kernel."""
    return Psf(np.array([[1.0]]), sigma_slow_px=0.0, sigma_fast_px=0.0)


@dataclass(frozen=True, eq=False)
class ForwardModel:
    """Blur-then-sample acquisition operator for one plan."""

    psf: Psf
    plan: SamplingPlan
    grid: FrameGrid

    def __eq__(self, other):
        if not isinstance(other, ForwardModel):
            return NotImplemented
        return (
            self.psf == other.psf
            and self.plan == other.plan
            and self.grid == other.grid
        )

    def __post_init__(self):
        if self.plan.grid != self.grid:
            raise ShapeError("plan grid does not match model grid")
        ks, kf = self.psf.kernel.shape
        if ks > self.grid.height_lines or kf > self.grid.width_pixels:
            raise ConfigError(
                f"kernel {ks}x{kf} does not fit the "
                f"{self.grid.height_lines}x{self.grid.width_pixels} frame"
            )


def blur_frame(frame, psf):
    """Circular 2D convolution of one frame with the kernel."""
    frame = np.ascontiguousarray(frame, dtype=np.float64)
    out = get_kernels().conv2_circ(frame[:, :, None], psf.kernel)
    return out[:, :, 0]


def correlate_frame(frame, psf):
    """Adjoint of blur_frame (circular correlation)."""
    frame = np.ascontiguousarray(frame, dtype=np.float64)
    out = get_kernels().corr2_circ(frame[:, :, None], psf.kernel)
    return out[:, :, 0]


def forward_apply(video, model):
    """Apply A: blur each frame, then gather its sampled lines.

    Output column t stacks the W pixels of each sampled line in ascending
    line order.
    """
    if video.grid != model.grid:
        raise ShapeError("video grid does not match model grid")
    if video.frames != model.plan.frames:
        raise ShapeError("video frame count does not match plan")
    kern = get_kernels()
    stack = np.ascontiguousarray(video.to_stack())
    blurred = kern.conv2_circ(stack, model.psf.kernel)
    y = kern.gather_lines(blurred, model.plan.line_indices)
    return MeasurementSet(model.plan, y)


def adjoint_apply(measurements, model):
    """Apply A^T: scatter measured lines into zero frames, then correlate."""
    if measurements.plan != model.plan:
        raise ShapeError("measurement plan does not match model plan")
    kern = get_kernels()
    scattered = kern.scatter_lines(
        np.ascontiguousarray(measurements.data),
        model.plan.line_indices,
        model.grid.height_lines,
    )
    stack = kern.corr2_circ(scattered, model.psf.kernel)
    return VideoMatrix(model.grid, stack.reshape(model.grid.n_pixels, -1))


def generate_plan(grid, frames, lines_per_frame, strategy, seed):
    """Deterministic per-frame line sets; pure function of the arguments.

    UniformRandom draws L' distinct lines per frame (redrawing any frame
    identical to its predecessor while L' < H).  RotatingEvenlySpaced uses
    evenly spaced lines (o_t + floor(j*H/L')) mod H with o_t = t mod
    ceil(H/L'), which covers every line within ceil(H/L') frames.
    """
    height = grid.height_lines
    if not 1 <= lines_per_frame <= height:
        raise ConfigError(f"lines_per_frame must be in [1, {height}]")
    strategy = SamplingStrategy(strategy)

    if strategy is SamplingStrategy.ROTATING_EVENLY_SPACED:
        offsets = (np.floor(np.arange(lines_per_frame) * height / lines_per_frame)).astype(
            np.int64
        )
        period = math.ceil(height / lines_per_frame)
        idx = np.empty((frames, lines_per_frame), dtype=np.int64)
        for t in range(frames):
            idx[t] = np.sort(((t % period) + offsets) % height)
    else:
        rng = np.random.default_rng(seed)
        idx = np.empty((frames, lines_per_frame), dtype=np.int64)
        prev = None
        for t in range(frames):
            row = np.sort(rng.choice(height, size=lines_per_frame, replace=False))
            while (
                lines_per_frame < height
                and prev is not None
                and np.array_equal(row, prev)
            ):
                row = np.sort(rng.choice(height, size=lines_per_frame, replace=False))
            idx[t] = row
            prev = row
    return SamplingPlan(grid, lines_per_frame, idx, strategy, seed)


def estimate_operator_norm(model, iterations=50, seed=0):
    """Power-iteration estimate of ||A||^2 (largest eigenvalue of A^T A).

    Returns the last Rayleigh quotient, which is nondecreasing in the
    iteration count and never exceeds the true value.
    """
    if iterations < 1:
        raise ConfigError("iterations must be >= 1")
    rng = np.random.default_rng(seed)
    grid = model.grid
    x = rng.standard_normal((grid.n_pixels, model.plan.frames))
    x /= np.linalg.norm(x)
    estimate = 0.0
    for _ in range(iterations):
        v = VideoMatrix(grid, x)
        w = adjoint_apply(forward_apply(v, model), model).data
        estimate = float(np.vdot(x, w))
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        x = w / norm
    return estimate
