"""Forward/adjoint operators against dense-matrix and scipy oracles."""

import math

import numpy as np
import pytest
import scipy.ndimage

from nora import (
    ConfigError,
    ForwardModel,
    FrameGrid,
    MeasurementSet,
    SamplingStrategy,
    ShapeError,
    VideoMatrix,
    adjoint_apply,
    blur_frame,
    correlate_frame,
    delta_psf,
    estimate_operator_norm,
    forward_apply,
    gaussian_psf_px,
    generate_plan,
    make_gaussian_psf,
)
from nora.operators import FWHM_TO_SIGMA, Psf


def dense_blur_matrix(grid, psf):
    # independent route: B materialized entrywise from the kernel, using the
    # circular-convolution index identity out[i,j] = sum_k k[a,b] x[i-a+ca, j-b+cb]
    h, w = grid.height_lines, grid.width_pixels
    kern = psf.kernel
    ks, kf = kern.shape
    ca, cb = ks // 2, kf // 2
    mat = np.zeros((grid.n_pixels, grid.n_pixels))
    for i in range(h):
        for j in range(w):
            for p in range(h):
                for q in range(w):
                    a = (i - p + ca) % h
                    b = (j - q + cb) % w
                    if a < ks and b < kf:
                        mat[i * w + j, p * w + q] += kern[a, b]
    return mat


def dense_forward_matrix(model):
    # A for frame t = rows of B belonging to that frame's sampled lines
    grid = model.grid
    w = grid.width_pixels
    bmat = dense_blur_matrix(grid, model.psf)
    mats = []
    for t in range(model.plan.frames):
        rows = np.concatenate(
            [np.arange(line * w, (line + 1) * w) for line in model.plan.line_indices[t]]
        )
        mats.append(bmat[rows])
    return mats


# -- PSF construction -------------------------------------------------------


def test_gaussian_psf_px_properties():
    psf = gaussian_psf_px(1.5, 0.5, truncation_sigmas=4.0)
    kern = psf.kernel
    assert kern.shape == (2 * math.ceil(4.0 * 1.5) + 1, 2 * math.ceil(4.0 * 0.5) + 1)
    assert abs(kern.sum() - 1.0) < 1e-12
    assert np.array_equal(kern, kern[::-1, ::-1])
    # separable Gaussian: ratio along the slow axis follows exp(-d^2/(2 sigma^2))
    ca = kern.shape[0] // 2
    cb = kern.shape[1] // 2
    ratio = kern[ca + 1, cb] / kern[ca, cb]
    assert abs(ratio - math.exp(-0.5 / 1.5**2)) < 1e-12


def test_gaussian_psf_zero_sigma_is_delta():
    assert np.array_equal(gaussian_psf_px(0.0, 0.0).kernel, [[1.0]])
    slow_only = gaussian_psf_px(1.0, 0.0)
    assert slow_only.kernel.shape[1] == 1


def test_make_gaussian_psf_fwhm_conversion():
    # [DERIVED] sigma = FWHM / (2 sqrt(2 ln 2)) / pitch
    fwhm = 3.0
    pitch = 0.8
    psf = make_gaussian_psf(fwhm_fast_um=0.0, fwhm_slow_um=fwhm, pixel_pitch_um=pitch)
    expected_sigma = fwhm / (2.0 * math.sqrt(2.0 * math.log(2.0))) / pitch
    assert abs(psf.sigma_slow_px - expected_sigma) < 1e-12
    assert abs(FWHM_TO_SIGMA - 0.42466090014400953) < 1e-15
    ref = gaussian_psf_px(expected_sigma, 0.0)
    assert np.array_equal(psf.kernel, ref.kernel)
    # the conversion makes the continuous profile halve at FWHM/2 exactly
    half_width_px = fwhm / pitch / 2.0
    assert abs(math.exp(-0.5 * (half_width_px / expected_sigma) ** 2) - 0.5) < 1e-12


def test_psf_validation():
    with pytest.raises(ShapeError):
        Psf(np.ones((2, 3)), 0.0, 0.0)  # even dimension
    with pytest.raises(ShapeError):
        Psf(-np.ones((3, 3)), 0.0, 0.0)
    asym = np.zeros((3, 3))
    asym[0, 1] = 1.0
    with pytest.raises(ShapeError):
        Psf(asym, 0.0, 0.0)
    with pytest.raises(ShapeError):
        Psf(np.zeros((3, 3)), 0.0, 0.0)
    with pytest.raises(ConfigError):
        gaussian_psf_px(-1.0, 0.0)
    with pytest.raises(ConfigError):
        make_gaussian_psf(1.0, 1.0, pixel_pitch_um=0.0)


def test_psf_eta_is_kernel_energy():
    psf = gaussian_psf_px(1.0, 1.0)
    assert abs(psf.eta - float(np.sum(psf.kernel**2))) < 1e-15
    assert abs(delta_psf().eta - 1.0) < 1e-15


# -- blur and correlate -----------------------------------------------------


def test_blur_matches_scipy_wrap_convolution():
    # independent route: scipy.ndimage circular convolution
    rng = np.random.default_rng(0)
    for trial in range(8):
        h = int(rng.integers(5, 12))
        w = int(rng.integers(5, 12))
        sigma_s = float(rng.uniform(0.0, 1.2))
        sigma_f = float(rng.uniform(0.0, 1.2))
        psf = gaussian_psf_px(sigma_s, sigma_f, truncation_sigmas=2.0)
        if psf.kernel.shape[0] > h or psf.kernel.shape[1] > w:
            continue
        frame = rng.standard_normal((h, w))
        ours = blur_frame(frame, psf)
        ref = scipy.ndimage.convolve(frame, psf.kernel, mode="wrap")
        assert np.allclose(ours, ref, atol=1e-12)
        ours_t = correlate_frame(frame, psf)
        ref_t = scipy.ndimage.correlate(frame, psf.kernel, mode="wrap")
        assert np.allclose(ours_t, ref_t, atol=1e-12)


def test_blur_is_shift_equivariant():
    # circular boundary handling makes B commute with cyclic shifts
    rng = np.random.default_rng(1)
    psf = gaussian_psf_px(1.5, 0.5, truncation_sigmas=3.0)
    frame = rng.standard_normal((16, 16))
    for shift in [(1, 0), (0, 3), (7, 11)]:
        lhs = blur_frame(np.roll(frame, shift, axis=(0, 1)), psf)
        rhs = np.roll(blur_frame(frame, psf), shift, axis=(0, 1))
        assert np.allclose(lhs, rhs, atol=1e-12)


def test_delta_psf_blur_is_identity():
    rng = np.random.default_rng(2)
    frame = rng.standard_normal((6, 7))
    assert np.array_equal(blur_frame(frame, delta_psf()), frame)


# -- sampling plans ---------------------------------------------------------


def test_rotating_plan_is_deterministic_and_covers():
    g = FrameGrid(32, 8)
    for lp in (1, 2, 3, 5, 8, 32):
        plan = generate_plan(g, 64, lp, SamplingStrategy.ROTATING_EVENLY_SPACED, seed=0)
        other = generate_plan(
            g, 64, lp, SamplingStrategy.ROTATING_EVENLY_SPACED, seed=123
        )
        # seed does not enter the deterministic schedule
        assert np.array_equal(plan.line_indices, other.line_indices)
        period = math.ceil(32 / lp)
        for start in range(0, 64 - period + 1, period):
            window = plan.line_indices[start : start + period]
            assert set(window.ravel()) == set(range(32))


def test_rotating_plan_formula():
    # [DERIVED] row t = sorted((t mod ceil(H/L') + floor(j H / L')) mod H)
    g = FrameGrid(10, 4)
    lp = 4
    plan = generate_plan(g, 7, lp, SamplingStrategy.ROTATING_EVENLY_SPACED, seed=0)
    offsets = np.floor(np.arange(lp) * 10 / lp).astype(int)
    period = math.ceil(10 / lp)
    for t in range(7):
        expected = np.sort(((t % period) + offsets) % 10)
        assert np.array_equal(plan.line_indices[t], expected)


def test_uniform_plan_properties():
    g = FrameGrid(16, 4)
    rng = np.random.default_rng(5)
    for trial in range(10):
        seed = int(rng.integers(0, 2**31))
        lp = int(rng.integers(1, 9))
        plan = generate_plan(g, 30, lp, SamplingStrategy.UNIFORM_RANDOM, seed=seed)
        idx = plan.line_indices
        assert idx.shape == (30, lp)
        assert idx.min() >= 0 and idx.max() < 16
        for t in range(30):
            assert len(set(idx[t])) == lp
            assert np.all(np.diff(idx[t]) > 0)
            if t and lp < 16:
                assert not np.array_equal(idx[t], idx[t - 1])
        again = generate_plan(g, 30, lp, SamplingStrategy.UNIFORM_RANDOM, seed=seed)
        assert plan == again


def test_uniform_plans_differ_by_seed():
    g = FrameGrid(16, 4)
    a = generate_plan(g, 20, 4, SamplingStrategy.UNIFORM_RANDOM, seed=0)
    b = generate_plan(g, 20, 4, SamplingStrategy.UNIFORM_RANDOM, seed=1)
    assert not np.array_equal(a.line_indices, b.line_indices)


def test_generate_plan_validation():
    g = FrameGrid(8, 4)
    with pytest.raises(ConfigError):
        generate_plan(g, 4, 0, SamplingStrategy.UNIFORM_RANDOM, seed=0)
    with pytest.raises(ConfigError):
        generate_plan(g, 4, 9, SamplingStrategy.UNIFORM_RANDOM, seed=0)


# -- forward / adjoint ------------------------------------------------------


def test_forward_matches_dense_oracle():
    rng = np.random.default_rng(6)
    g = FrameGrid(6, 5)
    for strategy in SamplingStrategy:
        plan = generate_plan(g, 3, 2, strategy, seed=7)
        model = ForwardModel(gaussian_psf_px(1.0, 0.6, truncation_sigmas=2.0), plan, g)
        mats = dense_forward_matrix(model)
        x = rng.standard_normal((30, 3))
        y = forward_apply(VideoMatrix(g, x), model)
        for t in range(3):
            assert np.allclose(y.data[:, t], mats[t] @ x[:, t], atol=1e-12)


def test_adjoint_matches_dense_oracle():
    rng = np.random.default_rng(7)
    g = FrameGrid(6, 5)
    plan = generate_plan(g, 3, 2, SamplingStrategy.UNIFORM_RANDOM, seed=8)
    model = ForwardModel(gaussian_psf_px(0.8, 0.8, truncation_sigmas=2.0), plan, g)
    mats = dense_forward_matrix(model)
    u = rng.standard_normal((10, 3))
    xt = adjoint_apply(MeasurementSet(plan, u), model)
    for t in range(3):
        assert np.allclose(xt.data[:, t], mats[t].T @ u[:, t], atol=1e-12)


def test_adjoint_identity_random():
    # <A x, u> == <x, A^T u> over seeded random draws
    rng = np.random.default_rng(8)
    for trial in range(10):
        h = int(rng.integers(4, 12))
        w = int(rng.integers(4, 12))
        frames = int(rng.integers(1, 6))
        lp = int(rng.integers(1, h + 1))
        g = FrameGrid(h, w)
        strategy = (
            SamplingStrategy.UNIFORM_RANDOM
            if trial % 2
            else SamplingStrategy.ROTATING_EVENLY_SPACED
        )
        plan = generate_plan(g, frames, lp, strategy, seed=trial)
        sigma = float(rng.uniform(0.0, 1.0))
        psf = gaussian_psf_px(sigma, sigma / 2, truncation_sigmas=2.0)
        if psf.kernel.shape[0] > h or psf.kernel.shape[1] > w:
            psf = delta_psf()
        model = ForwardModel(psf, plan, g)
        x = rng.standard_normal((g.n_pixels, frames))
        u = rng.standard_normal((plan.samples_per_frame, frames))
        ax = forward_apply(VideoMatrix(g, x), model).data
        atu = adjoint_apply(MeasurementSet(plan, u), model).data
        lhs = float(np.vdot(ax, u))
        rhs = float(np.vdot(x, atu))
        assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), abs(rhs), 1.0)


def test_forward_gather_ordering():
    # output column stacks the W pixels of each sampled line in ascending order
    g = FrameGrid(5, 3)
    plan = generate_plan(g, 2, 2, SamplingStrategy.UNIFORM_RANDOM, seed=9)
    model = ForwardModel(delta_psf(), plan, g)
    stack = np.zeros((5, 3, 2))
    for line in range(5):
        stack[line] = line + np.arange(3)[:, None] / 10.0
    video = VideoMatrix(g, stack.reshape(15, 2))
    y = forward_apply(video, model)
    for t in range(2):
        expected = np.concatenate(
            [line + np.arange(3) / 10.0 for line in plan.line_indices[t]]
        )
        assert np.allclose(y.data[:, t], expected, atol=1e-12)


def test_full_sampling_delta_psf_is_identity():
    g = FrameGrid(6, 4)
    plan = generate_plan(g, 3, 6, SamplingStrategy.ROTATING_EVENLY_SPACED, seed=0)
    model = ForwardModel(delta_psf(), plan, g)
    rng = np.random.default_rng(10)
    x = rng.standard_normal((24, 3))
    y = forward_apply(VideoMatrix(g, x), model)
    assert np.array_equal(y.data, x)


def test_geometry_mismatches_raise():
    g = FrameGrid(6, 5)
    other = FrameGrid(6, 6)
    plan = generate_plan(g, 3, 2, SamplingStrategy.UNIFORM_RANDOM, seed=0)
    model = ForwardModel(delta_psf(), plan, g)
    with pytest.raises(ShapeError):
        ForwardModel(delta_psf(), plan, other)
    with pytest.raises(ShapeError):
        forward_apply(VideoMatrix(other, np.zeros((36, 3))), model)
    with pytest.raises(ShapeError):
        forward_apply(VideoMatrix(g, np.zeros((30, 4))), model)
    other_plan = generate_plan(g, 3, 2, SamplingStrategy.UNIFORM_RANDOM, seed=1)
    with pytest.raises(ShapeError):
        adjoint_apply(MeasurementSet(other_plan, np.zeros((10, 3))), model)
    big = gaussian_psf_px(4.0, 4.0, truncation_sigmas=4.0)  # 33x33 kernel
    with pytest.raises(ConfigError):
        ForwardModel(big, plan, g)


# -- operator norm ----------------------------------------------------------


def test_operator_norm_against_dense_svd():
    rng = np.random.default_rng(11)
    g = FrameGrid(6, 5)
    for trial in range(4):
        plan = generate_plan(g, 3, 2, SamplingStrategy.UNIFORM_RANDOM, seed=trial)
        model = ForwardModel(gaussian_psf_px(0.9, 0.4, truncation_sigmas=2.0), plan, g)
        mats = dense_forward_matrix(model)
        # per-frame block diagonal: ||A||^2 = max_t sigma_1(A_t)^2
        true_sq = max(np.linalg.norm(m, 2) ** 2 for m in mats)
        est = estimate_operator_norm(model, iterations=300, seed=trial)
        assert est <= true_sq * (1.0 + 1e-9)
        assert est >= true_sq * 0.98


def test_operator_norm_monotone_in_iterations():
    g = FrameGrid(16, 16)
    plan = generate_plan(g, 4, 3, SamplingStrategy.UNIFORM_RANDOM, seed=0)
    model = ForwardModel(gaussian_psf_px(1.5, 0.0), plan, g)
    estimates = [estimate_operator_norm(model, iterations=k, seed=0) for k in (1, 5, 25, 100)]
    for lo, hi in zip(estimates, estimates[1:]):
        assert hi >= lo - 1e-12


def test_full_sampling_delta_norm_is_one():
    g = FrameGrid(6, 4)
    plan = generate_plan(g, 3, 6, SamplingStrategy.ROTATING_EVENLY_SPACED, seed=0)
    model = ForwardModel(delta_psf(), plan, g)
    assert abs(estimate_operator_norm(model, iterations=10, seed=0) - 1.0) < 1e-12


def test_operator_norm_validation():
    g = FrameGrid(6, 4)
    plan = generate_plan(g, 2, 2, SamplingStrategy.UNIFORM_RANDOM, seed=0)
    model = ForwardModel(delta_psf(), plan, g)
    with pytest.raises(ConfigError):
        estimate_operator_norm(model, iterations=0)
