"""Metrics, trace extraction, coherence, bounds, and the phase experiment."""

import csv
import math

import numpy as np
import pytest

from nora import (
    ActivityModel,
    ConfigError,
    FrameGrid,
    PhaseDiagramResult,
    SamplingStrategy,
    Scene,
    ShapeError,
    TraceSet,
    VideoMatrix,
    coherence_mu_b,
    delta_psf,
    gaussian_psf_px,
    gen_scene,
    gen_traces,
    median_filter_3d,
    pals_traces,
    phase_diagram,
    psnr,
    read_traces_csv,
    render_clean,
    theorem_bounds,
    trace_correlations,
    write_phase_csv,
    write_traces_csv,
)


# -- PSNR --------------------------------------------------------------------


def test_psnr_known_value():
    # [DERIVED] peak 2, constant error 0.1: 10 log10(4 / 0.01)
    g = FrameGrid(4, 4)
    ref = VideoMatrix(g, np.full((16, 3), 2.0))
    est = VideoMatrix(g, np.full((16, 3), 2.1))
    assert abs(psnr(est, ref) - 10.0 * math.log10(4.0 / 0.01)) < 1e-9


def test_psnr_identical_is_infinite():
    g = FrameGrid(4, 4)
    v = VideoMatrix(g, np.random.default_rng(0).standard_normal((16, 3)))
    assert psnr(v, v) == math.inf


def test_psnr_accepts_arrays_and_checks_shapes():
    a = np.ones((5, 5))
    assert psnr(a, a) == math.inf
    with pytest.raises(ShapeError):
        psnr(np.ones((5, 5)), np.ones((5, 4)))


# -- median filter ------------------------------------------------------------


def median3d_oracle(stack, window):
    # brute force: edge-replicated pad, then an explicit median per voxel
    wh, ww, wt = window
    rh, rw, rt = wh // 2, ww // 2, wt // 2
    padded = np.pad(stack, ((rh, rh), (rw, rw), (rt, rt)), mode="edge")
    out = np.empty_like(stack)
    for i in range(stack.shape[0]):
        for j in range(stack.shape[1]):
            for t in range(stack.shape[2]):
                out[i, j, t] = np.median(
                    padded[i : i + wh, j : j + ww, t : t + wt]
                )
    return out


def test_median_filter_matches_brute_force():
    rng = np.random.default_rng(1)
    for window in [(3, 3, 3), (1, 3, 5), (5, 1, 1)]:
        h, w, t = int(rng.integers(3, 7)), int(rng.integers(3, 7)), int(rng.integers(3, 7))
        g = FrameGrid(h, w)
        video = VideoMatrix(g, rng.standard_normal((h * w, t)))
        ours = median_filter_3d(video, window)
        ref = median3d_oracle(video.to_stack(), window)
        assert np.array_equal(ours.to_stack(), ref)


def test_median_filter_kills_salt_and_pepper():
    g = FrameGrid(8, 8)
    data = np.ones((64, 5))
    data[13, 2] = 100.0  # isolated spike
    cleaned = median_filter_3d(VideoMatrix(g, data), (3, 3, 3))
    assert np.array_equal(cleaned.data, np.ones((64, 5)))


def test_median_filter_window_validation():
    g = FrameGrid(4, 4)
    v = VideoMatrix(g, np.zeros((16, 2)))
    with pytest.raises(ConfigError):
        median_filter_3d(v, (2, 3, 3))


# -- trace sets and PALS -------------------------------------------------------


def test_trace_set_validation():
    ts = TraceSet(np.zeros((2, 5)), (0, 1), frame_rate_hz=15.0)
    assert ts.n_cells == 2 and ts.frames == 5
    with pytest.raises(ShapeError):
        TraceSet(np.zeros(5), (0,))
    with pytest.raises(ShapeError):
        TraceSet(np.zeros((2, 5)), (0,))
    with pytest.raises(ShapeError):
        TraceSet(np.full((1, 3), np.nan), (0,))
    with pytest.raises(ConfigError):
        TraceSet(np.zeros((1, 3)), (0,), frame_rate_hz=0.0)


def test_pals_recovers_traces_exactly_on_clean_video():
    # [DERIVED] on a noiseless rendering the least-squares fit is exact
    g = FrameGrid(32, 32, frame_rate_hz=20.0)
    scene = gen_scene(g, 4, (2.0, 4.0), seed=3)
    traces = gen_traces(ActivityModel(spike_rate_hz=2.0, seed=4), 4, 40, 20.0)
    video = render_clean(scene, traces)
    est = pals_traces(video, scene)
    assert est.cell_ids == (0, 1, 2, 3)
    assert est.frame_rate_hz == 20.0
    assert np.allclose(est.traces, traces, atol=1e-8)


def test_pals_grid_mismatch():
    g = FrameGrid(16, 16)
    scene = gen_scene(g, 2, (2.0, 3.0), seed=0)
    other = VideoMatrix(FrameGrid(8, 8), np.zeros((64, 3)))
    with pytest.raises(ShapeError):
        pals_traces(other, scene)


def test_pals_ridge_fallback_warns():
    # an all-zero background makes the profile matrix rank deficient
    g = FrameGrid(16, 16)
    fp = np.zeros((1, 16, 16))
    fp[0, 8, 8] = 1.0
    scene = Scene(g, fp, np.zeros((16, 16)))
    video = VideoMatrix(g, np.random.default_rng(5).standard_normal((256, 4)))
    with pytest.warns(UserWarning, match="rank deficient"):
        est = pals_traces(video, scene)
    assert np.all(np.isfinite(est.traces))


# -- correlations --------------------------------------------------------------


def test_trace_correlations_affine_invariance():
    rng = np.random.default_rng(6)
    truth = TraceSet(rng.standard_normal((3, 50)), (0, 1, 2))
    est = TraceSet(2.5 * truth.traces + 1.0, (0, 1, 2))
    rep = trace_correlations(est, truth)
    assert all(abs(r - 1.0) < 1e-12 for r in rep.per_cell_r)
    assert rep.excluded_count == 0
    neg = TraceSet(-truth.traces, (0, 1, 2))
    rep_neg = trace_correlations(neg, truth)
    assert all(abs(r + 1.0) < 1e-12 for r in rep_neg.per_cell_r)


def test_trace_correlations_excludes_constant_traces():
    truth = TraceSet(np.array([[1.0, 2.0, 3.0], [1.0, 1.0, 1.0]]), (0, 1))
    est = TraceSet(np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]), (0, 1))
    rep = trace_correlations(est, truth)
    assert math.isnan(rep.per_cell_r[1])
    assert rep.excluded_count == 1
    assert sum(rep.hist_counts) == 1
    assert abs(rep.mean_r - 1.0) < 1e-12
    assert abs(rep.median_r - 1.0) < 1e-12
    as_dict = rep.to_dict()
    assert as_dict["per_cell_r"][1] is None


def test_trace_correlations_hand_value():
    # [DERIVED] r([1,2,3], [1,2,4]) = 0.98198... by the Pearson formula
    truth = TraceSet(np.array([[1.0, 2.0, 4.0]]), (0,))
    est = TraceSet(np.array([[1.0, 2.0, 3.0]]), (0,))
    rep = trace_correlations(est, truth)
    a = np.array([1.0, 2.0, 3.0]) - 2.0
    b = np.array([1.0, 2.0, 4.0]) - 7.0 / 3.0
    expected = float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))
    assert abs(rep.per_cell_r[0] - expected) < 1e-12


def test_trace_correlations_shape_check():
    with pytest.raises(ShapeError):
        trace_correlations(
            TraceSet(np.zeros((1, 3)), (0,)), TraceSet(np.zeros((1, 4)), (0,))
        )


# -- coherence ------------------------------------------------------------------


def coherence_oracle(video, psf, rank):
    # independent route: materialize every circularly shifted kernel b_n
    g = video.grid
    h, w = g.height_lines, g.width_pixels
    u, s, _ = np.linalg.svd(video.data, full_matrices=False)
    basis = u[:, :rank]
    kern = psf.kernel
    ks, kf = kern.shape
    ca, cb = ks // 2, kf // 2
    worst = 0.0
    for i in range(h):
        for j in range(w):
            b = np.zeros((h, w))
            for a in range(ks):
                for c in range(kf):
                    b[(i + a - ca) % h, (j + c - cb) % w] += kern[a, c]
            worst = max(worst, float(np.sum((basis.T @ b.reshape(-1)) ** 2)))
    return g.n_pixels / rank * worst


def test_coherence_matches_shifted_kernel_oracle():
    rng = np.random.default_rng(7)
    g = FrameGrid(6, 5)
    video = VideoMatrix(g, rng.standard_normal((30, 8)))
    for psf in [delta_psf(), gaussian_psf_px(1.0, 0.5, truncation_sigmas=2.0)]:
        for rank in (1, 3):
            ours = coherence_mu_b(video, psf, rank)
            ref = coherence_oracle(video, psf, rank)
            assert abs(ours - ref) < 1e-10 * max(ref, 1.0)


def test_coherence_delta_is_max_leverage():
    # [DERIVED] with the identity kernel, mu = (N/R) max_n ||U[n, :R]||^2
    rng = np.random.default_rng(8)
    g = FrameGrid(8, 4)
    video = VideoMatrix(g, rng.standard_normal((32, 10)))
    u, _, _ = np.linalg.svd(video.data, full_matrices=False)
    for rank in (1, 2, 5):
        leverage = np.sum(u[:, :rank] ** 2, axis=1).max()
        expected = g.n_pixels / rank * leverage
        assert abs(coherence_mu_b(video, delta_psf(), rank) - expected) < 1e-10


def test_coherence_energy_normalization():
    rng = np.random.default_rng(9)
    g = FrameGrid(8, 8)
    video = VideoMatrix(g, rng.standard_normal((64, 6)))
    psf = gaussian_psf_px(1.5, 0.0, truncation_sigmas=2.0)
    mu_sum = coherence_mu_b(video, psf, 2, normalization="sum")
    mu_energy = coherence_mu_b(video, psf, 2, normalization="energy")
    assert abs(mu_energy - mu_sum / psf.eta) < 1e-12
    with pytest.raises(ConfigError):
        coherence_mu_b(video, psf, 2, normalization="max")


def test_coherence_blur_lowers_flat_video_bound():
    # constant-in-space video: delta kernel gives mu = 1; blurring cannot
    # raise it because a unit-sum kernel averages the flat singular vector
    g = FrameGrid(8, 8)
    data = np.outer(np.ones(64), np.linspace(1.0, 2.0, 5))
    video = VideoMatrix(g, data)
    mu_delta = coherence_mu_b(video, delta_psf(), 1)
    assert abs(mu_delta - 1.0) < 1e-10
    mu_blur = coherence_mu_b(video, gaussian_psf_px(1.0, 1.0, truncation_sigmas=2.0), 1)
    assert abs(mu_blur - 1.0) < 1e-10


def test_coherence_rank_validation():
    g = FrameGrid(4, 4)
    video = VideoMatrix(g, np.outer(np.ones(16), np.ones(3)))  # rank 1
    with pytest.raises(ConfigError):
        coherence_mu_b(video, delta_psf(), 2)


# -- bound formulas ---------------------------------------------------------------


def test_theorem_bounds_formulas():
    # [TRIVIAL] direct arithmetic of both formulas
    n, t, m, r, mu2, eps = 1024, 128, 4096, 5, 2.0, 0.3
    req, err = theorem_bounds(n, t, m, r, mu2, eps, beta=1.5, c=2.0)
    assert abs(req - 2.0 * 1.5 * r * (t * mu2 + n) * math.log(n * t) ** 2) < 1e-9
    assert abs(err - 4.0 * math.sqrt(min(t, n) * (2.0 * n * t + m) / m) * eps) < 1e-9


def test_theorem_bounds_validation():
    with pytest.raises(ConfigError):
        theorem_bounds(0, 1, 1, 1, 1.0, 0.0)
    with pytest.raises(ConfigError):
        theorem_bounds(4, 4, 17, 1, 1.0, 0.0)  # more samples than entries
    with pytest.raises(ConfigError):
        theorem_bounds(4, 4, 4, 1, 1.0, -1.0)


# -- phase diagram -----------------------------------------------------------------


def make_result():
    frac = np.array([[0.0, 0.6, 1.0], [0.0, 0.2, 0.9]])
    return PhaseDiagramResult(
        r_list=(1, 2),
        lprime_list=(1, 2, 4),
        success_fraction=frac,
        mean_rel_error=np.full((2, 3), 0.5),
        failure_counts=np.zeros((2, 3), dtype=np.int64),
        success_threshold=0.05,
        trials=5,
        seed=0,
    )


def test_phase_result_boundary():
    res = make_result()
    assert res.boundary_lprime(1) == 4
    assert res.boundary_lprime(2) == 4
    assert res.boundary_lprime(1, level=0.5) == 2
    assert res.boundary_lprime(2, level=0.95) is None


def test_phase_result_rows():
    rows = make_result().to_rows()
    assert len(rows) == 6
    assert rows[0] == (1, 1, 0.0, 0.5)
    assert rows[5] == (2, 4, 0.9, 0.5)


def test_phase_diagram_small_run_properties():
    g = FrameGrid(8, 8)
    res = phase_diagram(
        g, 16, (1,), (2, 6), trials=2, seed=0, max_iters=80, rel_tol=1e-4
    )
    assert res.success_fraction.shape == (1, 2)
    assert np.all(res.success_fraction >= 0) and np.all(res.success_fraction <= 1)
    assert np.all(res.failure_counts == 0)
    # more lines never hurts on the same instances
    assert res.success_fraction[0, 1] >= res.success_fraction[0, 0]


def test_phase_diagram_deterministic_across_workers():
    g = FrameGrid(8, 8)
    kwargs = dict(trials=2, seed=3, max_iters=60, rel_tol=1e-4)
    a = phase_diagram(g, 12, (1, 2), (2, 4), workers=1, **kwargs)
    b = phase_diagram(g, 12, (1, 2), (2, 4), workers=4, **kwargs)
    assert np.array_equal(a.success_fraction, b.success_fraction)
    assert np.array_equal(a.mean_rel_error, b.mean_rel_error)


def test_phase_diagram_resume_and_callbacks():
    g = FrameGrid(8, 8)
    seen = []
    sentinel = {"success_fraction": 0.25, "mean_rel_error": 9.0, "failures": 3}
    res = phase_diagram(
        g,
        8,
        (1,),
        (2, 4),
        trials=1,
        seed=0,
        max_iters=40,
        completed={(1, 2): sentinel},
        on_cell=lambda r, lp, cell: seen.append((r, lp)),
    )
    # the completed cell is used verbatim and not recomputed
    assert res.success_fraction[0, 0] == 0.25
    assert res.failure_counts[0, 0] == 3
    assert seen == [(1, 4)]


def test_phase_diagram_validation():
    g = FrameGrid(8, 8)
    with pytest.raises(ConfigError):
        phase_diagram(g, 8, (1,), (2,), trials=0)
    with pytest.raises(ConfigError):
        phase_diagram(g, 8, (), (2,), trials=1)
    with pytest.raises(ConfigError):
        phase_diagram(g, 8, (1,), (9,), trials=1)


# -- CSV round trips -----------------------------------------------------------------


def test_traces_csv_round_trip(tmp_path):
    rng = np.random.default_rng(10)
    ts = TraceSet(rng.standard_normal((3, 7)), (0, 1, 2), frame_rate_hz=45.0)
    path = tmp_path / "traces.csv"
    write_traces_csv(ts, path)
    back = read_traces_csv(path, frame_rate_hz=45.0)
    assert back.cell_ids == (0, 1, 2)
    assert back.frame_rate_hz == 45.0
    # repr round trip preserves every float bit
    assert np.array_equal(back.traces, ts.traces)


def test_traces_csv_rejects_other_files(tmp_path):
    path = tmp_path / "junk.csv"
    path.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(ConfigError):
        read_traces_csv(path)


def test_phase_csv_rows(tmp_path):
    res = make_result()
    path = tmp_path / "phase.csv"
    write_phase_csv(res, path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["R", "Lprime", "success_fraction", "mean_rel_error"]
    assert len(rows) == 7
    assert rows[1] == ["1", "1", "0.0", "0.5"]
