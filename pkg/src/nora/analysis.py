"""Evaluation and theory validation.

Image metrics (PSNR, 3D median filter), profile-assisted least-squares trace
extraction with Pearson scoring, the left-singular-subspace coherence that
drives the sample-complexity bound, the bound formulas themselves, and the
empirical phase-transition experiment over (rank, lines-per-frame) cells.
"""

import csv
import io
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .backend import get_kernels
from .core import SamplingStrategy, VideoMatrix, _freeze, atomic_write_bytes
from .errors import ConfigError, NoraError, ShapeError
from .operators import (
    ForwardModel,
    delta_psf,
    forward_apply,
    generate_plan,
)
from .solver import MODE_LAGRANGIAN, SolverConfig, solve_lagrangian

RANK_EPS = 1e-8


@dataclass(frozen=True, eq=False)
class TraceSet:
    """K activity traces over T frames with their cell ids."""

    traces: np.ndarray  # (K, T)
    cell_ids: tuple
    frame_rate_hz: float = 30.0

    def __post_init__(self):
        tr = np.asarray(self.traces, dtype=np.float64)
        if tr.ndim != 2:
            raise ShapeError("traces must be a (K, T) matrix")
        if not np.all(np.isfinite(tr)):
            raise ShapeError("traces must be finite")
        ids = tuple(self.cell_ids)
        if len(ids) != tr.shape[0]:
            raise ShapeError("cell_ids length must match the trace count")
        if self.frame_rate_hz <= 0:
            raise ConfigError("frame_rate_hz must be positive")
        object.__setattr__(self, "traces", _freeze(tr))
        object.__setattr__(self, "cell_ids", ids)

    @property
    def n_cells(self):
        return self.traces.shape[0]

    @property
    def frames(self):
        return self.traces.shape[1]


def _as_array(x):
    return x.data if isinstance(x, VideoMatrix) else np.asarray(x, dtype=np.float64)


def psnr(estimate, reference):
    """10*log10(peak^2 / MSE) with the peak taken from the reference.

    Identical inputs return math.inf.
    """
    est = _as_array(estimate)
    ref = _as_array(reference)
    if est.shape != ref.shape:
        raise ShapeError(f"shape mismatch: {est.shape} vs {ref.shape}")
    mse = float(np.mean((est - ref) ** 2))
    if mse == 0.0:
        return math.inf
    peak = float(ref.max())
    return 10.0 * math.log10(peak**2 / mse)


def median_filter_3d(video, window=(3, 3, 3)):
    """Per-voxel median over an edge-replicated (line, pixel, frame) window."""
    wh, ww, wt = window
    if wh % 2 == 0 or ww % 2 == 0 or wt % 2 == 0:
        raise ConfigError(f"window dims must be odd, got {window}")
    if wh < 1 or ww < 1 or wt < 1:
        raise ConfigError("window dims must be >= 1")
    stack = np.ascontiguousarray(video.to_stack())
    out = get_kernels().median3d(stack, wh, ww, wt)
    return VideoMatrix(video.grid, out.reshape(video.grid.n_pixels, video.frames))


def pals_traces(video, scene):
    """Per-frame least squares against the scene's spatial profiles.

    Solves x_t ~ P v_t where P stacks the vectorized footprints and the
    background map; returns the K footprint coefficients as a TraceSet.
    A rank-deficient profile matrix falls back to a ridge solve (1e-8 times
    the Gram trace) with a warning.
    """
    if scene.grid != video.grid:
        raise ShapeError("scene grid does not match the video grid")
    n = scene.grid.n_pixels
    k = scene.n_cells
    profile = np.concatenate(
        [scene.footprints.reshape(k, n).T, scene.background.reshape(n, 1)], axis=1
    )
    gram = profile.T @ profile
    rhs = profile.T @ video.data
    try:
        coef = np.linalg.solve(gram, rhs)
        if not np.all(np.isfinite(coef)):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        warnings.warn(
            "profile matrix is rank deficient; using a ridge-regularized solve",
            stacklevel=2,
        )
        ridge = 1e-8 * np.trace(gram)
        coef = np.linalg.solve(gram + ridge * np.eye(k + 1), rhs)
    return TraceSet(coef[:k], tuple(range(k)), frame_rate_hz=scene.grid.frame_rate_hz)


@dataclass(frozen=True)
class CorrelationReport:
    """Per-cell Pearson r against ground truth, with histogram and exclusions."""

    per_cell_r: tuple  # math.nan marks cells with a constant trace
    excluded_count: int
    hist_counts: tuple
    hist_edges: tuple
    mean_r: float
    median_r: float

    def to_dict(self):
        return {
            "per_cell_r": [None if math.isnan(r) else r for r in self.per_cell_r],
            "excluded_count": self.excluded_count,
            "hist_counts": list(self.hist_counts),
            "hist_edges": list(self.hist_edges),
            "mean_r": self.mean_r,
            "median_r": self.median_r,
        }


def trace_correlations(estimated, truth, hist_bins=20):
    """Pearson r per cell; constant traces are excluded from the histogram."""
    est, tru = estimated.traces, truth.traces
    if est.shape != tru.shape:
        raise ShapeError(f"trace shape mismatch: {est.shape} vs {tru.shape}")
    rs = []
    for k in range(est.shape[0]):
        a = est[k] - est[k].mean()
        b = tru[k] - tru[k].mean()
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na == 0 or nb == 0:
            rs.append(math.nan)
        else:
            rs.append(float(np.dot(a, b) / (na * nb)))
    valid = [r for r in rs if not math.isnan(r)]
    counts, edges = np.histogram(valid, bins=hist_bins, range=(-1.0, 1.0))
    return CorrelationReport(
        per_cell_r=tuple(rs),
        excluded_count=len(rs) - len(valid),
        hist_counts=tuple(int(c) for c in counts),
        hist_edges=tuple(float(e) for e in edges),
        mean_r=float(np.mean(valid)) if valid else math.nan,
        median_r=float(np.median(valid)) if valid else math.nan,
    )


def coherence_mu_b(video, psf, rank, normalization="sum"):
    """(N/R) * max_n ||U^T b_n||^2 for the top-rank left singular subspace.

    b_n is the kernel circularly centered at pixel n.  The max over all N
    centers is evaluated by circularly correlating each singular-vector
    image with the kernel, never materializing the N shifts.  With
    normalization "sum" b_n is the unit-sum kernel as given; "energy"
    rescales it to unit 2-norm (divide by psf.eta).
    """
    if normalization not in ("sum", "energy"):
        raise ConfigError("normalization must be 'sum' or 'energy'")
    x = video.data
    u, s, _ = np.linalg.svd(x, full_matrices=False)
    numerical_rank = int(np.sum(s > RANK_EPS * s[0])) if s.size else 0
    if not 1 <= rank <= numerical_rank:
        raise ConfigError(
            f"rank must be in [1, numerical rank {numerical_rank}], got {rank}"
        )
    g = video.grid
    corr = get_kernels().corr2_circ
    images = np.ascontiguousarray(
        u[:, :rank].reshape(g.height_lines, g.width_pixels, rank)
    )
    responses = corr(images, psf.kernel)
    energy = np.sum(responses**2, axis=2)
    mu = float(g.n_pixels / rank * energy.max())
    if normalization == "energy":
        mu /= psf.eta
    return mu


def theorem_bounds(n_pixels, frames, samples, rank, mu_b2, eps_noise, beta=1.0, c=1.0):
    """Sample requirement C*beta*R*(T*mu^2+N)*log^2(NT) and the recovery
    error bound 4*sqrt(min(T,N)*(2NT+M)/M)*eps."""
    if min(n_pixels, frames, samples, rank) <= 0 or mu_b2 <= 0 or eps_noise < 0:
        raise ConfigError("all bound inputs must be positive (eps_noise >= 0)")
    if samples > n_pixels * frames:
        raise ConfigError("samples cannot exceed the number of matrix entries")
    nt = n_pixels * frames
    requirement = c * beta * rank * (frames * mu_b2 + n_pixels) * math.log(nt) ** 2
    error_bound = 4.0 * math.sqrt(
        min(frames, n_pixels) * (2.0 * nt + samples) / samples
    ) * eps_noise
    return requirement, error_bound


@dataclass(frozen=True)
class PhaseDiagramResult:
    """Success statistics over a (rank, lines-per-frame) grid of trials."""

    r_list: tuple
    lprime_list: tuple
    success_fraction: np.ndarray  # (len(r_list), len(lprime_list))
    mean_rel_error: np.ndarray
    failure_counts: np.ndarray  # solver errors per cell, int
    success_threshold: float
    trials: int
    seed: int

    def boundary_lprime(self, rank, level=0.9):
        """Smallest L' whose success fraction reaches level, or None."""
        i = self.r_list.index(rank)
        for j, lp in enumerate(self.lprime_list):
            if self.success_fraction[i, j] >= level:
                return lp
        return None

    def to_rows(self):
        rows = []
        for i, r in enumerate(self.r_list):
            for j, lp in enumerate(self.lprime_list):
                rows.append(
                    (r, lp, float(self.success_fraction[i, j]),
                     float(self.mean_rel_error[i, j]))
                )
        return rows


def _phase_cell_seed(seed, rank, lprime, trial):
    # stable per-task stream; ordering of cell execution cannot matter
    return [seed, rank, lprime, trial]


def _phase_instance(grid, frames, rank, rng):
    left = rng.standard_normal((grid.n_pixels, rank))
    right = rng.standard_normal((rank, frames))
    return VideoMatrix(grid, left @ right)


def phase_diagram(
    grid,
    frames,
    r_list,
    lprime_list,
    trials,
    success_threshold=0.05,
    psf=None,
    strategy=SamplingStrategy.UNIFORM_RANDOM,
    seed=0,
    lam_factor=1e-3,
    max_iters=400,
    rel_tol=1e-5,
    completed=None,
    on_cell=None,
    workers=1,
):
    """Noiseless recovery success over all (rank, L') cells.

    Per trial: draw a seeded Gaussian rank-R instance, acquire it through
    the subsampling model, solve the Lagrangian problem with
    lam = lam_factor * 2||A^T Y||_2, and count success when the relative
    Frobenius error is <= success_threshold.  Defaults probe the pure
    completion question (delta kernel, uniform random lines): Gaussian
    instances are spectrally flat, so a low-pass blur would make them
    unrecoverable at any L' and mask the sampling transition.  Solver
    failures are recorded in failure_counts, not raised.  `completed` maps
    (R, L') to a cell dict for resume; `on_cell` is called with
    (R, L', cell_dict) as cells finish.  Cells are independent, so
    workers > 1 runs them in a thread pool; per-cell seeds make the result
    identical regardless of scheduling.
    """
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    if not r_list or not lprime_list:
        raise ConfigError("r_list and lprime_list must be nonempty")
    if any(lp < 1 or lp > grid.height_lines for lp in lprime_list):
        raise ConfigError("every L' must be in [1, H]")
    if psf is None:
        psf = delta_psf()
    completed = completed or {}

    r_list = tuple(r_list)
    lprime_list = tuple(lprime_list)
    cells = {k: v for k, v in completed.items()}
    pending = [
        (rank, lprime)
        for rank in r_list
        for lprime in lprime_list
        if (rank, lprime) not in cells
    ]

    def compute(key):
        return _phase_cell(
            grid, frames, key[0], key[1], trials, success_threshold,
            psf, strategy, seed, lam_factor, max_iters, rel_tol,
        )

    if workers > 1 and len(pending) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            for key, cell in zip(pending, pool.map(compute, pending)):
                cells[key] = cell
                if on_cell is not None:
                    on_cell(key[0], key[1], cell)
    else:
        for key in pending:
            cell = compute(key)
            cells[key] = cell
            if on_cell is not None:
                on_cell(key[0], key[1], cell)

    frac = np.zeros((len(r_list), len(lprime_list)))
    mean_err = np.zeros_like(frac)
    failures = np.zeros(frac.shape, dtype=np.int64)
    for i, rank in enumerate(r_list):
        for j, lprime in enumerate(lprime_list):
            cell = cells[(rank, lprime)]
            frac[i, j] = cell["success_fraction"]
            mean_err[i, j] = cell["mean_rel_error"]
            failures[i, j] = cell["failures"]

    return PhaseDiagramResult(
        r_list=r_list,
        lprime_list=lprime_list,
        success_fraction=frac,
        mean_rel_error=mean_err,
        failure_counts=failures,
        success_threshold=success_threshold,
        trials=trials,
        seed=seed,
    )


def _phase_cell(
    grid, frames, rank, lprime, trials, success_threshold,
    psf, strategy, seed, lam_factor, max_iters, rel_tol,
):
    successes = 0
    errors = []
    failures = 0
    for trial in range(trials):
        stream = _phase_cell_seed(seed, rank, lprime, trial)
        rng = np.random.default_rng(stream)
        truth = _phase_instance(grid, frames, rank, rng)
        plan = generate_plan(
            grid, frames, lprime, strategy, seed=int(rng.integers(2**32))
        )
        model = ForwardModel(psf, plan, grid)
        y = forward_apply(truth, model)
        try:
            lam = lam_factor * 2.0 * _spectral_norm_adjoint(y, model)
            config = SolverConfig(
                mode=MODE_LAGRANGIAN,
                lam=lam,
                max_iters=max_iters,
                rel_tol=rel_tol,
                seed=trial,
            )
            x_hat, _ = solve_lagrangian(y, model, config)
            rel = np.linalg.norm(x_hat.data - truth.data) / np.linalg.norm(truth.data)
        except NoraError:
            failures += 1
            rel = math.inf
        errors.append(rel)
        if rel <= success_threshold:
            successes += 1
    finite = [e for e in errors if math.isfinite(e)]
    return {
        "success_fraction": successes / trials,
        "mean_rel_error": float(np.mean(finite)) if finite else math.inf,
        "failures": failures,
    }


def _spectral_norm_adjoint(y, model):
    from .operators import adjoint_apply

    return float(np.linalg.norm(adjoint_apply(y, model).data, 2))


def write_traces_csv(trace_set, path):
    """One row per cell: cell_id,t0,t1,...  (header included)."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["cell_id"] + [f"t{t}" for t in range(trace_set.frames)])
    for cid, row in zip(trace_set.cell_ids, trace_set.traces):
        writer.writerow([cid] + [repr(float(v)) for v in row])
    atomic_write_bytes(path, buf.getvalue().encode())


def read_traces_csv(path, frame_rate_hz=30.0):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "cell_id":
            raise ConfigError(f"{path} is not a trace CSV (bad header)")
        ids, rows = [], []
        for row in reader:
            ids.append(int(row[0]) if row[0].isdigit() else row[0])
            rows.append([float(v) for v in row[1:]])
    traces = np.array(rows) if rows else np.zeros((0, len(header) - 1))
    return TraceSet(traces, tuple(ids), frame_rate_hz=frame_rate_hz)


def write_phase_csv(result, path):
    """Rows R,Lprime,success_fraction,mean_rel_error."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["R", "Lprime", "success_fraction", "mean_rel_error"])
    for row in result.to_rows():
        writer.writerow(list(row))
    atomic_write_bytes(path, buf.getvalue().encode())
