"""Nuclear-norm regularized video recovery.

The Lagrangian problem  min_X ||A(X) - Y||_F^2 + lam*||X||_*  is solved with
an accelerated proximal gradient method (FISTA) whose proximal map is
singular-value soft-thresholding; a function-value restart keeps the
objective trace monotone.  The constrained variant (residual <= eps) is
realized as a discrepancy-principle bisection over lam, each inner solve
cold-started so the selected-lam solve is literally the Lagrangian one.
"""

import math
import re
from dataclasses import dataclass, field

import numpy as np

from .core import MeasurementSet, SamplingPlan, VideoMatrix
from .errors import (
    ConfigError,
    DivergenceError,
    InfeasibleEpsilonError,
    NumericalError,
)
from .operators import adjoint_apply, estimate_operator_norm, forward_apply

MODE_LAGRANGIAN = "lagrangian"
MODE_CONSTRAINED = "constrained"

RANK_EPS = 1e-8  # singular values below RANK_EPS * sigma_1 do not count as rank


@dataclass(frozen=True)
class SolverConfig:
    """Knobs for both solver modes; lam drives Lagrangian, (eps, mu) Constrained."""

    mode: str = MODE_LAGRANGIAN
    lam: float | None = None
    eps: float | None = None
    mu: float = 0.0
    max_iters: int = 500
    rel_tol: float = 1e-4
    step_scale: float = 0.99
    svd_rank_cap: int | None = None
    seed: int = 0
    continuation: bool = False
    eps_band: float = 0.05  # accept residual within [eps, (1+eps_band)*eps]

    def __post_init__(self):
        if self.mode not in (MODE_LAGRANGIAN, MODE_CONSTRAINED):
            raise ConfigError(f"unknown solver mode {self.mode!r}")
        if self.mode == MODE_LAGRANGIAN and not (self.lam and self.lam > 0):
            raise ConfigError("Lagrangian mode requires lam > 0")
        if self.mode == MODE_CONSTRAINED and not (self.eps and self.eps > 0):
            raise ConfigError("Constrained mode requires eps > 0")
        if self.mu < 0:
            raise ConfigError("mu must be nonnegative")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")
        if not 0 < self.rel_tol < 1:
            raise ConfigError("rel_tol must be in (0, 1)")
        if not 0 < self.step_scale <= 1:
            raise ConfigError("step_scale must be in (0, 1]")


@dataclass
class SolveReport:
    """Solver diagnostics; serializes with to_dict for the JSON report."""

    iterations_run: int
    objective_per_iter: list
    final_data_residual: float
    final_nuclear_norm: float
    solution_rank: int
    converged: bool
    lambda_used: float | None = None
    bisection_trace: list = field(default_factory=list)

    def to_dict(self):
        return {
            "iterations_run": self.iterations_run,
            "objective_per_iter": [float(v) for v in self.objective_per_iter],
            "final_data_residual": float(self.final_data_residual),
            "final_nuclear_norm": float(self.final_nuclear_norm),
            "solution_rank": int(self.solution_rank),
            "converged": bool(self.converged),
            "lambda_used": None if self.lambda_used is None else float(self.lambda_used),
            "bisection_trace": [[float(a), float(b)] for a, b in self.bisection_trace],
        }


def _sign_fix(u, vt):
    # deterministic SVD output: largest-magnitude entry of each left vector positive
    for j in range(u.shape[1]):
        i = int(np.argmax(np.abs(u[:, j])))
        if u[i, j] < 0:
            u[:, j] = -u[:, j]
            vt[j, :] = -vt[j, :]
    return u, vt


def partial_svd(mat, rank_cap, seed=0):
    """Top-rank_cap SVD triplet (U, s, Vt).

    Randomized range finder with 2 power iterations and oversampling 8;
    falls back to a full SVD when the smaller dimension is <= 64 or the cap
    reaches it.
    """
    mat = np.asarray(mat, dtype=np.float64)
    m, n = mat.shape
    small = min(m, n)
    if not 1 <= rank_cap <= small:
        raise ConfigError(f"rank_cap must be in [1, {small}]")
    if small <= 64 or rank_cap + 8 >= small:
        u, s, vt = _full_svd(mat)
        u, vt = _sign_fix(u[:, :rank_cap], vt[:rank_cap, :])
        return u, s[:rank_cap], vt
    rng = np.random.default_rng(seed)
    omega = rng.standard_normal((n, rank_cap + 8))
    q, _ = np.linalg.qr(mat @ omega)
    for _ in range(2):
        z, _ = np.linalg.qr(mat.T @ q)
        q, _ = np.linalg.qr(mat @ z)
    b = q.T @ mat
    ub, s, vt = _full_svd(b)
    u = q @ ub
    u, vt = _sign_fix(u[:, :rank_cap], vt[:rank_cap, :])
    return u, s[:rank_cap], vt


def _full_svd(mat):
    try:
        return np.linalg.svd(mat, full_matrices=False)
    except np.linalg.LinAlgError:
        pass
    # gesdd occasionally fails to converge on finite matrices; the transposed
    # problem usually succeeds, and its factors swap back exactly
    try:
        u, s, vt = np.linalg.svd(mat.T, full_matrices=False)
        return vt.T, s, u.T
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"SVD failed on a {mat.shape} matrix "
            f"(finite={bool(np.all(np.isfinite(mat)))}, "
            f"fro={np.linalg.norm(mat):.3e})"
        ) from exc


def _svt_values(mat, tau, rank_cap=None, seed=0):
    if rank_cap is None:
        u, s, vt = _full_svd(mat)
    else:
        u, s, vt = partial_svd(mat, rank_cap, seed=seed)
    shrunk = np.maximum(s - tau, 0.0)
    keep = shrunk > 0
    if not np.any(keep):
        return np.zeros_like(mat), shrunk[:0]
    x = (u[:, keep] * shrunk[keep]) @ vt[keep, :]
    return x, shrunk[keep]


def svt(mat, tau, rank_cap=None, seed=0):
    """Singular-value soft threshold: prox of tau*||.||_* at mat."""
    if tau < 0:
        raise ConfigError("tau must be nonnegative")
    mat = np.asarray(mat, dtype=np.float64)
    if not np.all(np.isfinite(mat)):
        raise NumericalError("svt input contains non-finite entries")
    if tau == 0 and rank_cap is None:
        return mat.copy()
    x, _ = _svt_values(mat, tau, rank_cap=rank_cap, seed=seed)
    return x


def nuclear_norm(mat):
    """Sum of singular values."""
    return float(np.sum(np.linalg.svd(np.asarray(mat, float), compute_uv=False)))


def _fista(y, model, lam, config, mu=0.0, anchor=None, x0=None, op_norm_sq=None):
    """Monotone FISTA on ||A(X)-Y||_F^2 + lam||X||_* + mu/2 ||X-anchor||_F^2."""
    grid = model.grid
    frames = model.plan.frames
    shape = (grid.n_pixels, frames)
    ydata = y.data

    if op_norm_sq is None:
        op_norm_sq = estimate_operator_norm(model, iterations=50, seed=config.seed)
    lipschitz = 2.0 * op_norm_sq + mu
    step = config.step_scale / lipschitz if lipschitz > 0 else 1.0

    if anchor is None:
        anchor = np.zeros(shape)
    x_cur = np.zeros(shape) if x0 is None else np.array(x0, dtype=np.float64)
    x_prev = x_cur
    ax_cur = forward_apply(VideoMatrix(grid, x_cur), model).data
    ax_prev = ax_cur

    def smooth_grad(z, az):
        g = 2.0 * adjoint_apply(MeasurementSet(model.plan, az - ydata), model).data
        if mu > 0:
            g = g + mu * (z - anchor)
        return g

    def objective(x, ax, nuc):
        val = float(np.linalg.norm(ax - ydata) ** 2) + lam * nuc
        if mu > 0:
            val += 0.5 * mu * float(np.linalg.norm(x - anchor) ** 2)
        return val

    nuc_cur = nuclear_norm(x_cur) if x0 is not None and np.any(x_cur) else 0.0
    f_cur = objective(x_cur, ax_cur, nuc_cur)
    s_cur = np.zeros(0)
    trace = [f_cur]
    t_momentum = 1.0
    beta = 0.0
    converged = False
    iterations = 0

    for _ in range(config.max_iters):
        iterations += 1
        z = x_cur + beta * (x_cur - x_prev)
        az = ax_cur + beta * (ax_cur - ax_prev)
        step_k = step
        x_new, s_new = _svt_values(
            z - step_k * smooth_grad(z, az),
            lam * step_k,
            rank_cap=config.svd_rank_cap,
            seed=config.seed,
        )
        if not np.all(np.isfinite(x_new)):
            raise DivergenceError(
                "iterate became non-finite; the gradient step is too large"
            )
        ax_new = forward_apply(VideoMatrix(grid, x_new), model).data
        f_new = objective(x_new, ax_new, float(np.sum(s_new)))
        if f_new > f_cur:
            # momentum overshoot: plain prox step from the last iterate,
            # halving the step if the Lipschitz estimate was optimistic
            t_momentum = 1.0
            for _halving in range(5):
                x_new, s_new = _svt_values(
                    x_cur - step_k * smooth_grad(x_cur, ax_cur),
                    lam * step_k,
                    rank_cap=config.svd_rank_cap,
                    seed=config.seed,
                )
                ax_new = forward_apply(VideoMatrix(grid, x_new), model).data
                f_new = objective(x_new, ax_new, float(np.sum(s_new)))
                if f_new <= f_cur:
                    break
                step_k *= 0.5

        denom = max(np.linalg.norm(x_cur), 1e-30)
        rel_change = np.linalg.norm(x_new - x_cur) / denom
        x_prev, ax_prev = x_cur, ax_cur
        x_cur, ax_cur, f_cur, s_cur = x_new, ax_new, f_new, s_new
        trace.append(f_cur)
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_momentum**2))
        beta = (t_momentum - 1.0) / t_next
        t_momentum = t_next
        if rel_change < config.rel_tol:
            converged = True
            break

    residual = float(np.linalg.norm(ax_cur - ydata))
    if s_cur.size:
        rank = int(np.sum(s_cur > RANK_EPS * s_cur.max()))
    else:
        rank = 0
    report = SolveReport(
        iterations_run=iterations,
        objective_per_iter=trace,
        final_data_residual=residual,
        final_nuclear_norm=float(np.sum(s_cur)),
        solution_rank=rank,
        converged=converged,
        lambda_used=lam,
    )
    return VideoMatrix(grid, x_cur), report


def solve_lagrangian(y, model, config, x0=None):
    """Solve  min_X ||A(X)-Y||_F^2 + lam*||X||_*  for config.lam."""
    if config.mode != MODE_LAGRANGIAN:
        raise ConfigError("config.mode must be 'lagrangian'")
    _check_geometry(y, model)
    return _fista(y, model, config.lam, config, x0=x0)


def solve_constrained(y, model, config):
    """Minimize the nuclear norm subject to ||A(X)-Y||_F <= eps.

    Runs a discrepancy-principle bisection on lam until the data residual
    lands in [eps, (1+eps_band)*eps].  With continuation=True the solution
    is fed back as the smoothing anchor X0 until it stabilizes.
    """
    if config.mode != MODE_CONSTRAINED:
        raise ConfigError("config.mode must be 'constrained'")
    _check_geometry(y, model)
    op_norm_sq = estimate_operator_norm(model, iterations=50, seed=config.seed)

    anchor = None
    rounds = 10 if config.continuation else 1
    x_hat, report = None, None
    for _ in range(rounds):
        x_hat, report = _discrepancy_solve(y, model, config, anchor, op_norm_sq)
        if not config.continuation:
            break
        if anchor is not None:
            drift = np.linalg.norm(x_hat.data - anchor) / max(
                np.linalg.norm(anchor), 1e-30
            )
            if drift < config.rel_tol:
                break
        anchor = x_hat.data
    return x_hat, report


def _discrepancy_solve(y, model, config, anchor, op_norm_sq):
    eps = config.eps
    band_hi = (1.0 + config.eps_band) * eps
    norm_y = float(np.linalg.norm(y.data))
    grid = model.grid

    if norm_y <= eps:
        zero = VideoMatrix(grid, np.zeros((grid.n_pixels, y.frames)))
        return zero, SolveReport(
            iterations_run=0,
            objective_per_iter=[],
            final_data_residual=norm_y,
            final_nuclear_norm=0.0,
            solution_rank=0,
            converged=True,
            lambda_used=None,
        )

    def run(lam):
        x, rep = _fista(
            y,
            model,
            lam,
            config,
            mu=config.mu,
            anchor=anchor,
            x0=anchor,
            op_norm_sq=op_norm_sq,
        )
        trace.append((lam, rep.final_data_residual))
        return x, rep

    def accept(x, rep):
        rep.bisection_trace = trace
        return x, rep

    trace = []
    aty = adjoint_apply(y, model).data
    lam_hi = 2.0 * float(np.linalg.norm(aty, 2)) * 1.02
    x, rep = run(lam_hi)
    if eps <= rep.final_data_residual <= band_hi:
        return accept(x, rep)

    lam_lo, r_lo = lam_hi, rep.final_data_residual
    for _ in range(80):
        lam_lo /= 4.0
        x, rep = run(lam_lo)
        r_lo = rep.final_data_residual
        if eps <= r_lo <= band_hi:
            return accept(x, rep)
        if r_lo < eps:
            break
    else:
        raise InfeasibleEpsilonError(
            f"residual floor {r_lo:.6g} exceeds the requested band "
            f"[{eps:.6g}, {band_hi:.6g}]",
            trace=trace,
        )

    hi = lam_hi
    lo = lam_lo
    for _ in range(60):
        mid = math.sqrt(lo * hi)
        x, rep = run(mid)
        r_mid = rep.final_data_residual
        if eps <= r_mid <= band_hi:
            return accept(x, rep)
        if r_mid < eps:
            lo = mid
        else:
            hi = mid
    raise NumericalError(
        "discrepancy bisection did not land in the residual band; trace: "
        + ", ".join(f"(lam={a:.3e}, r={b:.6g})" for a, b in trace)
    )


def solve(y, model, config):
    """Dispatch on config.mode."""
    if config.mode == MODE_LAGRANGIAN:
        return solve_lagrangian(y, model, config)
    return solve_constrained(y, model, config)


def _check_geometry(y, model):
    if y.plan != model.plan:
        raise ConfigError("measurements were not produced by this model's plan")


def _slice_plan(plan, t0, t1):
    return SamplingPlan(
        plan.grid,
        plan.lines_per_frame,
        plan.line_indices[t0:t1],
        plan.strategy,
        plan.seed,
    )


def solve_batched(y, model, config, batch_frames=500):
    """Split long videos into frame batches solved independently.

    Returns the concatenated estimate and one report per batch.
    """
    from .operators import ForwardModel

    if batch_frames < 1:
        raise ConfigError("batch_frames must be >= 1")
    frames = y.frames
    if frames <= batch_frames:
        x, rep = solve(y, model, config)
        return x, [rep]
    parts, reports = [], []
    for t0 in range(0, frames, batch_frames):
        t1 = min(t0 + batch_frames, frames)
        sub_plan = _slice_plan(model.plan, t0, t1)
        sub_model = ForwardModel(model.psf, sub_plan, model.grid)
        sub_y = MeasurementSet(sub_plan, y.data[:, t0:t1])
        x, rep = solve(sub_y, sub_model, config)
        parts.append(x.data)
        reports.append(rep)
    return VideoMatrix(model.grid, np.concatenate(parts, axis=1)), reports


# Residual presets for the constrained mode, by speedup; the motion variants
# only differ at 20x.  These were tuned on a 400x400 px FOV reconstructed in
# 500-frame batches, so scale_epsilon rescales them by sqrt(M / M_ref) for
# other geometries -- a documented heuristic, not a guarantee.
EPSILON_PRESETS = {
    "10x": 475.0,
    "15x": 375.0,
    "20x": 325.0,
    "10x-motion": 475.0,
    "15x-motion": 375.0,
    "20x-motion": 340.0,
}

_PRESET_GRID_SIDE = 400
_PRESET_BATCH_FRAMES = 500


def preset_epsilon(name):
    """Base eps for a named preset, before any scaling."""
    try:
        return EPSILON_PRESETS[name]
    except KeyError:
        raise ConfigError(
            f"unknown epsilon preset {name!r}; options: {sorted(EPSILON_PRESETS)}"
        ) from None


def scale_epsilon(name, measurement_count):
    """Preset eps rescaled by sqrt(M / M_ref) for the actual sample count."""
    base = preset_epsilon(name)
    speedup = float(re.match(r"(\d+)x", name).group(1))
    m_ref = _PRESET_BATCH_FRAMES * (_PRESET_GRID_SIDE / speedup) * _PRESET_GRID_SIDE
    return base * math.sqrt(measurement_count / m_ref)
