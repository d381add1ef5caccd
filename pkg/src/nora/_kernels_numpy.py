"""Pure-numpy lane for the hot kernels.

All functions take/return float64 arrays shaped (H, W, T).  Accumulation
order over kernel taps matches the numba lane exactly (row-major over the
kernel), so both lanes produce identical floats.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

# Cap on elements materialized at once by the median filter (~256 MB of f64).
_MEDIAN_CHUNK_ELEMS = 32_000_000


def conv2_circ(stack, kern):
    """Circular 2D convolution of every frame with the (odd-dim) kernel."""
    ks, kf = kern.shape
    ca, cb = ks // 2, kf // 2
    out = np.zeros_like(stack)
    for a in range(ks):
        for b in range(kf):
            out += kern[a, b] * np.roll(stack, (a - ca, b - cb), axis=(0, 1))
    return out


def corr2_circ(stack, kern):
    """Circular 2D correlation (flipped-kernel convolution); adjoint of conv2_circ."""
    ks, kf = kern.shape
    ca, cb = ks // 2, kf // 2
    out = np.zeros_like(stack)
    for a in range(ks):
        for b in range(kf):
            out += kern[a, b] * np.roll(stack, (ca - a, cb - b), axis=(0, 1))
    return out


def gather_lines(stack, idx):
    """Stack the sampled lines of each frame into measurement columns.

    stack: (H, W, T); idx: (T, L') line indices (ascending per frame).
    Returns (L'*W, T).
    """
    _, width, frames = stack.shape
    lp = idx.shape[1]
    # advanced indices on axes 0 and 2 with a slice between -> (L', T, W)
    picked = stack[idx.T, :, np.arange(frames)[None, :]]
    return picked.transpose(0, 2, 1).reshape(lp * width, frames)


def scatter_lines(y, idx, height):
    """Adjoint of gather_lines: place measurement rows back at their lines."""
    lp = idx.shape[1]
    frames = idx.shape[0]
    width = y.shape[0] // lp
    out = np.zeros((height, width, frames), dtype=y.dtype)
    out[idx.T, :, np.arange(frames)[None, :]] = (
        y.reshape(lp, width, frames).transpose(0, 2, 1)
    )
    return out


def median3d(stack, wh, ww, wt):
    """Median over an edge-replicated (wh, ww, wt) window around each voxel."""
    rh, rw, rt = wh // 2, ww // 2, wt // 2
    padded = np.pad(stack, ((rh, rh), (rw, rw), (rt, rt)), mode="edge")
    windows = sliding_window_view(padded, (wh, ww, wt))
    height = stack.shape[0]
    per_row = windows[0].size
    rows_per_chunk = max(1, _MEDIAN_CHUNK_ELEMS // max(per_row, 1))
    out = np.empty_like(stack)
    for h0 in range(0, height, rows_per_chunk):
        h1 = min(h0 + rows_per_chunk, height)
        out[h0:h1] = np.median(windows[h0:h1], axis=(3, 4, 5))
    return out
