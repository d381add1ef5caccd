"""Numba lane for the hot kernels; mirrors _kernels_numpy op for op.

Every output element accumulates kernel taps in row-major order, the same
order the numpy lane adds its rolled arrays, so both lanes agree bit for
bit.  Loops keep the frame axis (contiguous in memory) innermost.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def conv2_circ(stack, kern):
    height, width, frames = stack.shape
    ks, kf = kern.shape
    ca, cb = ks // 2, kf // 2
    out = np.zeros_like(stack)
    for h in range(height):
        for w in range(width):
            orow = out[h, w]
            for a in range(ks):
                hh = (h - a + ca) % height
                for b in range(kf):
                    ww = (w - b + cb) % width
                    k = kern[a, b]
                    srow = stack[hh, ww]
                    for t in range(frames):
                        orow[t] += k * srow[t]
    return out


@njit(cache=True)
def corr2_circ(stack, kern):
    height, width, frames = stack.shape
    ks, kf = kern.shape
    ca, cb = ks // 2, kf // 2
    out = np.zeros_like(stack)
    for h in range(height):
        for w in range(width):
            orow = out[h, w]
            for a in range(ks):
                hh = (h + a - ca) % height
                for b in range(kf):
                    ww = (w + b - cb) % width
                    k = kern[a, b]
                    srow = stack[hh, ww]
                    for t in range(frames):
                        orow[t] += k * srow[t]
    return out


@njit(cache=True)
def gather_lines(stack, idx):
    height, width, frames = stack.shape
    lp = idx.shape[1]
    out = np.empty((lp * width, frames), dtype=stack.dtype)
    for t in range(frames):
        for i in range(lp):
            line = idx[t, i]
            for w in range(width):
                out[i * width + w, t] = stack[line, w, t]
    return out


@njit(cache=True)
def scatter_lines(y, idx, height):
    frames = idx.shape[0]
    lp = idx.shape[1]
    width = y.shape[0] // lp
    out = np.zeros((height, width, frames), dtype=y.dtype)
    for t in range(frames):
        for i in range(lp):
            line = idx[t, i]
            for w in range(width):
                out[line, w, t] = y[i * width + w, t]
    return out


@njit(cache=True)
def median3d(stack, wh, ww, wt):
    height, width, frames = stack.shape
    rh, rw, rt = wh // 2, ww // 2, wt // 2
    size = wh * ww * wt
    buf = np.empty(size, dtype=stack.dtype)
    out = np.empty_like(stack)
    for h in range(height):
        for w in range(width):
            for t in range(frames):
                k = 0
                for dh in range(-rh, rh + 1):
                    hh = min(max(h + dh, 0), height - 1)
                    for dw in range(-rw, rw + 1):
                        ww_ = min(max(w + dw, 0), width - 1)
                        for dt in range(-rt, rt + 1):
                            tt = min(max(t + dt, 0), frames - 1)
                            # insertion sort keeps buf[:k] ordered as it fills
                            v = stack[hh, ww_, tt]
                            j = k - 1
                            while j >= 0 and buf[j] > v:
                                buf[j + 1] = buf[j]
                                j -= 1
                            buf[j + 1] = v
                            k += 1
                out[h, w, t] = buf[size // 2]
    return out
