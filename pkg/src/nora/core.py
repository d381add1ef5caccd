"""Domain types, the pixels<->frame reshaping convention, and container I/O.

A video is held as an N x T matrix whose column t is the vectorized frame at
time t; vectorization is line-major (slow-scan outer, fast-scan inner), so
index k = line * W + pixel and a sampled line is one contiguous block.
"""

import os
import struct
import zlib
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np

from .errors import FormatError, ShapeError


class SamplingStrategy(IntEnum):
    UNIFORM_RANDOM = 1
    ROTATING_EVENLY_SPACED = 2


def _freeze(arr):
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class FrameGrid:
    """Raster geometry: H slow-scan lines by W fast-scan pixels."""

    height_lines: int
    width_pixels: int
    pixel_pitch_um: float = 1.0
    frame_rate_hz: float = 30.0

    def __post_init__(self):
        if self.height_lines < 1 or self.width_pixels < 1:
            raise ShapeError("grid dimensions must be >= 1")
        if not (self.pixel_pitch_um > 0 and self.frame_rate_hz > 0):
            raise ShapeError("pixel pitch and frame rate must be positive")

    @property
    def n_pixels(self):
        return self.height_lines * self.width_pixels


@dataclass(frozen=True, eq=False)
class VideoMatrix:
    """Pixels-by-time matrix (N x T) plus its frame grid."""

    grid: FrameGrid
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] != self.grid.n_pixels:
            raise ShapeError(
                f"video data must be ({self.grid.n_pixels}, T), got {data.shape}"
            )
        if not np.all(np.isfinite(data)):
            raise ShapeError("video data must be finite")
        object.__setattr__(self, "data", _freeze(data))

    def __eq__(self, other):
        if not isinstance(other, VideoMatrix):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.data, other.data)

    @property
    def frames(self):
        return self.data.shape[1]

    def frame(self, t):
        """Frame t as an H x W array."""
        return self.data[:, t].reshape(self.grid.height_lines, self.grid.width_pixels)

    def to_stack(self):
        """View of the data as (H, W, T)."""
        g = self.grid
        return self.data.reshape(g.height_lines, g.width_pixels, self.frames)


@dataclass(frozen=True, eq=False)
class SamplingPlan:
    """Per-frame sets of slow-scan line indices, stored ascending."""

    grid: FrameGrid
    lines_per_frame: int
    line_indices: np.ndarray  # (T, L') int64, each row sorted ascending
    strategy: SamplingStrategy
    seed: int

    def __eq__(self, other):
        if not isinstance(other, SamplingPlan):
            return NotImplemented
        return (
            self.grid == other.grid
            and self.lines_per_frame == other.lines_per_frame
            and self.strategy == other.strategy
            and self.seed == other.seed
            and np.array_equal(self.line_indices, other.line_indices)
        )

    def __post_init__(self):
        idx = np.asarray(self.line_indices, dtype=np.int64)
        if idx.ndim != 2 or idx.shape[1] != self.lines_per_frame:
            raise ShapeError(f"line_indices must be (T, {self.lines_per_frame})")
        if idx.size and (idx.min() < 0 or idx.max() >= self.grid.height_lines):
            raise ShapeError("line index out of range")
        for row in idx:
            if len(np.unique(row)) != self.lines_per_frame:
                raise ShapeError("line indices within a frame must be distinct")
        object.__setattr__(self, "line_indices", _freeze(np.sort(idx, axis=1)))

    @property
    def frames(self):
        return self.line_indices.shape[0]

    @property
    def samples_per_frame(self):
        """Scalar measurements per frame: L' * W."""
        return self.lines_per_frame * self.grid.width_pixels


@dataclass(frozen=True, eq=False)
class MeasurementSet:
    """Observed matrix Y (L'*W x T) tied to the plan that produced it."""

    plan: SamplingPlan
    data: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, MeasurementSet):
            return NotImplemented
        return self.plan == other.plan and np.array_equal(self.data, other.data)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        expected = (self.plan.samples_per_frame, self.plan.frames)
        if data.shape != expected:
            raise ShapeError(f"measurement data must be {expected}, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ShapeError("measurement data must be finite")
        object.__setattr__(self, "data", _freeze(data))

    @property
    def frames(self):
        return self.data.shape[1]

    @property
    def total_samples(self):
        return self.data.size


def frame_to_vector(frame, grid):
    """Vectorize an H x W frame line-major: k = line * W + pixel."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape != (grid.height_lines, grid.width_pixels):
        raise ShapeError(
            f"frame shape {frame.shape} does not match grid "
            f"({grid.height_lines}, {grid.width_pixels})"
        )
    return frame.reshape(-1)


def vector_to_frame(vec, grid):
    """Inverse of frame_to_vector."""
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (grid.n_pixels,):
        raise ShapeError(f"vector length {vec.shape} does not match N={grid.n_pixels}")
    return vec.reshape(grid.height_lines, grid.width_pixels)


# ---------------------------------------------------------------------------
# Binary container
#
# magic 'NORA' | u8 version=1 | u8 kind | u16 reserved
# | i64 H, W, T, L' | i64 strategy | u64 seed | f64 frame_rate | f64 pitch
# | payload f32 LE column-major over time | u32 CRC32 of payload
#
# kind: 1=video (payload N x T), 2=measurements (L'*W x T; plan regenerated
# from the header), 3=plan (payload = line indices, L' x T).
# ---------------------------------------------------------------------------

MAGIC = b"NORA"
CONTAINER_VERSION = 1
KIND_VIDEO = 1
KIND_MEASUREMENTS = 2
KIND_PLAN = 3

_HEADER = struct.Struct("<4sBBH4qqQdd")


def _payload_bytes(arr):
    return np.asarray(arr, dtype="<f4").tobytes(order="F")


def _payload_array(buf, rows, cols):
    arr = np.frombuffer(buf, dtype="<f4", count=rows * cols)
    return arr.reshape((rows, cols), order="F").astype(np.float64)


def write_container(path, obj):
    """Write a VideoMatrix, MeasurementSet, or SamplingPlan; byte-exact round trip.

    Payload floats are 32-bit little-endian, so video/measurement values are
    quantized to f32 on disk.  Measurement files carry only the plan header;
    the plan is regenerated on read, so plans must come from generate_plan.
    """
    from .operators import generate_plan  # deferred: operators imports core

    if isinstance(obj, VideoMatrix):
        kind = KIND_VIDEO
        grid, frames = obj.grid, obj.frames
        lp, strategy, seed = 0, 0, 0
        payload = obj.data
    elif isinstance(obj, MeasurementSet):
        kind = KIND_MEASUREMENTS
        plan = obj.plan
        grid, frames = plan.grid, plan.frames
        lp, strategy, seed = plan.lines_per_frame, int(plan.strategy), plan.seed
        regen = generate_plan(grid, frames, lp, plan.strategy, plan.seed)
        if not np.array_equal(regen.line_indices, plan.line_indices):
            raise ShapeError(
                "only strategy-generated plans can back a measurement container"
            )
        payload = obj.data
    elif isinstance(obj, SamplingPlan):
        kind = KIND_PLAN
        grid, frames = obj.grid, obj.frames
        lp, strategy, seed = obj.lines_per_frame, int(obj.strategy), obj.seed
        payload = obj.line_indices.T  # (L', T): column t = that frame's lines
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")

    header = _HEADER.pack(
        MAGIC,
        CONTAINER_VERSION,
        kind,
        0,
        grid.height_lines,
        grid.width_pixels,
        frames,
        lp,
        strategy,
        seed,
        grid.frame_rate_hz,
        grid.pixel_pitch_um,
    )
    body = _payload_bytes(payload)
    crc = zlib.crc32(body) & 0xFFFFFFFF
    atomic_write_bytes(path, header + body + struct.pack("<I", crc))


def atomic_write_bytes(path, data):
    """Write via a sibling temp file and rename, so readers never see partials."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def read_container(path):
    """Read a container written by write_container."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size + 4:
        raise FormatError(f"{path}: truncated container")
    (
        magic,
        version,
        kind,
        _reserved,
        height,
        width,
        frames,
        lp,
        strategy,
        seed,
        frame_rate,
        pitch,
    ) = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != CONTAINER_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")

    grid = FrameGrid(height, width, pixel_pitch_um=pitch, frame_rate_hz=frame_rate)
    if kind == KIND_VIDEO:
        rows = grid.n_pixels
    elif kind == KIND_MEASUREMENTS:
        rows = lp * width
    elif kind == KIND_PLAN:
        rows = lp
    else:
        raise FormatError(f"{path}: unknown kind {kind}")

    body = raw[_HEADER.size : _HEADER.size + 4 * rows * frames]
    if len(body) != 4 * rows * frames:
        raise FormatError(f"{path}: truncated payload")
    (crc_stored,) = struct.unpack_from("<I", raw, _HEADER.size + len(body))
    if zlib.crc32(body) & 0xFFFFFFFF != crc_stored:
        raise FormatError(f"{path}: payload checksum mismatch")
    payload = _payload_array(body, rows, frames)

    if kind == KIND_VIDEO:
        return VideoMatrix(grid, payload)
    if kind == KIND_PLAN:
        return SamplingPlan(
            grid, lp, payload.T.astype(np.int64), SamplingStrategy(strategy), seed
        )
    from .operators import generate_plan

    plan = generate_plan(grid, frames, lp, SamplingStrategy(strategy), seed)
    return MeasurementSet(plan, payload)
