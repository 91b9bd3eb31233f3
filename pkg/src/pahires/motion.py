"""Motion sequences on a fixed frame grid, degradation and local clip extraction."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

LAYOUTS = ("raw", "joints")
SEQ_MAGIC = b"PAMS"
SEQ_VERSION = 1


class MotionDataError(ValueError):
    pass


def round_half_away(x):
    """Round to nearest integer, ties away from zero (numpy rounds ties to even)."""
    x = np.asarray(x, dtype=np.float64)
    return (np.sign(x) * np.floor(np.abs(x) + 0.5)).astype(np.int64)


@dataclass(frozen=True)
class MotionSequence:
    frames: np.ndarray
    fps: float
    layout: str = "raw"

    def __post_init__(self):
        frames = np.array(self.frames, dtype=np.float64)
        if frames.ndim != 2:
            raise MotionDataError(f"frames must be T x D, got shape {frames.shape}")
        if frames.shape[0] < 2 or frames.shape[1] < 1:
            raise MotionDataError(f"need T >= 2 and D >= 1, got {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise MotionDataError("frames contain non-finite values")
        if not (np.isfinite(self.fps) and self.fps > 0):
            raise MotionDataError(f"fps must be positive, got {self.fps}")
        if self.layout not in LAYOUTS:
            raise MotionDataError(f"unknown layout {self.layout!r}")
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "fps", float(self.fps))

    @property
    def length(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    def times(self) -> np.ndarray:
        """Normalized coordinate of every frame: index / (T - 1)."""
        return np.arange(self.length) / (self.length - 1)

    def __eq__(self, other):
        if not isinstance(other, MotionSequence):
            return NotImplemented
        return (self.fps == other.fps and self.layout == other.layout
                and np.array_equal(self.frames, other.frames))

    __hash__ = None


def downsample_indices(length: int, factor: float) -> np.ndarray:
    if factor < 1:
        raise MotionDataError(f"downsample factor must be >= 1, got {factor}")
    count = int(np.floor((length - 1) / factor)) + 2
    idx = round_half_away(np.arange(count) * factor)
    return idx[idx < length]


def downsample(seq: MotionSequence, factor: float) -> MotionSequence:
    """Keep frame ``round(k * factor)`` for k = 0, 1, ...; fps drops by ``factor``."""
    idx = downsample_indices(seq.length, factor)
    if len(idx) < 2:
        raise MotionDataError(f"factor {factor} leaves fewer than 2 of {seq.length} frames")
    if factor == 1:
        return seq
    return MotionSequence(seq.frames[idx], seq.fps / factor, seq.layout)


# ------------------------------------------------------------------ clips

@dataclass(frozen=True)
class Clip:
    frames: np.ndarray   # (N, D)
    offsets: np.ndarray  # (N,) frame time minus query time, normalized units
    indices: np.ndarray  # (N,) source frame indices


def clip_stride(scale: int) -> int:
    if scale < 1:
        raise MotionDataError(f"scale levels start at 1, got {scale}")
    return 2 ** (scale - 1)


def clip_indices(length: int, t, scale: int, n_frames: int = 5, available=None):
    """Vectorized clip geometry for an array of query coordinates.

    Returns ``(indices, offsets)`` of shape ``(len(t), n_frames)``. Grid slots
    outside the sequence clamp to the edge frame. When ``available`` (a
    boolean mask over frames) is given, a slot on an unavailable frame moves
    to the nearest available frame on the same side of the query.
    """
    if n_frames < 1 or n_frames % 2 == 0:
        raise MotionDataError(f"clip length must be odd, got {n_frames}")
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    span = length - 1
    pos = t * span
    center = np.clip(round_half_away(pos), 0, span)
    rel = (np.arange(n_frames) - n_frames // 2) * clip_stride(scale)
    idx = np.clip(center[:, None] + rel[None, :], 0, span)
    if available is not None:
        available = np.asarray(available, dtype=bool)
        if available.shape != (length,) or not available.any():
            raise MotionDataError("availability mask must cover every frame and keep at least one")
        frames = np.flatnonzero(available)
        # nearest available at or below / at or above each slot
        lo_pos = np.searchsorted(frames, idx, side="right") - 1
        hi_pos = np.searchsorted(frames, idx, side="left")
        lo = frames[np.clip(lo_pos, 0, len(frames) - 1)]
        hi = frames[np.clip(hi_pos, 0, len(frames) - 1)]
        lo = np.where(lo_pos >= 0, lo, hi)
        hi = np.where(hi_pos < len(frames), hi, lo)
        left_side = idx <= pos[:, None]
        idx = np.where(available[idx], idx, np.where(left_side, lo, hi))
    offsets = idx / span - t[:, None]
    return idx, offsets


def extract_clip(seq: MotionSequence, t: float, scale: int, n_frames: int = 5,
                 available=None) -> Clip:
    idx, off = clip_indices(seq.length, t, scale, n_frames, available)
    return Clip(seq.frames[idx[0]], off[0], idx[0])


# ------------------------------------------------------------- file formats

_LAYOUT_CODES = {name: i for i, name in enumerate(LAYOUTS)}


def dumps_sequence(seq: MotionSequence) -> bytes:
    """magic b"PAMS", u32 version, u32 T, u32 D, f64 fps, u8 layout, then T*D float64 (LE)."""
    head = SEQ_MAGIC + struct.pack("<IIIdB", SEQ_VERSION, seq.length, seq.dim, seq.fps,
                                   _LAYOUT_CODES[seq.layout])
    return head + np.ascontiguousarray(seq.frames, dtype="<f8").tobytes()


def loads_sequence(data: bytes) -> MotionSequence:
    size = struct.calcsize("<IIIdB")
    if len(data) < 4 + size or data[:4] != SEQ_MAGIC:
        raise MotionDataError("not a motion sequence file")
    version, T, D, fps, code = struct.unpack("<IIIdB", data[4:4 + size])
    if version != SEQ_VERSION:
        raise MotionDataError(f"unsupported sequence version {version}")
    if code >= len(LAYOUTS):
        raise MotionDataError(f"unknown layout code {code}")
    payload = data[4 + size:]
    if len(payload) != 8 * T * D:
        raise MotionDataError(f"payload holds {len(payload)} bytes, expected {8 * T * D}")
    frames = np.frombuffer(payload, dtype="<f8").reshape(T, D)
    return MotionSequence(frames, fps, LAYOUTS[code])


def save_sequence(path, seq: MotionSequence) -> None:
    Path(path).write_bytes(dumps_sequence(seq))


def load_sequence(path) -> MotionSequence:
    return loads_sequence(Path(path).read_bytes())


def save_csv(path, seq: MotionSequence) -> None:
    header = "frame,time," + ",".join(f"c{j}" for j in range(seq.dim))
    table = np.column_stack([np.arange(seq.length), np.arange(seq.length) / seq.fps, seq.frames])
    np.savetxt(path, table, delimiter=",", header=header, comments="", fmt="%.17g")
