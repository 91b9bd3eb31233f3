"""Inference tasks on a trained model: interpolation, inbetweening, extrapolation, evaluation."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import metrics
from .bvh import BvhError, Skeleton, parse_bvh
from .model import ModelConfigError, PaHiRes
from .motion import MotionDataError, MotionSequence, downsample, load_sequence, round_half_away
from .training import query_grid

log = logging.getLogger(__name__)


class TaskError(ValueError):
    pass


def _require_trained(model: PaHiRes, seq: MotionSequence):
    if model.trained_steps <= 0:
        raise ModelConfigError("model has not been trained")
    if seq.dim != model.dim:
        raise ModelConfigError(f"model was built for D={model.dim}, sequence has D={seq.dim}")


def output_length(length: int, scale: float) -> int:
    if not scale > 0:
        raise TaskError(f"scale must be positive, got {scale}")
    return int(round_half_away((length - 1) * scale)) + 1


def interpolation_times(length: int, scale: float) -> np.ndarray:
    n = output_length(length, scale)
    if n < 2:
        return np.zeros(1)
    return np.arange(n) / (n - 1)


def interpolate(model: PaHiRes, seq: MotionSequence, scale: float) -> MotionSequence:
    _require_trained(model, seq)
    t = interpolation_times(seq.length, scale)
    frames = model.predict(seq, t)
    if len(frames) == 1:
        raise TaskError(f"scale {scale} collapses the sequence to a single frame")
    return MotionSequence(frames, seq.fps * scale, seq.layout)


def gap_mask(length: int, start: int, size: int) -> np.ndarray:
    """Availability mask with ``size`` frames hidden from ``start``."""
    if size < 0:
        raise TaskError("gap length must be >= 0")
    if size and (start < 1 or start + size > length - 1):
        raise TaskError(f"gap [{start}, {start + size}) must leave context frames on both sides "
                        f"of a {length}-frame sequence")
    mask = np.ones(length, dtype=bool)
    mask[start:start + size] = False
    return mask


def inbetween(model: PaHiRes, seq: MotionSequence, start: int, size: int) -> MotionSequence:
    """Fill the gap from surrounding context; every other frame is passed through untouched."""
    mask = gap_mask(seq.length, start, size)
    if size == 0:
        return seq
    _require_trained(model, seq)
    gap = np.flatnonzero(~mask)
    frames = np.array(seq.frames)
    frames[gap] = model.predict(seq, gap / (seq.length - 1), available=mask)
    return MotionSequence(frames, seq.fps, seq.layout)


def extrapolation_times(t_min: float, t_max: float, count: int) -> np.ndarray:
    if count < 1:
        raise TaskError("count must be >= 1")
    if not t_max >= t_min:
        raise TaskError(f"range must satisfy t_min <= t_max, got ({t_min}, {t_max})")
    if count == 1:
        return np.array([float(t_min)])
    return t_min + (t_max - t_min) * (np.arange(count) / (count - 1))


def extrapolate(model: PaHiRes, seq: MotionSequence, t_min: float, t_max: float,
                count: int | None = None, scale: float = 1.0) -> MotionSequence:
    """Uniform queries over [t_min, t_max]; by default at the input's frame spacing times ``scale``."""
    _require_trained(model, seq)
    if count is None:
        count = int(round_half_away((t_max - t_min) * (seq.length - 1) * scale)) + 1
    t = extrapolation_times(t_min, t_max, count)
    frames = model.predict(seq, t)
    if len(frames) < 2:
        frames = np.repeat(frames, 2, axis=0)  # a sequence needs two frames
    return MotionSequence(frames, seq.fps * scale, seq.layout)


# ---------------------------------------------------------------- evaluate

def reconstruct(model: PaHiRes, seq: MotionSequence, factor: float):
    """Degrade by ``factor`` and predict the original frames the input still spans.

    Returns ``(prediction, truth)``.
    """
    _require_trained(model, seq)
    low = downsample(seq, factor)
    j, t = query_grid(seq.length, low.length, factor)
    return model.predict(low, t), seq.frames[j]


@dataclass
class LoadedSequence:
    path: str
    seq: MotionSequence
    skeleton: Skeleton | None = None


def read_motion(path) -> LoadedSequence:
    path = Path(path)
    try:
        if path.suffix.lower() == ".bvh":
            skel, seq = parse_bvh(path.read_text())
            return LoadedSequence(str(path), seq, skel)
        return LoadedSequence(str(path), load_sequence(path))
    except OSError as exc:
        raise MotionDataError(f"cannot read {path}: {exc}") from None
    except BvhError as exc:
        raise MotionDataError(f"{path}: {exc}") from None


def expand_dataset(paths) -> list:
    """Directories expand to their .bvh / .pams files in sorted order."""
    out = []
    for p in map(Path, paths):
        if p.is_dir():
            out += sorted(str(q) for q in p.iterdir() if q.suffix.lower() in (".bvh", ".pams", ".bin"))
        else:
            out.append(str(p))
    return out


def score(pred, truth, skeleton: Skeleton | None = None) -> metrics.MetricReport:
    """PSNR/SSIM always; L2P/L2Q with a skeleton; NPSS when the truth has spectral power."""
    rep = metrics.fidelity_report(pred, truth)
    if skeleton is not None:
        rep.l2p = metrics.l2p(pred, truth, skeleton)
        rep.l2q = metrics.l2q(pred, truth, skeleton)
    try:
        rep.npss = metrics.npss(pred, truth)
    except metrics.MetricError:
        pass  # too short, or a silent truth: leave it unreported
    return rep


def evaluate(model: PaHiRes, paths, scales, dataset: str = "data"):
    """Rows of (dataset, scale, mean MetricReport) plus the per-file skip list."""
    loaded, skipped = [], []
    for p in expand_dataset(paths):
        try:
            loaded.append(read_motion(p))
        except MotionDataError as exc:
            log.warning("skipping %s: %s", p, exc)
            skipped.append(p)
    if not loaded:
        raise MotionDataError("no readable sequences in dataset")
    rows = []
    for scale in scales:
        reports = []
        for item in loaded:
            pred, truth = reconstruct(model, item.seq, scale)
            reports.append(score(pred, truth, item.skeleton))
        rows.append((dataset, scale, metrics.mean_report(reports)))
    return rows, skipped
