"""Fidelity and inbetweening metrics on motion arrays.

PSNR and SSIM treat a T x D motion array as a single-channel image whose
peak is the ground-truth data range. L2P/L2Q compare global joint positions
and quaternions after forward kinematics; NPSS compares normalized power
spectra per channel.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .bvh import Skeleton, fk_rows

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


class MetricError(ValueError):
    pass


def _pair(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise MetricError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise MetricError("empty arrays")
    return pred, truth


def data_range(x) -> float:
    x = np.asarray(x)
    return float(x.max() - x.min())


def psnr(pred, truth, data_range_=None) -> float:
    """dB; ``math.inf`` when the arrays are identical."""
    pred, truth = _pair(pred, truth)
    mse = float(np.mean((pred - truth) ** 2))
    if mse == 0:
        return math.inf
    R = data_range(truth) if data_range_ is None else data_range_
    if R == 0:
        raise MetricError("ground truth has zero data range but prediction differs")
    return 10.0 * math.log10(R * R / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-x * x / (2 * sigma * sigma))
    return g / g.sum()


def _filter(x, g):
    # valid-mode separable filtering along both axes
    x = sliding_window_view(x, len(g), axis=0) @ g
    return sliding_window_view(x, len(g), axis=1) @ g


def ssim(pred, truth, data_range_=None) -> float:
    """Mean SSIM over 11x11 Gaussian windows; global statistics when T or D < 11."""
    pred, truth = _pair(pred, truth)
    if pred.ndim == 1:
        pred, truth = pred[:, None], truth[:, None]
    R = data_range(truth) if data_range_ is None else data_range_
    if R == 0:
        if np.array_equal(pred, truth):
            return 1.0
        raise MetricError("ground truth has zero data range but prediction differs")
    # SSIM is unchanged by a common rescale of inputs and range; working in
    # units of R keeps the stabilizing constants from underflowing
    pred, truth = pred / R, truth / R
    c1, c2 = SSIM_K1 ** 2, SSIM_K2 ** 2
    if min(pred.shape) >= SSIM_WINDOW:
        g = gaussian_window()
        mx, my = _filter(pred, g), _filter(truth, g)
        vx = _filter(pred * pred, g) - mx * mx
        vy = _filter(truth * truth, g) - my * my
        cxy = _filter(pred * truth, g) - mx * my
    else:
        mx, my = pred.mean(), truth.mean()
        vx, vy = pred.var(), truth.var()
        cxy = np.mean((pred - mx) * (truth - my))
    smap = (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2))
    return float(np.mean(smap))


def l2p(pred_rows, truth_rows, skeleton: Skeleton) -> float:
    """Mean global joint position distance per joint per frame."""
    pred_rows, truth_rows = _pair(pred_rows, truth_rows)
    pp, _ = fk_rows(skeleton, pred_rows)
    tp, _ = fk_rows(skeleton, truth_rows)
    return float(np.mean(np.linalg.norm(pp - tp, axis=-1)))


def align_hemisphere(q, ref):
    """Flip ``q`` where it points away from ``ref`` (dot < 0)."""
    dot = np.sum(q * ref, axis=-1, keepdims=True)
    return np.where(dot < 0, -q, q)


def l2q(pred_rows, truth_rows, skeleton: Skeleton) -> float:
    """Mean global quaternion distance per joint per frame after hemisphere alignment."""
    pred_rows, truth_rows = _pair(pred_rows, truth_rows)
    _, pq = fk_rows(skeleton, pred_rows)
    _, tq = fk_rows(skeleton, truth_rows)
    return quaternion_distance(pq, tq)


def quaternion_distance(pq, tq) -> float:
    pq = align_hemisphere(np.asarray(pq, dtype=np.float64), tq)
    return float(np.mean(np.linalg.norm(pq - tq, axis=-1)))


def npss(pred, truth) -> float:
    """Power-weighted earth mover's distance between normalized power spectra.

    Spectra are taken over time (axis 0) per channel with the full DFT, DC
    bin included. Channels with zero ground-truth power are skipped.
    """
    pred, truth = _pair(pred, truth)
    if pred.ndim == 1:
        pred, truth = pred[:, None], truth[:, None]
    if pred.shape[0] < 4:
        raise MetricError("NPSS needs at least 4 frames")
    peak = np.max(np.abs(truth))
    if peak > 0:
        # a common rescale leaves every normalized spectrum and weight unchanged
        pred, truth = pred / peak, truth / peak
    p_pow = np.abs(np.fft.fft(pred, axis=0)) ** 2
    t_pow = np.abs(np.fft.fft(truth, axis=0)) ** 2
    t_total = t_pow.sum(axis=0)
    p_total = p_pow.sum(axis=0)
    keep = t_total > 0
    if not keep.any():
        raise MetricError("every ground-truth channel has zero power")
    t_norm = t_pow[:, keep] / t_total[keep]
    p_norm = np.divide(p_pow[:, keep], p_total[keep], out=np.zeros_like(p_pow[:, keep]),
                       where=p_total[keep] > 0)
    emd = np.abs(np.cumsum(p_norm, axis=0) - np.cumsum(t_norm, axis=0)).sum(axis=0)
    weights = t_total[keep] / t_total[keep].sum()
    return float(np.sum(weights * emd))


# ------------------------------------------------------------------ reports

@dataclass
class MetricReport:
    psnr: float = math.nan
    ssim: float = math.nan
    l2p: float = math.nan
    l2q: float = math.nan
    npss: float = math.nan

    def as_dict(self) -> dict:
        return asdict(self)


def fidelity_report(pred, truth) -> MetricReport:
    return MetricReport(psnr=psnr(pred, truth), ssim=ssim(pred, truth))


def mean_report(reports) -> MetricReport:
    reports = list(reports)
    if not reports:
        raise MetricError("no reports to aggregate")
    out = {}
    for key in MetricReport.__dataclass_fields__:
        vals = [getattr(r, key) for r in reports]
        out[key] = float(np.mean(vals)) if not all(math.isnan(v) for v in vals) else math.nan
    return MetricReport(**out)


def _fmt(v: float) -> str:
    if math.isnan(v):
        return "-"
    if math.isinf(v):
        return "inf"
    return f"{v:.3f}"


def write_csv(path, rows) -> None:
    """``rows``: iterable of (dataset, scale, MetricReport)."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["dataset", "scale"] + list(MetricReport.__dataclass_fields__))
        for dataset, scale, rep in rows:
            w.writerow([dataset, repr(float(scale))] + [repr(float(v)) for v in rep.as_dict().values()])


def format_table(rows, metrics=("psnr", "ssim")) -> str:
    """Aligned text table: one line per dataset, a column group per scale."""
    rows = list(rows)
    datasets = list(dict.fromkeys(r[0] for r in rows))
    scales = list(dict.fromkeys(r[1] for r in rows))
    lookup = {(d, s): rep for d, s, rep in rows}
    head1 = ["Dataset"] + [f"x{s:g}" for s in scales for _ in metrics]
    head2 = [""] + [m.upper() for _ in scales for m in metrics]
    body = []
    for d in datasets:
        line = [d]
        for s in scales:
            rep = lookup.get((d, s))
            line += [_fmt(getattr(rep, m)) if rep else "-" for m in metrics]
        body.append(line)
    table = [head1, head2] + body
    widths = [max(len(r[i]) for r in table) for i in range(len(head1))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in table) + "\n"
