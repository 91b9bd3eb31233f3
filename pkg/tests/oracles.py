"""Independent reference computations the tests compare the package against.

Nothing here imports the code under test for the quantity it checks.
"""
import math

import numpy as np


def central_difference(f, x, h=1e-5):
    """Numerical gradient of scalar ``f`` at array ``x`` (modified in place, restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        up = f()
        x[i] = old - h
        down = f()
        x[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def rel_error(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(1e-8, np.max(np.abs(a)), np.max(np.abs(b))))


# ---------------------------------------------------------------- metrics

def psnr_direct(pred, truth):
    rng = float(np.max(truth) - np.min(truth))
    n = pred.size
    mse = sum((float(p) - float(t)) ** 2 for p, t in zip(pred.ravel(), truth.ravel())) / n
    return 10 * math.log10(rng * rng / mse)


def gaussian_2d(size=11, sigma=1.5):
    c = (size - 1) / 2
    w = np.array([[math.exp(-((i - c) ** 2 + (j - c) ** 2) / (2 * sigma ** 2))
                   for j in range(size)] for i in range(size)])
    return w / w.sum()


def ssim_windowed(x, y, size=11, sigma=1.5, k1=0.01, k2=0.03):
    """Textbook SSIM: weighted statistics per full window, averaged."""
    R = float(y.max() - y.min())
    c1, c2 = (k1 * R) ** 2, (k2 * R) ** 2
    w = gaussian_2d(size, sigma)
    vals = []
    for i in range(x.shape[0] - size + 1):
        for j in range(x.shape[1] - size + 1):
            a = x[i:i + size, j:j + size]
            b = y[i:i + size, j:j + size]
            ma, mb = (w * a).sum(), (w * b).sum()
            va = (w * (a - ma) ** 2).sum()
            vb = (w * (b - mb) ** 2).sum()
            cov = (w * (a - ma) * (b - mb)).sum()
            vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def ssim_global(x, y, k1=0.01, k2=0.03):
    R = float(y.max() - y.min())
    c1, c2 = (k1 * R) ** 2, (k2 * R) ** 2
    mx, my = x.mean(), y.mean()
    vx = ((x - mx) ** 2).mean()
    vy = ((y - my) ** 2).mean()
    cov = ((x - mx) * (y - my)).mean()
    return float((2 * mx * my + c1) * (2 * cov + c2) / ((mx ** 2 + my ** 2 + c1) * (vx + vy + c2)))


def dft_power(x):
    """|X_k|^2 for k = 0..T-1 by explicit summation."""
    T = len(x)
    out = []
    for k in range(T):
        re = sum(x[n] * math.cos(2 * math.pi * k * n / T) for n in range(T))
        im = -sum(x[n] * math.sin(2 * math.pi * k * n / T) for n in range(T))
        out.append(re * re + im * im)
    return out


def npss_enumerated(pred, truth):
    emds, weights = [], []
    for c in range(truth.shape[1]):
        pt = dft_power(list(truth[:, c]))
        pp = dft_power(list(pred[:, c]))
        tt, tp = sum(pt), sum(pp)
        if tt == 0:
            continue
        cdf_t = cdf_p = emd = 0.0
        for k in range(len(pt)):
            cdf_t += pt[k] / tt
            cdf_p += pp[k] / tp if tp > 0 else 0.0
            emd += abs(cdf_p - cdf_t)
        emds.append(emd)
        weights.append(tt)
    total = sum(weights)
    return sum(w / total * e for w, e in zip(weights, emds))


# --------------------------------------------------------------------- FK

def axis_matrix(axis, deg):
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    if axis == "X":
        return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])
    if axis == "Y":
        return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


def matrix_to_quat(m):
    # Shepperd's method, returned with w >= 0
    tr = np.trace(m)
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    return -q if q[0] < 0 else q


def fk_homogeneous(joints, row):
    """Global positions and quaternions from a BVH-layout row via 4x4 transforms.

    ``joints`` is a list of (parent, offset, channels).
    """
    col = 0
    globals_ = []
    for parent, offset, channels in joints:
        local = np.eye(4)
        trans = np.array(offset, dtype=float)
        rot = np.eye(3)
        for ch in channels:
            if ch.endswith("position"):
                trans["XYZ".index(ch[0])] = row[col]
            else:
                rot = rot @ axis_matrix(ch[0], row[col])
            col += 1
        local[:3, :3] = rot
        local[:3, 3] = trans
        globals_.append(local if parent is None else globals_[parent] @ local)
    pos = np.array([g[:3, 3] for g in globals_])
    quat = np.array([matrix_to_quat(g[:3, :3]) for g in globals_])
    return pos, quat


# ------------------------------------------------------------------- Adam

def adam_reference(grad_fn, x0, lr, steps, b1=0.9, b2=0.999, eps=1e-8):
    x, m, v = float(x0), 0.0, 0.0
    for t in range(1, steps + 1):
        g = grad_fn(x)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    return x
