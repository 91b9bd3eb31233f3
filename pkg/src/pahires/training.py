"""Losses, degradation sampling, Adam with step decay, and the training loop."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import autodiff as ad
from . import checkpoint
from .motion import MotionDataError, MotionSequence, downsample
from .model import Normalizer, PaHiRes

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class LossConfig:
    velocity_weight: float = 0.5

    def __post_init__(self):
        if self.velocity_weight < 0:
            raise ValueError("velocity_weight must be >= 0")


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 256
    epochs: int = 1000
    decay: float = 0.5
    decay_every: int = 200
    factor_min: float = 1.0
    factor_max: float = 4.0
    seed: int = 0
    steps_per_epoch: int = 0  # 0: one pass over the pool's frames
    checkpoint_every: int = 0
    checkpoint_path: str = ""
    normalize: bool = True
    max_resample: int = 32

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 0 or self.decay_every < 1:
            raise ValueError("lr, batch_size and decay_every must be positive, epochs >= 0")
        if not 1.0 <= self.factor_min <= self.factor_max:
            raise ValueError("need 1 <= factor_min <= factor_max")
        if not 0 < self.decay <= 1:
            raise ValueError("decay must lie in (0, 1]")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


# ------------------------------------------------------------------- losses

def _pair(pred, truth):
    pred, truth = ad.constant(pred), ad.constant(truth)
    if pred.shape != truth.shape:
        raise ad.ShapeError(f"prediction {pred.shape} and target {truth.shape} differ")
    return pred, truth


def mse_loss(pred, truth) -> ad.Tensor:
    """Sum over frames of squared L2 error."""
    pred, truth = _pair(pred, truth)
    diff = ad.sub(pred, truth)
    return ad.sum_(ad.mul(diff, diff))


def velocity_loss(pred, truth) -> ad.Tensor:
    pred, truth = _pair(pred, truth)
    if pred.shape[0] < 2:
        raise ValueError("velocity loss needs at least 2 frames")
    vp = ad.sub(pred[1:], pred[:-1])
    vt = ad.sub(truth[1:], truth[:-1])
    diff = ad.sub(vp, vt)
    return ad.sum_(ad.mul(diff, diff))


def total_loss(pred, truth, cfg: LossConfig = LossConfig()) -> ad.Tensor:
    return ad.add(mse_loss(pred, truth), ad.scale(velocity_loss(pred, truth), cfg.velocity_weight))


# ----------------------------------------------------------------- sampling

@dataclass
class BatchItem:
    input: MotionSequence   # degraded sequence the model conditions on
    t: np.ndarray           # query coordinates in the input's normalized time
    target: np.ndarray      # original frames at those coordinates
    factor: float
    frames: np.ndarray      # original frame indices of the targets


def query_grid(original_length: int, input_length: int, factor: float):
    """Original frame indices reachable inside [0, 1] and their coordinates.

    Input frame k sits at original frame k * factor, so original frame j maps
    to t = j / (factor * (input_length - 1)).
    """
    span = factor * (input_length - 1)
    j = np.arange(min(original_length, int(math.floor(span + 1e-9)) + 1))
    return j, j / span


def draw_factor(cfg: TrainConfig, rng: np.random.Generator, size=None):
    """Degradation factor(s) ~ Uniform(factor_min, factor_max)."""
    return rng.uniform(cfg.factor_min, cfg.factor_max, size)


def sample_batch(pool, cfg: TrainConfig, rng: np.random.Generator) -> list:
    """Items of contiguous original-grid queries, ``cfg.batch_size`` queries in total."""
    if not pool:
        raise ValueError("empty sequence pool")
    items, remaining = [], cfg.batch_size
    while remaining > 0:
        seq = pool[rng.integers(len(pool))]
        for _ in range(cfg.max_resample):
            factor = draw_factor(cfg, rng)
            try:
                low = downsample(seq, factor)
            except MotionDataError:
                continue
            j, t = query_grid(seq.length, low.length, factor)
            if len(j) >= 2:
                break
        else:
            raise TrainingError(f"could not degrade a {seq.length}-frame sequence "
                                f"within {cfg.max_resample} draws")
        n = min(remaining, len(j))
        if n == 1 and remaining < len(j):
            n = 2  # keep a velocity term; overshoots the budget by one query
        start = rng.integers(len(j) - n + 1)
        sel = slice(start, start + n)
        items.append(BatchItem(low, t[sel], seq.frames[j[sel]], factor, j[sel]))
        remaining -= n
    return items


# --------------------------------------------------------------------- Adam

@dataclass
class TrainState:
    parameters: list
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    lr: float = 1e-4
    rng: np.random.Generator = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        for p in self.parameters:
            self.m.setdefault(p.label, np.zeros(p.shape))
            self.v.setdefault(p.label, np.zeros(p.shape))
        if self.rng is None:
            self.rng = np.random.default_rng(0)


def adam_step(state: TrainState, grads: dict) -> TrainState:
    """One bias-corrected Adam update, in place."""
    for p in state.parameters:
        if not np.all(np.isfinite(grads[p])):
            raise TrainingError(f"non-finite gradient for parameter {p.label}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1 ** state.step
    c2 = 1 - b2 ** state.step
    for p in state.parameters:
        g = grads[p]
        m = state.m[p.label]
        v = state.v[p.label]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p.value -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    return cfg.lr * cfg.decay ** (epoch // cfg.decay_every)


# -------------------------------------------------------------------- train

def batch_loss(model: PaHiRes, items, loss_cfg: LossConfig):
    """Total loss over a batch plus per-element mse / velocity means for logging."""
    inputs, ts = [], []
    for it in items:
        frames = model.normalizer.forward(it.input.frames)
        inputs.append(model.encoder_inputs(frames, it.t))
        ts.append(it.t)
    stacked = [np.concatenate(parts, axis=0) for parts in zip(*inputs)]
    pred = model.forward(stacked, np.concatenate(ts))
    mse_terms, vel_terms = [], []
    n_mse = n_vel = 0
    start = 0
    for it in items:
        n = len(it.t)
        p = pred[start:start + n]
        truth = model.normalizer.forward(it.target)
        mse_terms.append(mse_loss(p, truth))
        n_mse += truth.size
        if n >= 2:
            vel_terms.append(velocity_loss(p, truth))
            n_vel += truth.size - truth.shape[1]
        start += n
    mse = mse_terms[0]
    for term in mse_terms[1:]:
        mse = ad.add(mse, term)
    if vel_terms:
        vel = vel_terms[0]
        for term in vel_terms[1:]:
            vel = ad.add(vel, term)
    else:
        vel = ad.constant(0.0)
    total = ad.add(mse, ad.scale(vel, loss_cfg.velocity_weight))
    return total, float(mse.value) / n_mse, float(vel.value) / max(n_vel, 1)


def steps_per_epoch(pool, cfg: TrainConfig) -> int:
    if cfg.steps_per_epoch:
        return cfg.steps_per_epoch
    return max(1, math.ceil(sum(s.length for s in pool) / cfg.batch_size))


def train(pool, model: PaHiRes, cfg: TrainConfig = TrainConfig(), loss_cfg: LossConfig = LossConfig(),
          state: TrainState | None = None, on_epoch=None):
    """Returns ``(state, history)``; history rows are dicts keyed like the CSV header."""
    pool = list(pool)
    if not pool:
        raise ValueError("empty sequence pool")
    for s in pool:
        if s.dim != model.dim:
            raise ValueError(f"sequence D={s.dim} does not match model D={model.dim}")
    if cfg.normalize and state is None:
        model.normalizer = Normalizer.fit(pool)
    if state is None:
        state = TrainState(model.parameters(), lr=cfg.lr, rng=np.random.default_rng(cfg.seed))
    params = state.parameters
    n_steps = steps_per_epoch(pool, cfg)
    history = []
    first_epoch = state.step // n_steps
    for epoch in range(first_epoch, cfg.epochs):
        state.lr = lr_at(epoch, cfg)
        sums = np.zeros(3)
        for _ in range(n_steps):
            items = sample_batch(pool, cfg, state.rng)
            try:
                loss, mse, vel = batch_loss(model, items, loss_cfg)
            except ad.NonFiniteError as exc:
                raise TrainingError(f"non-finite loss at step {state.step}: {exc}") from exc
            if not np.isfinite(loss.value):
                raise TrainingError(f"non-finite loss at step {state.step}")
            adam_step(state, ad.gradient(loss, params))
            model.trained_steps = state.step
            sums += (mse, vel, mse + loss_cfg.velocity_weight * vel)
        row = dict(zip(("mse", "velocity", "total"), sums / n_steps))
        row = {"epoch": epoch, "lr": state.lr, **row}
        history.append(row)
        log.debug("epoch %d lr %.3g total %.6g", epoch, state.lr, row["total"])
        if on_epoch is not None:
            on_epoch(row)
        if cfg.checkpoint_every and cfg.checkpoint_path and (epoch + 1) % cfg.checkpoint_every == 0:
            save_train_state(cfg.checkpoint_path, model, state)
    return state, history


HISTORY_FIELDS = ("epoch", "lr", "mse", "velocity", "total")


def write_history(path, history) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(HISTORY_FIELDS)
        for row in history:
            w.writerow([row["epoch"]] + [repr(float(row[k])) for k in HISTORY_FIELDS[1:]])


# --------------------------------------------------------------- checkpoint

def save_train_state(path, model: PaHiRes, state: TrainState) -> None:
    arrays = dict(model.state())
    for p in state.parameters:
        arrays[f"adam.m.{p.label}"] = state.m[p.label]
        arrays[f"adam.v.{p.label}"] = state.v[p.label]
    meta = {
        "architecture": model.descriptor(),
        "trained_steps": state.step,
        "train": {"step": state.step, "lr": state.lr, "rng": state.rng.bit_generator.state},
    }
    checkpoint.save(path, arrays, meta)


def load_train_state(path, model: PaHiRes) -> TrainState:
    arrays, meta = checkpoint.load(path)
    model.load_state(arrays)
    info = meta["train"]
    model.trained_steps = info["step"]
    rng = np.random.default_rng()
    rng.bit_generator.state = info["rng"]
    params = model.parameters()
    state = TrainState(params, step=info["step"], lr=info["lr"], rng=rng,
                       m={p.label: arrays[f"adam.m.{p.label}"].copy() for p in params},
                       v={p.label: arrays[f"adam.v.{p.label}"].copy() for p in params})
    return state
