"""Hierarchical implicit motion model with learnable Fourier-series activations.

A query time ``t`` is answered in three stages:

1. for every scale s, a clip of ``clip_frames`` frames at stride ``2**(s-1)``
   around ``t`` is flattened (frames, offsets, t) and passed through an
   encoder MLP and a latent MLP, giving ``z_s`` of width ``latent``;
2. coarser latents are refined top-down by token cross-attention whose
   queries come from ``z_{s-1}`` and keys/values from ``z_s``, plus a residual;
3. the concatenated refined latents and ``t`` are decoded into one frame.

All MLPs except the final linear layer of each use :class:`FourierActivation`.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import autodiff as ad
from . import checkpoint
from .autodiff import Parameter, Tensor
from .motion import MotionSequence, clip_indices


class ModelConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    n_scales: int = 3
    harmonics: int = 16
    latent: int = 128
    token_dim: int = 16
    clip_frames: int = 5
    encoder_width: int = 128
    encoder_hidden: int = 2
    latent_hidden: int = 1
    decoder_width: int = 256
    decoder_layers: int = 5
    share_activation: bool = False
    activation: str = "fourier"
    first_omega: float | None = None  # None: unit_gain_omega(harmonics)
    deep_omega: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_scales < 1:
            raise ModelConfigError("n_scales must be >= 1")
        if self.harmonics < 1:
            raise ModelConfigError("harmonics must be >= 1")
        if self.latent % self.token_dim:
            raise ModelConfigError(f"latent width {self.latent} not divisible by token_dim {self.token_dim}")
        if self.clip_frames < 1 or self.clip_frames % 2 == 0:
            raise ModelConfigError("clip_frames must be a positive odd number")
        if self.decoder_layers < 1:
            raise ModelConfigError("decoder needs at least one layer")
        if self.activation not in ("fourier", "relu"):
            raise ModelConfigError(f"unknown activation {self.activation!r}")

    @property
    def tokens(self) -> int:
        return self.latent // self.token_dim

    def strides(self) -> list:
        return [2 ** s for s in range(self.n_scales)]

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


# --------------------------------------------------------------- activation

class FourierActivation:
    """sigma(x) = sum_i amp_i * sin(freq_i * x + phase_i), elementwise."""

    def __init__(self, harmonics: int, label: str = "act"):
        self.harmonics = harmonics
        self.amp = Parameter(np.zeros(harmonics), f"{label}.amp")
        self.freq = Parameter(np.zeros(harmonics), f"{label}.freq")
        self.phase = Parameter(np.zeros(harmonics), f"{label}.phase")

    def parameters(self) -> list:
        return [self.amp, self.freq, self.phase]

    def __call__(self, x: Tensor) -> Tensor:
        return fourier_activate(self, x)


def fourier_activate(act: FourierActivation, x) -> Tensor:
    x = ad.constant(x)
    z = act.harmonics
    column = ad.reshape(x, (-1, 1))
    arg = ad.add(ad.matmul(column, ad.reshape(act.freq, (1, z))), act.phase)
    out = ad.matmul(ad.sin(arg), ad.reshape(act.amp, (z, 1)))
    return ad.reshape(out, x.shape)


def unit_gain_omega(harmonics: int) -> float:
    """Fundamental frequency at which a freshly initialized activation has unit
    mean-square slope on a pre-activation of variance 2.

    With amp ~ U(+-sqrt(6/z)), E[sigma'^2] = omega0^2 * sum(i^2) / z, and the
    Uniform(+-sqrt(6/n)) weights double the input variance, so the gain is
    omega0^2 (z+1)(2z+1) / 3.
    """
    z = harmonics
    return float(np.sqrt(3.0 / ((z + 1) * (2 * z + 1))))


def init_activation(act: FourierActivation, omega0: float, rng: np.random.Generator):
    z = act.harmonics
    act.freq.value[:] = omega0 * np.arange(1, z + 1)
    act.phase.value[:] = rng.uniform(-np.pi, np.pi, z)
    bound = np.sqrt(6.0 / z)
    act.amp.value[:] = rng.uniform(-bound, bound, z)


# ---------------------------------------------------------------------- MLP

class PaidMlp:
    """Stack of linear layers; every layer but the last is followed by an activation.

    With ``share`` all activated layers reference one FourierActivation.
    """

    def __init__(self, sizes, harmonics=16, share=False, activation="fourier", label="mlp"):
        if len(sizes) < 2:
            raise ModelConfigError("an MLP needs input and output sizes")
        self.sizes = list(sizes)
        self.share = share
        self.activation = activation
        self.weights, self.biases, self.acts = [], [], []
        shared = FourierActivation(harmonics, f"{label}.act") if share and activation == "fourier" else None
        for k, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            self.weights.append(Parameter(np.zeros((n_in, n_out)), f"{label}.{k}.weight"))
            self.biases.append(Parameter(np.zeros(n_out), f"{label}.{k}.bias"))
            if k < len(sizes) - 2 and activation == "fourier":
                self.acts.append(shared or FourierActivation(harmonics, f"{label}.{k}.act"))

    def activations(self) -> list:
        seen, out = set(), []
        for a in self.acts:
            if id(a) not in seen:
                seen.add(id(a))
                out.append(a)
        return out

    def parameters(self) -> list:
        params = []
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            params += [w, b]
        for a in self.activations():
            params += a.parameters()
        return params

    def __call__(self, x) -> Tensor:
        h = ad.constant(x)
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = ad.add(ad.matmul(h, w), b)
            if k < last:
                h = ad.relu(h) if self.activation == "relu" else self.acts[k](h)
        return h


def init_parametric(mlp: PaidMlp, rng: np.random.Generator, first_omega: float | None = 30.0,
                    deep_omega: float | None = 1.0):
    """Initialize weights U(+-sqrt(6/fan_in)), zero biases, and activations.

    Activation ``i`` (1-based) of the first layer gets frequency
    ``i * first_omega``, deeper layers ``i * deep_omega``; ``None`` selects
    :func:`unit_gain_omega`. Phases are U(-pi, pi) and amplitudes
    U(+-sqrt(6/harmonics)), which keeps the output variance near one.
    """
    for w, b in zip(mlp.weights, mlp.biases):
        bound = np.sqrt(6.0 / w.shape[0])
        w.value[:] = rng.uniform(-bound, bound, w.shape)
        b.value[:] = 0.0
    done = set()
    for k, act in enumerate(mlp.acts):
        if id(act) in done:
            continue
        done.add(id(act))
        omega = first_omega if k == 0 else deep_omega
        init_activation(act, unit_gain_omega(act.harmonics) if omega is None else omega, rng)
    return mlp


# ---------------------------------------------------------------- attention

class CrossScaleAttention:
    """``n_scales - 1`` single-head token cross-attention blocks."""

    def __init__(self, n_blocks: int, latent: int, token_dim: int, label="att"):
        if latent % token_dim:
            raise ModelConfigError("latent width must be divisible by token_dim")
        self.latent = latent
        self.token_dim = token_dim
        self.tokens = latent // token_dim
        self.blocks = []
        for s in range(n_blocks):
            self.blocks.append({
                name: Parameter(np.zeros((token_dim, token_dim)), f"{label}.{s}.{name}")
                for name in ("query", "key", "value", "out")
            })

    def parameters(self) -> list:
        return [blk[n] for blk in self.blocks for n in ("query", "key", "value", "out")]

    def init(self, rng: np.random.Generator):
        bound = np.sqrt(6.0 / self.token_dim)
        for blk in self.blocks:
            for p in blk.values():
                p.value[:] = rng.uniform(-bound, bound, p.shape)

    def attend(self, block: int, query_src: Tensor, kv_src: Tensor):
        """Returns (refined latent (B, L), attention weights (B, P, P))."""
        blk = self.blocks[block]
        P, d = self.tokens, self.token_dim
        B = query_src.shape[0]

        def project(src, w):
            return ad.reshape(ad.matmul(ad.reshape(src, (B * P, d)), w), (B, P, d))

        q = project(query_src, blk["query"])
        k = project(kv_src, blk["key"])
        v = project(kv_src, blk["value"])
        scores = ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / np.sqrt(d))
        weights = ad.softmax(scores, axis=-1)
        mixed = ad.reshape(ad.matmul(weights, v), (B * P, d))
        out = ad.reshape(ad.matmul(mixed, blk["out"]), (B, self.latent))
        return ad.add(out, kv_src), weights


def fuse_cross_scale(att: CrossScaleAttention, latents) -> Tensor:
    latents = [ad.constant(z) for z in latents]
    if len(latents) != len(att.blocks) + 1:
        raise ad.ShapeError(f"expected {len(att.blocks) + 1} latents, got {len(latents)}")
    for z in latents:
        if z.value.ndim != 2 or z.shape[1] != att.latent:
            raise ad.ShapeError(f"latent must be (batch, {att.latent}), got {z.shape}")
    refined = [latents[0]]
    for s in range(1, len(latents)):
        # queries use the raw coarser latent, not its refined version
        refined.append(att.attend(s - 1, latents[s - 1], latents[s])[0])
    if len(refined) == 1:
        return refined[0]
    return ad.concat(refined, axis=-1)


# -------------------------------------------------------------------- model

def _time_column(t, batch: int) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    if t.shape != (batch,):
        raise ad.ShapeError(f"expected {batch} time values, got shape {t.shape}")
    return t[:, None]


def decode(decoder: PaidMlp, fused, t) -> Tensor:
    fused = ad.constant(fused)
    if fused.value.ndim != 2 or fused.shape[1] + 1 != decoder.sizes[0]:
        raise ad.ShapeError(f"decoder expects fused width {decoder.sizes[0] - 1}, got {fused.shape}")
    return decoder(ad.concat([fused, ad.constant(_time_column(t, fused.shape[0]))], axis=-1))


class Normalizer:
    """Per-channel standardization; zero-variance channels keep unit scale."""

    def __init__(self, mean, std):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.asarray(std, dtype=np.float64)

    @classmethod
    def fit(cls, sequences) -> "Normalizer":
        stacked = np.concatenate([np.asarray(s.frames) for s in sequences], axis=0)
        std = stacked.std(axis=0)
        return cls(stacked.mean(axis=0), np.where(std > 1e-12, std, 1.0))

    @classmethod
    def identity(cls, dim: int) -> "Normalizer":
        return cls(np.zeros(dim), np.ones(dim))

    def forward(self, x):
        return (np.asarray(x) - self.mean) / self.std

    def inverse(self, x):
        return np.asarray(x) * self.std + self.mean


class PaHiRes:
    def __init__(self, config: ModelConfig, dim: int, normalizer: Normalizer | None = None):
        self.config = cfg = config
        self.dim = dim
        self.normalizer = normalizer or Normalizer.identity(dim)
        self.trained_steps = 0
        enc_in = cfg.clip_frames * (dim + 1) + 1
        mlp = dict(harmonics=cfg.harmonics, share=cfg.share_activation, activation=cfg.activation)
        self.encoders, self.latent_mlps = [], []
        for s in range(cfg.n_scales):
            self.encoders.append(PaidMlp(
                [enc_in] + [cfg.encoder_width] * cfg.encoder_hidden + [cfg.latent], label=f"enc{s + 1}", **mlp))
            self.latent_mlps.append(PaidMlp(
                [cfg.latent] * (cfg.latent_hidden + 2), label=f"lat{s + 1}", **mlp))
        self.attention = CrossScaleAttention(cfg.n_scales - 1, cfg.latent, cfg.token_dim)
        self.decoder = PaidMlp(
            [cfg.n_scales * cfg.latent + 1] + [cfg.decoder_width] * (cfg.decoder_layers - 1) + [dim],
            label="dec", **mlp)
        self.reset(cfg.seed)

    def reset(self, seed: int):
        rng = np.random.default_rng(seed)
        cfg = self.config
        for m in self.mlps():
            init_parametric(m, rng, cfg.first_omega, cfg.deep_omega)
        self.attention.init(rng)

    def mlps(self) -> list:
        out = []
        for e, f in zip(self.encoders, self.latent_mlps):
            out += [e, f]
        return out + [self.decoder]

    def parameters(self) -> list:
        params = []
        for m in self.mlps():
            params += m.parameters()
        return params + self.attention.parameters()

    def named_parameters(self) -> dict:
        return {p.label: p for p in self.parameters()}

    # ---- forward pieces, all in normalized feature space

    def encoder_inputs(self, frames: np.ndarray, t, available=None) -> list:
        """Per-scale encoder input rows (B, N*D + N + 1) for query times ``t``."""
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        T = frames.shape[0]
        rows = []
        for s in range(1, self.config.n_scales + 1):
            idx, off = clip_indices(T, t, s, self.config.clip_frames, available)
            clip = frames[idx].reshape(len(t), -1)
            rows.append(np.concatenate([clip, off, t[:, None]], axis=1))
        return rows

    def latents(self, inputs) -> list:
        return [f(e(x)) for e, f, x in zip(self.encoders, self.latent_mlps, inputs)]

    def forward(self, inputs, t) -> Tensor:
        return decode(self.decoder, fuse_cross_scale(self.attention, self.latents(inputs)), t)

    # ---- public queries on raw sequences

    def _check(self, seq: MotionSequence):
        if seq.dim != self.dim:
            raise ModelConfigError(f"model was built for D={self.dim}, sequence has D={seq.dim}")

    def predict(self, seq: MotionSequence, t, available=None) -> np.ndarray:
        self._check(seq)
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        n = len(t)
        if n == 1:
            # BLAS takes a different kernel for single-row products; padding to two
            # rows keeps a lone query bit-identical to the same query inside a batch
            t = np.repeat(t, 2)
        frames = self.normalizer.forward(seq.frames)
        out = self.forward(self.encoder_inputs(frames, t, available), t)
        return self.normalizer.inverse(out.value[:n])

    # ---- persistence

    def descriptor(self) -> dict:
        d = asdict(self.config)
        d.update(dim=self.dim, strides=self.config.strides(), tokens=self.config.tokens)
        return d

    def state(self) -> dict:
        arrays = {name: p.value for name, p in self.named_parameters().items()}
        arrays["norm.mean"] = self.normalizer.mean
        arrays["norm.std"] = self.normalizer.std
        return arrays

    def load_state(self, arrays: dict):
        params = self.named_parameters()
        missing = set(params) - set(arrays)
        if missing:
            raise ModelConfigError(f"checkpoint lacks parameters: {sorted(missing)[:5]}")
        for name, p in params.items():
            if arrays[name].shape != p.shape:
                raise ModelConfigError(f"{name}: checkpoint shape {arrays[name].shape} != {p.shape}")
            p.value[...] = arrays[name]
        self.normalizer = Normalizer(arrays["norm.mean"], arrays["norm.std"])


def encode_multiscale(model: PaHiRes, seq: MotionSequence, t) -> list:
    model._check(seq)
    frames = model.normalizer.forward(seq.frames)
    return model.latents(model.encoder_inputs(frames, t))


def predict_frame(model: PaHiRes, seq: MotionSequence, t: float) -> np.ndarray:
    return model.predict(seq, [t])[0]


def save_model(path, model: PaHiRes, extra: dict | None = None) -> None:
    meta = {"architecture": model.descriptor(), "trained_steps": model.trained_steps}
    if extra:
        meta.update(extra)
    checkpoint.save(path, model.state(), meta)


def load_model(path, dim: int | None = None) -> PaHiRes:
    arrays, meta = checkpoint.load(path)
    desc = meta.get("architecture")
    if desc is None:
        raise ModelConfigError("checkpoint carries no architecture descriptor")
    if dim is not None and desc["dim"] != dim:
        raise ModelConfigError(f"checkpoint expects D={desc['dim']}, data has D={dim}")
    model = PaHiRes(ModelConfig.from_dict(desc), desc["dim"])
    model.load_state(arrays)
    model.trained_steps = int(meta.get("trained_steps", 0))
    return model
