"""Analytic toy motions used by the test-suite."""
from __future__ import annotations

import numpy as np

from .motion import MotionSequence


def sinusoid_params(dim: int = 6, seed: int = 0):
    """Per-channel (frequencies in cycles per sequence, amplitudes, phases).

    Channel c mixes two tones at c + 1 and c + 2.5 cycles, so every channel
    has its own spectrum.
    """
    rng = np.random.default_rng(seed)
    c = np.arange(dim)
    freqs = np.stack([c + 1.0, c + 2.5], axis=1)
    amps = np.stack([np.ones(dim), 0.5 * np.ones(dim)], axis=1)
    phases = rng.uniform(-np.pi, np.pi, (dim, 2))
    return freqs, amps, phases


def sinusoid_value(tau, dim: int = 6, seed: int = 0) -> np.ndarray:
    """Signal at normalized times ``tau`` (0 = first frame, 1 = last frame)."""
    tau = np.atleast_1d(np.asarray(tau, dtype=np.float64))
    freqs, amps, phases = sinusoid_params(dim, seed)
    arg = 2 * np.pi * tau[:, None, None] * freqs[None] + phases[None]
    return (amps[None] * np.sin(arg)).sum(axis=-1)


def sinusoid_sequence(length: int = 60, dim: int = 6, fps: float = 30.0, seed: int = 0) -> MotionSequence:
    return MotionSequence(sinusoid_value(np.arange(length) / (length - 1), dim, seed), fps)
