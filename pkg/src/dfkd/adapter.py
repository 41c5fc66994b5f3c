"""Frequency adapter: per-frame crossover detection between low and high bands.

For each frame of the teacher's output magnitudes the running maximum over
frequency is formed, its forward difference is normalized by the current
envelope level, and the bin where that relative jump is largest becomes the
crossover ``m``. Bins ``[0..m]`` form the low band and ``[m..n_bins-1]`` the
high band; bin ``m`` belongs to both.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import ComplexSpectrogram, magnitude

DEFAULT_EPS = 1e-8


@dataclass(frozen=True)
class BandSplit:
    m: int
    n_bins: int = 257

    def __post_init__(self):
        if not 0 <= self.m <= self.n_bins - 2:
            raise ValueError(f"crossover index {self.m} outside [0, {self.n_bins - 2}]")

    @property
    def low(self) -> slice:
        return slice(0, self.m + 1)

    @property
    def high(self) -> slice:
        return slice(self.m, self.n_bins)


def running_max(frame_mags) -> np.ndarray:
    mags = np.asarray(frame_mags, dtype=np.float64)
    if np.isnan(mags).any():
        raise ValueError("running_max: NaN in frame magnitudes")
    return np.maximum.accumulate(mags, axis=-1)


def normalized_diff(envelope, eps: float = DEFAULT_EPS) -> np.ndarray:
    if eps <= 0:
        raise ValueError("eps must be positive")
    env = np.asarray(envelope, dtype=np.float64)
    return (env[..., 1:] - env[..., :-1]) / (env[..., :-1] + eps)


def crossover_index(diff) -> int | np.ndarray:
    """Argmax of the normalized difference; ties go to the lowest bin."""
    # np.argmax returns the first maximal index
    m = np.argmax(np.asarray(diff), axis=-1)
    return int(m) if np.ndim(m) == 0 else m


def split_frame(teacher_frame, student_frame, m: int):
    """Return ``(T_low, T_high, S_low, S_high)``; bin ``m`` sits in both bands."""
    t = np.asarray(teacher_frame)
    s = np.asarray(student_frame)
    band = BandSplit(int(m), t.shape[-1])
    return t[band.low], t[band.high], s[band.low], s[band.high]


def frame_crossovers(mags, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Vectorized crossover per row of a frames x bins magnitude matrix."""
    return np.atleast_1d(crossover_index(normalized_diff(running_max(mags), eps)))


def adapt(teacher_spec, eps: float = DEFAULT_EPS, per_utterance: bool = False) -> np.ndarray:
    """Crossover index for every frame of the teacher output.

    With ``per_utterance=True`` the bin-wise maximum over all frames is used
    to pick a single ``m``, which is then repeated for every frame.
    """
    data = teacher_spec.data if isinstance(teacher_spec, ComplexSpectrogram) else teacher_spec
    mags = magnitude(np.atleast_2d(data))
    if per_utterance:
        m = frame_crossovers(mags.max(axis=0, keepdims=True), eps)[0]
        return np.full(mags.shape[0], m, dtype=np.int64)
    return frame_crossovers(mags, eps).astype(np.int64)


def band_masks(m, n_bins: int = 257) -> tuple[np.ndarray, np.ndarray]:
    """Boolean frames x bins masks of the low and high bands for crossovers ``m``."""
    m = np.asarray(m).reshape(-1, 1)
    k = np.arange(n_bins)[None, :]
    return k <= m, k >= m


def bin_to_hz(m, n_fft: int = 512, sample_rate: int = 16000):
    return np.asarray(m) * sample_rate / n_fft
