"""Waveforms, STFT/iSTFT with an exact adjoint, and 16-bit PCM WAV I/O."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

DEFAULT_SR = 16000


class InputTooShortError(ValueError):
    pass


class WavFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int = DEFAULT_SR

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise ValueError("waveform must be one-dimensional")
        if x.size == 0:
            raise InputTooShortError("input too short: empty waveform")
        if not np.all(np.isfinite(x)):
            raise ValueError("waveform contains non-finite samples")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        object.__setattr__(self, "samples", x)

    def __len__(self):
        return self.samples.size


@dataclass(frozen=True)
class StftConfig:
    n_fft: int = 512
    hop: int = 256

    def __post_init__(self):
        if self.n_fft <= 0 or self.n_fft % 2:
            raise ValueError("n_fft must be a positive even integer")
        if self.hop <= 0 or self.n_fft % self.hop:
            raise ValueError("hop must divide n_fft")

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1

    @property
    def window(self) -> np.ndarray:
        return hann(self.n_fft)

    def n_frames(self, n_samples: int) -> int:
        return (n_samples - self.n_fft) // self.hop + 1

    def signal_length(self, n_frames: int) -> int:
        return self.n_fft + (n_frames - 1) * self.hop

    def interior(self, n_frames: int) -> slice:
        """Samples covered by the full overlap of at least two frames."""
        return slice(self.n_fft - self.hop, self.signal_length(n_frames) - (self.n_fft - self.hop))


@dataclass(frozen=True)
class ComplexSpectrogram:
    data: np.ndarray
    config: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.complex128)
        if d.ndim != 2 or d.shape[1] != self.config.n_bins:
            raise ValueError(
                f"spectrogram must be frames x {self.config.n_bins}, got {d.shape}"
            )
        object.__setattr__(self, "data", d)

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def bins(self) -> int:
        return self.data.shape[1]


def hann(n: int) -> np.ndarray:
    """Periodic Hann window (sums to a constant at 50% overlap)."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _as_samples(wave) -> np.ndarray:
    if isinstance(wave, Waveform):
        return wave.samples
    return np.asarray(wave, dtype=np.float64)


@lru_cache(maxsize=64)
def _ola_norm(cfg: StftConfig, n_frames: int) -> np.ndarray:
    # Hann squared sums to >= 0.5 wherever two frames overlap; the floor only
    # touches the outermost hop on each side.
    w2 = cfg.window**2
    norm = np.zeros(cfg.signal_length(n_frames))
    for f in range(n_frames):
        norm[f * cfg.hop : f * cfg.hop + cfg.n_fft] += w2
    norm = np.maximum(norm, 0.5)
    norm.flags.writeable = False
    return norm


def frame_signal(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    n_frames = cfg.n_frames(x.size)
    idx = np.arange(cfg.n_fft)[None, :] + cfg.hop * np.arange(n_frames)[:, None]
    return x[idx]


def stft(wave, cfg: StftConfig | None = None) -> ComplexSpectrogram:
    """Frames x bins complex spectrogram of a Hann-windowed signal."""
    cfg = cfg or StftConfig()
    x = _as_samples(wave)
    if x.size < cfg.n_fft:
        raise InputTooShortError(
            f"input too short: {x.size} samples < one frame of {cfg.n_fft}"
        )
    frames = frame_signal(x, cfg) * cfg.window
    return ComplexSpectrogram(np.fft.rfft(frames, axis=1), cfg)


def istft(spec, cfg: StftConfig | None = None, sample_rate: int = DEFAULT_SR) -> Waveform:
    """Weighted overlap-add inverse of :func:`stft`.

    Each frame is inverse-transformed, multiplied by the synthesis (Hann)
    window and overlap-added; the sum is divided by the squared-window sum,
    floored at 0.5. The map is linear in ``spec`` and exact on the interior.
    """
    data, cfg = _spec_data(spec, cfg)
    n_frames = data.shape[0]
    segs = np.fft.irfft(data, n=cfg.n_fft, axis=1) * cfg.window
    out = np.zeros(cfg.signal_length(n_frames))
    for f in range(n_frames):
        out[f * cfg.hop : f * cfg.hop + cfg.n_fft] += segs[f]
    return Waveform(out / _ola_norm(cfg, n_frames), sample_rate)


def istft_adjoint(wave_grad, cfg: StftConfig | None = None) -> ComplexSpectrogram:
    """Adjoint of :func:`istft` under the real inner product on (re, im) parts.

    Used to push a waveform gradient back onto the spectrogram.
    """
    cfg = cfg or StftConfig()
    g = _as_samples(wave_grad)
    n_frames = cfg.n_frames(g.size)
    if n_frames < 1 or cfg.signal_length(n_frames) != g.size:
        raise ValueError(
            f"length {g.size} does not lie on a frame grid (n_fft={cfg.n_fft}, hop={cfg.hop})"
        )
    h = g / _ola_norm(cfg, n_frames)
    segs = frame_signal(h, cfg) * cfg.window
    # adjoint of irfft: interior bins are counted twice in the inverse sum
    weights = np.full(cfg.n_bins, 2.0 / cfg.n_fft)
    weights[0] = weights[-1] = 1.0 / cfg.n_fft
    return ComplexSpectrogram(np.fft.rfft(segs, axis=1) * weights, cfg)


def _spec_data(spec, cfg):
    if isinstance(spec, ComplexSpectrogram):
        cfg = cfg or spec.config
        data = spec.data
    else:
        cfg = cfg or StftConfig()
        data = np.asarray(spec, dtype=np.complex128)
    if data.ndim != 2 or data.shape[1] != cfg.n_bins:
        raise ValueError(
            f"inconsistent bin count: expected {cfg.n_bins}, got shape {data.shape}"
        )
    if data.shape[0] < 1:
        raise InputTooShortError("input too short: spectrogram has no frames")
    return data, cfg


def magnitude(spec) -> np.ndarray:
    data = spec.data if isinstance(spec, ComplexSpectrogram) else np.asarray(spec)
    return np.abs(data)


def read_wav(path) -> Waveform:
    """Read a mono 16-bit PCM WAV file, scaling samples by 1/32768."""
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise WavFormatError(f"{path}: not a RIFF/WAVE file")
    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        chunk_id = raw[pos : pos + 4]
        (size,) = struct.unpack_from("<I", raw, pos + 4)
        body = raw[pos + 8 : pos + 8 + size]
        if chunk_id == b"fmt ":
            if len(body) < 16:
                raise WavFormatError(f"{path}: truncated fmt chunk")
            fmt = struct.unpack_from("<HHIIHH", body)
        elif chunk_id == b"data":
            data = body
        pos += 8 + size + (size & 1)
    if fmt is None or data is None:
        raise WavFormatError(f"{path}: missing fmt or data chunk")
    code, channels, rate, _, _, bits = fmt
    if code != 1:
        raise WavFormatError(f"{path}: unsupported format code {code} (need PCM=1)")
    if channels != 1:
        raise WavFormatError(f"{path}: {channels} channels, only mono is supported")
    if bits != 16:
        raise WavFormatError(f"{path}: {bits}-bit samples, only 16-bit is supported")
    if len(data) < 2:
        raise InputTooShortError(f"input too short: {path} has no sample frames")
    pcm = np.frombuffer(data[: len(data) // 2 * 2], dtype="<i2")
    return Waveform(pcm.astype(np.float64) / 32768.0, rate)


def write_wav(path, wave, sample_rate: int | None = None) -> None:
    """Write mono 16-bit PCM: clamp to [-1, 1], then round(x * 32767)."""
    if isinstance(wave, Waveform):
        sr = sample_rate or wave.sample_rate
        x = wave.samples
    else:
        sr = sample_rate or DEFAULT_SR
        x = np.asarray(wave, dtype=np.float64)
    pcm = np.round(np.clip(x, -1.0, 1.0) * 32767.0).astype("<i2").tobytes()
    header = b"RIFF" + struct.pack("<I", 36 + len(pcm)) + b"WAVE"
    header += b"fmt " + struct.pack("<IHHIIHH", 16, 1, 1, sr, sr * 2, 2, 16)
    header += b"data" + struct.pack("<I", len(pcm))
    Path(path).write_bytes(header + pcm)
