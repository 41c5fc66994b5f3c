"""Deterministic synthetic noisy-speech corpus.

Clean "speech" is a harmonic source with drifting pitch, a low-pass spectral
tilt and syllable-rate gating. Noise comes in a few spectrally distinct kinds.
Mixtures follow the usual protocol: SNR drawn uniformly from [0, 20] dB.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dsp import DEFAULT_SR, read_wav, write_wav

NOISE_KINDS = ("white", "pink", "hiss", "babble_proxy")
PEAK_LIMIT = 0.9
MANIFEST_FIELDS = ("id", "split", "seed", "kind", "snr_db", "clean_path", "noise_path", "mix_path")


@dataclass(frozen=True)
class MixtureSample:
    clean: np.ndarray
    noise: np.ndarray
    mixture: np.ndarray
    snr_db: float
    seed: int = 0
    kind: str = ""
    sample_rate: int = DEFAULT_SR

    def __post_init__(self):
        if not self.clean.shape == self.noise.shape == self.mixture.shape:
            raise ValueError("clean, noise and mixture must have equal lengths")


@dataclass(frozen=True)
class CorpusConfig:
    n_train: int = 200
    n_test: int = 50
    clip_seconds: float = 2.0
    sample_rate: int = DEFAULT_SR
    master_seed: int = 0
    noise_kinds: tuple = ("hiss", "white", "babble_proxy")
    snr_low: float = 0.0
    snr_high: float = 20.0

    def __post_init__(self):
        if self.n_train < 0 or self.n_test < 0 or self.n_train + self.n_test == 0:
            raise ValueError("corpus needs a positive number of clips")
        if self.clip_seconds <= 0 or self.sample_rate <= 0:
            raise ValueError("clip_seconds and sample_rate must be positive")
        unknown = set(self.noise_kinds) - set(NOISE_KINDS)
        if unknown or not self.noise_kinds:
            raise ValueError(f"unknown noise kinds {sorted(unknown)}; choose from {NOISE_KINDS}")
        if not self.snr_low <= self.snr_high:
            raise ValueError("snr_low must not exceed snr_high")


@dataclass
class Corpus:
    train: list = field(default_factory=list)
    test: list = field(default_factory=list)
    config: CorpusConfig | None = None


def hash64(*parts) -> int:
    key = ":".join(str(p) for p in parts).encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


def _n_samples(seconds, sample_rate):
    n = int(round(seconds * sample_rate))
    if n <= 0:
        raise ValueError("duration must be positive")
    return n


def _band_energy(x, sample_rate, lo, hi):
    spec = np.abs(np.fft.rfft(x)) ** 2
    freqs = np.fft.rfftfreq(x.size, 1.0 / sample_rate)
    return float(spec[(freqs >= lo) & (freqs < hi)].sum())


def gen_speechlike(seed: int, seconds: float = 2.0, sample_rate: int = DEFAULT_SR) -> np.ndarray:
    """Harmonic, syllable-gated speech stand-in, peak-normalized to 0.5."""
    rng = np.random.default_rng(seed)
    n = _n_samples(seconds, sample_rate)
    t = np.arange(n) / sample_rate

    base = rng.uniform(130.0, 250.0)
    drift = sum(
        rng.uniform(10.0, 35.0) * np.sin(2 * np.pi * rng.uniform(0.2, 2.0) * t + rng.uniform(0, 2 * np.pi))
        for _ in range(2)
    )
    f0 = np.clip(base + drift, 100.0, 300.0)
    phase = 2 * np.pi * np.cumsum(f0) / sample_rate

    n_harm = int(rng.integers(8, 13))
    cutoff = rng.uniform(700.0, 1400.0)
    voiced = np.zeros(n)
    for h in range(1, n_harm + 1):
        tilt = 1.0 / (1.0 + (h * f0 / cutoff) ** 2)
        voiced += rng.uniform(0.5, 1.0) * tilt * np.sin(h * phase + rng.uniform(0, 2 * np.pi))

    # faint fricative texture between 4 and 7 kHz
    white = rng.standard_normal(n)
    spec = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)
    spec[(freqs < 4000.0) | (freqs > 7000.0)] = 0.0
    fric = np.fft.irfft(spec, n)
    fric *= 0.03 * np.std(voiced) / (np.std(fric) + 1e-12)

    rate = rng.uniform(3.0, 5.0)
    gate = np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi))
    envelope = np.clip((gate - 0.2) / 0.8, 0.0, None) ** 0.7

    x = envelope * (voiced + fric)
    peak = np.max(np.abs(x))
    if peak == 0:
        raise ValueError("degenerate speech-like signal")
    return 0.5 * x / peak


def gen_noise(kind: str, seed: int, seconds: float = 2.0, sample_rate: int = DEFAULT_SR) -> np.ndarray:
    """Unit-RMS noise of the given kind."""
    if kind not in NOISE_KINDS:
        raise ValueError(f"unknown noise kind {kind!r}; choose from {NOISE_KINDS}")
    rng = np.random.default_rng(seed)
    n = _n_samples(seconds, sample_rate)
    if kind == "babble_proxy":
        subs = [gen_speechlike(int(rng.integers(2**63)), seconds, sample_rate) for _ in range(4)]
        x = np.sum(subs, axis=0)
    else:
        x = rng.standard_normal(n)
        if kind != "white":
            spec = np.fft.rfft(x)
            freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)
            if kind == "pink":
                gain = np.zeros_like(freqs)
                gain[1:] = 1.0 / np.sqrt(freqs[1:])
            else:
                gain = 1.0 / (1.0 + (4500.0 / np.maximum(freqs, 1.0)) ** 8)
            x = np.fft.irfft(spec * gain, n)
    return x / np.sqrt(np.mean(x**2))


def mix_at_snr(clean, noise, snr_db: float, seed: int = 0, kind: str = "",
               sample_rate: int = DEFAULT_SR, peak_limit: float | None = PEAK_LIMIT) -> MixtureSample:
    """Scale ``noise`` so that clean-to-noise energy is ``snr_db``, then add.

    If the mixture peak exceeds ``peak_limit`` all three signals are scaled
    by the same factor, which leaves the SNR unchanged.
    """
    clean = np.asarray(getattr(clean, "samples", clean), dtype=np.float64)
    noise = np.asarray(getattr(noise, "samples", noise), dtype=np.float64)
    if clean.shape != noise.shape:
        raise ValueError("clean and noise must have equal lengths")
    c_norm = np.linalg.norm(clean)
    n_norm = np.linalg.norm(noise)
    if c_norm == 0 or n_norm == 0:
        raise ValueError("mix_at_snr: zero-energy input")
    g = (c_norm / n_norm) * 10.0 ** (-snr_db / 20.0)
    scaled = g * noise
    mixture = clean + scaled
    if peak_limit is not None:
        peak = np.max(np.abs(mixture))
        if peak > peak_limit:
            k = peak_limit / peak
            clean, scaled, mixture = k * clean, k * scaled, k * mixture
    return MixtureSample(clean, scaled, mixture, float(snr_db), seed, kind, sample_rate)


def achieved_snr(sample: MixtureSample) -> float:
    return float(10.0 * np.log10(np.sum(sample.clean**2) / np.sum(sample.noise**2)))


def make_sample(cfg: CorpusConfig, split: str, index: int) -> MixtureSample:
    seed = hash64(cfg.master_seed, split, index)
    rng = np.random.default_rng(seed)
    snr = float(rng.uniform(cfg.snr_low, cfg.snr_high))
    kind = cfg.noise_kinds[int(rng.integers(len(cfg.noise_kinds)))]
    clean_seed, noise_seed = (int(s) for s in rng.integers(2**63, size=2))
    clean = gen_speechlike(clean_seed, cfg.clip_seconds, cfg.sample_rate)
    noise = gen_noise(kind, noise_seed, cfg.clip_seconds, cfg.sample_rate)
    return mix_at_snr(clean, noise, snr, seed, kind, cfg.sample_rate)


def build_corpus(cfg: CorpusConfig | None = None) -> Corpus:
    cfg = cfg or CorpusConfig()
    return Corpus(
        [make_sample(cfg, "train", i) for i in range(cfg.n_train)],
        [make_sample(cfg, "test", i) for i in range(cfg.n_test)],
        cfg,
    )


def save_corpus(corpus: Corpus, out_dir) -> Path:
    """Write clean/noise/mix WAV triples and ``manifest.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for split, samples in (("train", corpus.train), ("test", corpus.test)):
        (out / split).mkdir(exist_ok=True)
        for i, s in enumerate(samples):
            ident = f"{split}_{i:05d}"
            paths = {}
            for part in ("clean", "noise", "mix"):
                rel = f"{split}/{ident}_{part}.wav"
                wave = s.mixture if part == "mix" else getattr(s, part)
                write_wav(out / rel, wave, s.sample_rate)
                paths[f"{part}_path"] = rel
            rows.append({"id": ident, "split": split, "seed": s.seed, "kind": s.kind,
                         "snr_db": repr(s.snr_db), **paths})
    with open(out / "manifest.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=MANIFEST_FIELDS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return out / "manifest.csv"


def load_corpus(corpus_dir) -> Corpus:
    root = Path(corpus_dir)
    manifest = root / "manifest.csv"
    if not manifest.exists():
        raise FileNotFoundError(f"no manifest.csv in {root}")
    corpus = Corpus()
    with open(manifest, newline="") as fh:
        for row in csv.DictReader(fh):
            clean = read_wav(root / row["clean_path"])
            noise = read_wav(root / row["noise_path"])
            mix = read_wav(root / row["mix_path"])
            sample = MixtureSample(clean.samples, noise.samples, mix.samples,
                                   float(row["snr_db"]), int(row["seed"]), row["kind"],
                                   mix.sample_rate)
            getattr(corpus, row["split"]).append(sample)
    return corpus


def band_energy_ratio(x, sample_rate: int = DEFAULT_SR, split_hz: float = 4000.0) -> float:
    """Energy above ``split_hz`` divided by energy below it."""
    x = np.asarray(getattr(x, "samples", x))
    return _band_energy(x, sample_rate, split_hz, np.inf) / _band_energy(x, sample_rate, 0.0, split_hz)


