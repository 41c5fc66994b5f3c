"""scikit-learn style wrappers around the adapter, teacher training and distillation.

Inputs are waveforms: a 2-D array (clips x samples) or a list of 1-D arrays
of possibly different lengths. Outputs follow the same list convention.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils import check_array
from sklearn.utils.validation import check_is_fitted

from . import model as mdl
from .adapter import DEFAULT_EPS, adapt
from .data import MixtureSample
from .dsp import DEFAULT_SR, InputTooShortError, StftConfig, istft, stft
from .loss import LossWeights
from .metrics import enhance_spectrum, evaluate
from .train import TrainConfig, distill, train_teacher


def check_waveforms(X, min_length: int = StftConfig().n_fft, name: str = "X") -> list:
    """Validate a batch of waveforms; returns a list of finite float64 1-D arrays."""
    if isinstance(X, np.ndarray) and X.ndim == 1:
        raise ValueError(f"{name} must be a batch of waveforms; wrap a single clip as [x]")
    clips = list(X) if not isinstance(X, np.ndarray) else list(check_array(X, dtype=np.float64))
    if not clips:
        raise ValueError(f"{name} is empty")
    out = []
    for i, x in enumerate(clips):
        x = check_array(np.asarray(getattr(x, "samples", x)), ensure_2d=False, dtype=np.float64,
                        input_name=f"{name}[{i}]")
        if x.ndim != 1:
            raise ValueError(f"{name}[{i}] must be 1-D, got shape {x.shape}")
        if x.size < min_length:
            raise InputTooShortError(f"{name}[{i}] has {x.size} samples, needs >= {min_length}")
        out.append(x)
    return out


def check_pairs(X, y) -> tuple[list, list]:
    mixes = check_waveforms(X, name="X")
    cleans = check_waveforms(y, name="y")
    if len(mixes) != len(cleans):
        raise ValueError(f"X has {len(mixes)} clips but y has {len(cleans)}")
    for i, (m, c) in enumerate(zip(mixes, cleans)):
        if m.shape != c.shape:
            raise ValueError(f"clip {i}: mixture and clean lengths differ ({m.size} vs {c.size})")
    return mixes, cleans


def _samples(mixes, cleans, sample_rate):
    out = []
    for i, (m, c) in enumerate(zip(mixes, cleans)):
        noise = m - c
        snr = 10 * np.log10(np.sum(c**2) / max(np.sum(noise**2), 1e-300))
        out.append(MixtureSample(c, noise, m, float(snr), i, "", sample_rate))
    return out


class FrequencyAdapter(TransformerMixin, BaseEstimator):
    """Per-frame crossover bins of each clip.

    With a ``teacher`` network the crossover is taken from the teacher's
    enhanced spectrum; without one, from the input spectrum itself.
    """

    def __init__(self, teacher=None, eps=DEFAULT_EPS, per_utterance=False):
        self.teacher = teacher
        self.eps = eps
        self.per_utterance = per_utterance

    def fit(self, X, y=None):
        check_waveforms(X)
        self.n_bins_ = StftConfig().n_bins
        return self

    def transform(self, X):
        check_is_fitted(self, "n_bins_")
        net = _network(self.teacher)
        out = []
        for x in check_waveforms(X):
            spec = enhance_spectrum(net, stft(x).data)
            out.append(adapt(spec, self.eps, self.per_utterance))
        return out


def _network(obj):
    if obj is None or isinstance(obj, mdl.MaskNet):
        return obj
    check_is_fitted(obj, "net_")
    return obj.net_


class MaskEnhancer(TransformerMixin, BaseEstimator):
    """Mask-estimation enhancer trained on the enhancement loss alone (a teacher)."""

    def __init__(self, hidden=(512,), epochs=30, lr=1e-3, batch_size=8, seed=0,
                 se_loss="neg_sisnr", sample_rate=DEFAULT_SR):
        self.hidden = hidden
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.seed = seed
        self.se_loss = se_loss
        self.sample_rate = sample_rate

    def _layer_dims(self):
        return (mdl.N_BINS, *tuple(self.hidden), mdl.N_BINS)

    def _train_config(self, weights=None):
        return TrainConfig(weights=weights or LossWeights(kd_variant="none"), lr=self.lr,
                           epochs=self.epochs, batch_size=self.batch_size, seed=self.seed,
                           se_loss=self.se_loss)

    def fit(self, X, y):
        mixes, cleans = check_pairs(X, y)
        samples = _samples(mixes, cleans, self.sample_rate)
        self.net_, self.report_ = train_teacher(samples, self._layer_dims(), self._train_config())
        return self

    def predict(self, X):
        """Enhanced waveforms, one per input clip (trimmed to whole frames)."""
        check_is_fitted(self, "net_")
        return [istft(enhance_spectrum(self.net_, stft(x).data)).samples for x in check_waveforms(X)]

    def transform(self, X):
        return self.predict(X)

    def score(self, X, y):
        """Mean SI-SNR improvement in dB over the unprocessed mixtures."""
        check_is_fitted(self, "net_")
        mixes, cleans = check_pairs(X, y)
        summary, _ = evaluate(self.net_, _samples(mixes, cleans, self.sample_rate))
        return summary["si_snri_mean"]


class DistilledEnhancer(MaskEnhancer):
    """Student enhancer distilled from a fitted ``teacher`` (MaskEnhancer or MaskNet)."""

    def __init__(self, teacher=None, variant="dfkd", alpha=0.5, beta=0.5, hidden=(256,),
                 epochs=30, lr=1e-3, batch_size=8, seed=0, se_loss="neg_sisnr",
                 sample_rate=DEFAULT_SR):
        super().__init__(hidden=hidden, epochs=epochs, lr=lr, batch_size=batch_size, seed=seed,
                         se_loss=se_loss, sample_rate=sample_rate)
        self.teacher = teacher
        self.variant = variant
        self.alpha = alpha
        self.beta = beta

    def fit(self, X, y):
        mixes, cleans = check_pairs(X, y)
        teacher = _network(self.teacher)
        if teacher is None and self.variant != "none":
            raise ValueError(f"variant {self.variant!r} needs a teacher")
        weights = LossWeights(alpha=self.alpha, beta=self.beta, kd_variant=self.variant)
        samples = _samples(mixes, cleans, self.sample_rate)
        self.net_, self.report_ = distill(teacher, samples, self._layer_dims(),
                                          self._train_config(weights))
        return self
