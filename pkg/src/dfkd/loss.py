"""Band-adaptive distillation losses, baseline KD losses and SI-SNR.

Every loss returns a :class:`LossTerm` holding the scalar value and its
gradient with respect to the student input. For complex inputs the gradient
is stored as a complex array ``dL/d(re) + 1j * dL/d(im)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .adapter import DEFAULT_EPS, adapt, band_masks
from .dsp import ComplexSpectrogram

NORM_GUARD = 1e-12
FIXED_CROSSOVER = 128  # 4 kHz at 16 kHz sampling, n_fft = 512

KD_VARIANTS = ("dfkd", "l1", "l2", "kl", "fixed_subband", "none")
COSINE_FORMS = ("alignment", "paper_literal")


@dataclass
class LossTerm:
    value: float
    grad: np.ndarray | list | None = None
    parts: dict = field(default_factory=dict)
    flags: tuple = ()


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.5
    beta: float = 0.5
    kd_variant: str = "dfkd"
    cosine_form: str = "alignment"
    temperature: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.kd_variant not in KD_VARIANTS:
            raise ValueError(f"unknown kd_variant {self.kd_variant!r}; choose from {KD_VARIANTS}")
        if self.cosine_form not in COSINE_FORMS:
            raise ValueError(f"unknown cosine_form {self.cosine_form!r}")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


def _check_same_shape(t, s):
    if t.shape != s.shape:
        raise ValueError(f"shape mismatch: teacher {t.shape} vs student {s.shape}")


def _real_views(t, s):
    """Float64 views of a teacher/student pair; complex entries become (re, im) pairs."""
    if np.iscomplexobj(t) or np.iscomplexobj(s):
        t = np.ascontiguousarray(t, dtype=np.complex128)
        s = np.ascontiguousarray(s, dtype=np.complex128)
        return t.view(np.float64), s.view(np.float64), True
    return np.asarray(t, dtype=np.float64), np.asarray(s, dtype=np.float64), False


def _mask_weights(mask, is_complex):
    mask = np.asarray(mask, dtype=np.float64)
    return np.repeat(mask, 2, axis=1) if is_complex else mask


def _rowdot(a, b):
    return np.einsum("ij,ij->i", a, b)


def _masked_cosine(t, s, mask, form):
    """Row-wise cosine loss over the masked entries of 2-D arrays."""
    tv, sv, is_complex = _real_views(t, s)
    w = _mask_weights(mask, is_complex)
    tm = tv * w
    sm = sv * w
    dot = _rowdot(tm, sm)
    nt = np.sqrt(_rowdot(tm, tm))
    ns = np.sqrt(_rowdot(sm, sm))
    denom = nt * ns + NORM_GUARD
    cos = dot / denom
    safe_ns = np.where(ns > 0, ns, 1.0)
    coef = np.where(ns > 0, dot * nt / (safe_ns * denom**2), 0.0)
    dcos = tm / denom[:, None] - coef[:, None] * sm
    if is_complex:
        dcos = dcos.view(np.complex128)
    degenerate = bool(np.any(nt == 0) or np.any(ns == 0))
    if form == "paper_literal":
        return cos - 1.0, dcos, degenerate
    if form == "alignment":
        return 1.0 - cos, -dcos, degenerate
    raise ValueError(f"unknown cosine form {form!r}")


def _masked_l2(t, s, mask):
    tv, sv, is_complex = _real_views(t, s)
    w = _mask_weights(mask, is_complex)
    diff = (sv - tv) * w
    count = w.sum(axis=1)
    vals = _rowdot(diff, diff) / count
    grad = diff * (2.0 / count)[:, None]
    if is_complex:
        grad = grad.view(np.complex128)
    return vals, grad


def cosine_loss(t_band, s_band, form: str = "alignment") -> LossTerm:
    """Cosine loss between two vectors flattened to real (re, im) form.

    ``alignment`` gives ``1 - cos`` (minimized at alignment); ``paper_literal``
    gives ``cos - 1`` in ``[-2, 0]``.
    """
    t = np.asarray(t_band)
    s = np.asarray(s_band)
    _check_same_shape(t, s)
    if t.size < 1:
        raise ValueError("cosine_loss needs at least one element")
    row_t, row_s = t.reshape(1, -1), s.reshape(1, -1)
    vals, grad, degenerate = _masked_cosine(row_t, row_s, np.ones(row_t.shape, bool), form)
    flags = ("zero_norm",) if degenerate else ()
    return LossTerm(float(vals[0]), grad.reshape(s.shape), flags=flags)


def l2_loss(t, s) -> LossTerm:
    """Mean squared difference over real and imaginary parts."""
    t = np.asarray(t)
    s = np.asarray(s)
    _check_same_shape(t, s)
    diff = s - t
    n = diff.size * (2 if np.iscomplexobj(diff) else 1)
    return LossTerm(float(np.sum(np.abs(diff) ** 2) / n), 2.0 * diff / n)


def l1_loss(t, s) -> LossTerm:
    """Mean absolute difference over real and imaginary parts (subgradient 0 at ties)."""
    t = np.asarray(t)
    s = np.asarray(s)
    _check_same_shape(t, s)
    diff = s - t
    if np.iscomplexobj(diff):
        n = 2 * diff.size
        value = np.sum(np.abs(diff.real)) + np.sum(np.abs(diff.imag))
        grad = (np.sign(diff.real) + 1j * np.sign(diff.imag)) / n
    else:
        n = diff.size
        value = np.sum(np.abs(diff))
        grad = np.sign(diff) / n
    return LossTerm(float(value / n), grad)


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_over_magnitude(spec, temperature: float = 1.0) -> np.ndarray:
    return _softmax(np.abs(np.atleast_2d(spec)) / temperature)


def kl_loss(t, s, temperature: float = 1.0) -> LossTerm:
    """Mean over frames of KL(teacher || student) between softmaxed magnitudes."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    t = np.asarray(t)
    s = np.asarray(s)
    _check_same_shape(t, s)
    shape = s.shape
    t2, s2 = np.atleast_2d(t), np.atleast_2d(s)
    mag_s = np.abs(s2)
    z_t = np.abs(t2) / temperature
    z_s = mag_s / temperature
    log_p = z_t - z_t.max(axis=1, keepdims=True)
    log_p -= np.log(np.exp(log_p).sum(axis=1, keepdims=True))
    log_q = z_s - z_s.max(axis=1, keepdims=True)
    log_q -= np.log(np.exp(log_q).sum(axis=1, keepdims=True))
    p, q = np.exp(log_p), np.exp(log_q)
    n_frames = t2.shape[0]
    value = float(np.sum(p * (log_p - log_q)) / n_frames)
    dz = (q - p) / (temperature * n_frames)
    # d|s|/ds is the unit phasor; zero where the magnitude vanishes
    phasor = np.divide(s2, mag_s, out=np.zeros_like(s2), where=mag_s > 0)
    return LossTerm(value, (dz * phasor).reshape(shape))


def _as_frame_list(x):
    if isinstance(x, (list, tuple)):
        return [np.asarray(v) for v in x], True
    arr = np.asarray(x)
    if arr.ndim == 1:
        return [arr], False
    return list(arr), False


def _band_loss(t_frames, s_frames, per_frame):
    ts, ragged = _as_frame_list(t_frames)
    ss, _ = _as_frame_list(s_frames)
    if len(ts) != len(ss):
        raise ValueError("teacher and student have different frame counts")
    terms = [per_frame(t, s) for t, s in zip(ts, ss)]
    n = len(terms)
    value = sum(term.value for term in terms) / n
    grads = [term.grad / n for term in terms]
    if ragged:
        grad = grads
    else:
        grad = np.asarray(grads).reshape(np.shape(s_frames))
    flags = tuple(sorted({f for term in terms for f in term.flags}))
    return LossTerm(value, grad, flags=flags)


def low_freq_loss(t_low, s_low, form: str = "alignment") -> LossTerm:
    """Cosine loss on low-band slices, averaged over frames.

    Accepts one slice, a frames x bins array, or a list of per-frame slices.
    """
    return _band_loss(t_low, s_low, lambda t, s: cosine_loss(t, s, form))


def high_freq_loss(t_high, s_high, beta: float = 0.5, form: str = "alignment") -> LossTerm:
    """``beta * cosine + (1 - beta) * l2`` on high-band slices, averaged over frames."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")

    def per_frame(t, s):
        c = cosine_loss(t, s, form)
        q = l2_loss(t, s)
        return LossTerm(beta * c.value + (1 - beta) * q.value,
                        beta * c.grad + (1 - beta) * q.grad, flags=c.flags)

    return _band_loss(t_high, s_high, per_frame)


def _bin_products(t, s):
    """Per-bin Re(conj(t) s), |t|^2 and |s|^2 as real arrays."""
    if not (np.iscomplexobj(t) or np.iscomplexobj(s)):
        t = np.asarray(t, dtype=np.float64)
        s = np.asarray(s, dtype=np.float64)
        return t * s, t * t, s * s
    tr, ti, sr, si = t.real, t.imag, s.real, s.imag
    return tr * sr + ti * si, tr * tr + ti * ti, sr * sr + si * si


def _band_cosine(ts, tt, ss, w):
    """Masked row cosines plus the row scalars of their gradient ``t/den - coef*s``."""
    dot = _rowdot(ts, w)
    nt = np.sqrt(_rowdot(tt, w))
    ns = np.sqrt(_rowdot(ss, w))
    denom = nt * ns + NORM_GUARD
    safe_ns = np.where(ns > 0, ns, 1.0)
    coef = np.where(ns > 0, dot * nt / (safe_ns * denom**2), 0.0)
    degenerate = bool(np.any(nt == 0) or np.any(ns == 0))
    return dot / denom, 1.0 / denom, coef, degenerate


def banded_kd_loss(t, s, m, beta: float = 0.5, form: str = "alignment") -> LossTerm:
    """Low-band cosine plus high-band cosine/L2 mix, split at per-frame crossovers ``m``.

    Vectorized over frames; equals splitting every frame and summing
    :func:`low_freq_loss` and :func:`high_freq_loss`.
    """
    t = np.atleast_2d(t)
    s = np.atleast_2d(s)
    _check_same_shape(t, s)
    if form not in COSINE_FORMS:
        raise ValueError(f"unknown cosine form {form!r}")
    m = np.broadcast_to(np.asarray(m), (t.shape[0],))
    if np.any(m < 0) or np.any(m > t.shape[1] - 2):
        raise ValueError("crossover index out of range")
    low, high = band_masks(m, t.shape[1])
    low = low.astype(np.float64)
    high = high.astype(np.float64)
    n = t.shape[0]
    ts, tt, ss = _bin_products(t, s)

    cos_l, inv_l, coef_l, deg_l = _band_cosine(ts, tt, ss, low)
    cos_h, inv_h, coef_h, deg_h = _band_cosine(ts, tt, ss, high)
    # alignment minimizes 1 - cos; the literal form is cos - 1
    sign = -1.0 if form == "alignment" else 1.0
    low_v = sign * (cos_l - 1.0)
    cos_v = sign * (cos_h - 1.0)

    width = 2 if np.iscomplexobj(t) or np.iscomplexobj(s) else 1
    count = high.sum(axis=1) * width
    sq = ss - 2.0 * ts + tt
    l2_v = _rowdot(np.maximum(sq, 0.0), high) / count
    l2_c = (2.0 / count)[:, None] * high

    high_v = beta * cos_v + (1 - beta) * l2_v
    l_low = float(np.sum(low_v) / n)
    l_high = float(np.sum(high_v) / n)
    c_t = sign * (inv_l[:, None] * low + beta * inv_h[:, None] * high) - (1 - beta) * l2_c
    c_s = -sign * (coef_l[:, None] * low + beta * coef_h[:, None] * high) + (1 - beta) * l2_c
    grad = (t * c_t + s * c_s) / n
    flags = ("zero_norm",) if (deg_l or deg_h) else ()
    return LossTerm(l_low + l_high, grad, parts={"l_low": l_low, "l_high": l_high}, flags=flags)


def kd_loss(teacher_spec, student_spec, weights: LossWeights | None = None,
            eps: float = DEFAULT_EPS, m=None) -> LossTerm:
    """Distillation loss for the configured variant, averaged over frames.

    ``dfkd`` takes the crossover of each frame from the teacher; passing ``m``
    overrides it. ``fixed_subband`` splits every frame at bin 128. ``l1``,
    ``l2`` and ``kl`` compare the full spectrum; ``none`` is identically 0.
    """
    weights = weights or LossWeights()
    t = np.atleast_2d(_spec_array(teacher_spec))
    s = np.atleast_2d(_spec_array(student_spec))
    if t.shape[0] != s.shape[0]:
        raise ValueError(f"mismatched frame counts: {t.shape[0]} vs {s.shape[0]}")
    _check_same_shape(t, s)
    variant = weights.kd_variant
    if variant == "none":
        return LossTerm(0.0, np.zeros_like(s))
    if variant == "l1":
        return l1_loss(t, s)
    if variant == "l2":
        return l2_loss(t, s)
    if variant == "kl":
        return kl_loss(t, s, weights.temperature)
    if variant == "fixed_subband":
        m = np.full(t.shape[0], FIXED_CROSSOVER)
    elif m is None:
        m = adapt(t, eps)
    term = banded_kd_loss(t, s, m, weights.beta, weights.cosine_form)
    term.parts["m"] = np.broadcast_to(np.asarray(m), (t.shape[0],))
    return term


def _spec_array(x):
    return x.data if isinstance(x, ComplexSpectrogram) else np.asarray(x)


def si_snr_db(est, ref) -> float:
    est = np.asarray(getattr(est, "samples", est), dtype=np.float64)
    ref = np.asarray(getattr(ref, "samples", ref), dtype=np.float64)
    return -si_snr(est, ref).value


def si_snr(est, ref) -> LossTerm:
    """Negative scale-invariant SNR (dB) of ``est`` against ``ref``, with gradient."""
    est = np.asarray(getattr(est, "samples", est), dtype=np.float64)
    ref = np.asarray(getattr(ref, "samples", ref), dtype=np.float64)
    if est.shape != ref.shape:
        raise ValueError(f"length mismatch: {est.shape} vs {ref.shape}")
    ref_energy = np.dot(ref, ref)
    if ref_energy == 0:
        raise ValueError("si_snr: reference has zero energy")
    target = (np.dot(est, ref) / ref_energy) * ref
    noise = est - target
    p_target = np.dot(target, target)
    p_noise = np.dot(noise, noise) + NORM_GUARD
    db = 10.0 * np.log10(p_target / p_noise)
    scale = 10.0 / np.log(10.0)
    grad = -scale * (2.0 * target / p_target - 2.0 * noise / p_noise)
    return LossTerm(float(-db), grad)


def total_loss(kd: LossTerm, se: LossTerm, alpha: float = 0.5) -> LossTerm:
    """Convex combination ``alpha * kd + (1 - alpha) * se`` of values and gradients."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    value = alpha * kd.value + (1 - alpha) * se.value
    grad = None
    if kd.grad is not None and se.grad is not None:
        grad = alpha * np.asarray(kd.grad) + (1 - alpha) * np.asarray(se.grad)
    parts = {"l_kd": kd.value, "l_se": se.value, **kd.parts}
    return LossTerm(value, grad, parts=parts, flags=kd.flags + se.flags)
