"""Central finite-difference checks for every loss and the end-to-end chain."""

from __future__ import annotations

import numpy as np

from . import model as mdl
from .dsp import StftConfig, istft, istft_adjoint
from .loss import (
    LossWeights,
    cosine_loss,
    high_freq_loss,
    kd_loss,
    kl_loss,
    l1_loss,
    l2_loss,
    low_freq_loss,
    si_snr,
    total_loss,
)

STEP = 1e-5
TOLERANCE = 1e-4


def numeric_grad(f, x, h: float = STEP, coords=None):
    """Central differences of scalar ``f`` at ``x``; complex ``x`` gets re + 1j*im parts.

    ``coords`` restricts the check to a subset of flat indices (others are 0).
    """
    x = np.array(x, copy=True)
    flat = x.reshape(-1)
    grad = np.zeros_like(flat)
    idx = range(flat.size) if coords is None else coords
    units = (1.0, 1j) if np.iscomplexobj(x) else (1.0,)
    for i in idx:
        for u in units:
            orig = flat[i]
            flat[i] = orig + h * u
            up = f(x)
            flat[i] = orig - h * u
            down = f(x)
            flat[i] = orig
            grad[i] += u * (up - down) / (2 * h)
    return grad.reshape(x.shape)


def relative_error(analytic, numeric, coords=None) -> float:
    a = np.asarray(analytic).reshape(-1)
    n = np.asarray(numeric).reshape(-1)
    if coords is not None:
        a, n = a[coords], n[coords]
    scale = max(np.max(np.abs(a)), np.max(np.abs(n)), 1e-12)
    return float(np.max(np.abs(a - n)) / scale)


def _cplx(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def _case_cosine(rng, form):
    n = int(rng.integers(2, 24))
    t, s = _cplx(rng, n), _cplx(rng, n)
    return lambda x: cosine_loss(t, x, form), s


def _case_l1(rng):
    t, s = _cplx(rng, 3, 11), _cplx(rng, 3, 11)
    return lambda x: l1_loss(t, x), s


def _case_l2(rng):
    t, s = _cplx(rng, 3, 11), _cplx(rng, 3, 11)
    return lambda x: l2_loss(t, x), s


def _case_kl(rng):
    tau = rng.uniform(0.5, 3.0)
    t, s = _cplx(rng, 3, 13), _cplx(rng, 3, 13)
    return lambda x: kl_loss(t, x, tau), s


def _case_low(rng):
    form = ("alignment", "paper_literal")[int(rng.integers(2))]
    t, s = _cplx(rng, 3, 9), _cplx(rng, 3, 9)
    return lambda x: low_freq_loss(t, x, form), s


def _case_high(rng):
    beta = rng.uniform(0, 1)
    form = ("alignment", "paper_literal")[int(rng.integers(2))]
    t, s = _cplx(rng, 3, 9), _cplx(rng, 3, 9)
    return lambda x: high_freq_loss(t, x, beta, form), s


def _case_kd(rng):
    weights = LossWeights(beta=rng.uniform(0, 1), kd_variant="dfkd",
                          cosine_form=("alignment", "paper_literal")[int(rng.integers(2))])
    t = _cplx(rng, 3, 33) * rng.exponential(1.0, (3, 33))
    s = _cplx(rng, 3, 33)
    return lambda x: kd_loss(t, x, weights), s


def _case_si_snr(rng):
    ref = rng.standard_normal(64)
    est = ref * rng.uniform(0.2, 2.0) + rng.standard_normal(64) * rng.uniform(0.1, 1.0)
    return lambda x: si_snr(x, ref), est


_STFT_SMALL = StftConfig(n_fft=16, hop=8)


def _case_total(rng):
    """alpha * kd + (1 - alpha) * SI-SNR, both routed onto the student spectrogram."""
    alpha = rng.uniform(0, 1)
    weights = LossWeights(beta=rng.uniform(0, 1))
    frames = 4
    t = _cplx(rng, frames, _STFT_SMALL.n_bins)
    s = _cplx(rng, frames, _STFT_SMALL.n_bins)
    ref = rng.standard_normal(_STFT_SMALL.signal_length(frames))

    def f(x):
        kd = kd_loss(t, x, weights)
        se = si_snr(istft(x, _STFT_SMALL).samples, ref)
        se.grad = istft_adjoint(se.grad, _STFT_SMALL).data
        return total_loss(kd, se, alpha)

    return f, s


LOSS_CASES = {
    "cosine_alignment": lambda rng: _case_cosine(rng, "alignment"),
    "cosine_paper_literal": lambda rng: _case_cosine(rng, "paper_literal"),
    "l1": _case_l1,
    "l2": _case_l2,
    "kl": _case_kl,
    "low_freq": _case_low,
    "high_freq": _case_high,
    "kd_dfkd": _case_kd,
    "si_snr": _case_si_snr,
    "total": _case_total,
}


def check_loss(name: str, n_cases: int = 100, seed: int = 0, corrupt: str | None = None) -> float:
    rng = np.random.default_rng([seed, sorted(LOSS_CASES).index(name)])
    worst = 0.0
    for _ in range(n_cases):
        f, x = LOSS_CASES[name](rng)
        analytic = np.asarray(f(x).grad)
        if corrupt == name:
            analytic = analytic * 1.01
        numeric = numeric_grad(lambda v: f(v).value, x)
        worst = max(worst, relative_error(analytic, numeric))
    return worst


def end_to_end_loss(net, noisy, teacher_out, clean, weights, alpha, stft_cfg):
    """Total loss and parameter gradients through mask, losses and iSTFT."""
    mask, cache = mdl.forward(net, mdl.features(noisy))
    out = mdl.apply_mask(mask, noisy)
    kd = kd_loss(teacher_out, out, weights)
    se = si_snr(istft(out, stft_cfg).samples, clean)
    se.grad = istft_adjoint(se.grad, stft_cfg).data
    total = total_loss(kd, se, alpha)
    grads, _ = mdl.backward(net, cache, mdl.mask_grad(total.grad, noisy))
    return total.value, grads


def check_end_to_end(n_cases: int = 100, seed: int = 0, n_coords: int = 12,
                     corrupt: bool = False) -> float:
    """Compare backprop with finite differences on random parameter coordinates."""
    rng = np.random.default_rng([seed, 999])
    cfg = StftConfig()
    worst = 0.0
    for _ in range(n_cases):
        hidden = int(rng.integers(2, 9))
        net = mdl.init((257, hidden, 257), int(rng.integers(2**31)))
        for b in net.biases:
            b += rng.normal(0, 0.1, b.shape)
        frames = int(rng.integers(2, 5))
        noisy = _cplx(rng, frames, 257)
        teacher_out = noisy * rng.uniform(0, 1, noisy.shape)
        clean = rng.standard_normal(cfg.signal_length(frames))
        weights = LossWeights(beta=rng.uniform(0, 1), kd_variant="dfkd")
        alpha = rng.uniform(0, 1)
        _, grads = end_to_end_loss(net, noisy, teacher_out, clean, weights, alpha, cfg)
        if corrupt:
            grads.weights[0] = grads.weights[0] * 1.01
        for i, (p, g) in enumerate(zip(net.parameters(), grads.parameters())):
            coords = rng.choice(p.size, size=min(n_coords, p.size), replace=False)

            def f(v, i=i):
                trial = net.copy()
                trial.parameters()[i][...] = v
                return end_to_end_loss(trial, noisy, teacher_out, clean, weights, alpha, cfg)[0]

            numeric = numeric_grad(f, p, coords=coords)
            worst = max(worst, relative_error(g, numeric, coords))
    return worst


def run_suite(seed: int = 0, n_cases: int = 100, corrupt: str | None = None) -> dict:
    """Worst relative error per loss, plus ``end_to_end``."""
    results = {name: check_loss(name, n_cases, seed, corrupt) for name in LOSS_CASES}
    results["end_to_end"] = check_end_to_end(n_cases, seed, corrupt=corrupt == "end_to_end")
    return results
