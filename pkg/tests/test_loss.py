import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dfkd import gradcheck
from dfkd.adapter import adapt, split_frame
from dfkd.loss import (
    LossTerm,
    LossWeights,
    banded_kd_loss,
    cosine_loss,
    high_freq_loss,
    kd_loss,
    kl_loss,
    l1_loss,
    l2_loss,
    low_freq_loss,
    si_snr,
    si_snr_db,
    softmax_over_magnitude,
    total_loss,
)


def cplx(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def scalar_cosine(t, s):
    """Loop-based cosine over the (re, im) flattening."""
    tv = [v for z in t for v in (z.real, z.imag)]
    sv = [v for z in s for v in (z.real, z.imag)]
    dot = sum(a * b for a, b in zip(tv, sv))
    nt = math.sqrt(sum(a * a for a in tv))
    ns = math.sqrt(sum(b * b for b in sv))
    return dot / (nt * ns + 1e-12)


def scalar_l2(t, s):
    tv = [v for z in t for v in (z.real, z.imag)]
    sv = [v for z in s for v in (z.real, z.imag)]
    return sum((a - b) ** 2 for a, b in zip(tv, sv)) / len(tv)


class TestCosine:
    def test_identical(self):
        t = np.array([1 + 2j, -3 + 0.5j])
        assert cosine_loss(t, t).value == pytest.approx(0, abs=1e-12)
        assert cosine_loss(t, t, "paper_literal").value == pytest.approx(0, abs=1e-12)

    def test_orthogonal_and_opposite(self):
        t = np.array([1 + 0j, 0j])
        assert cosine_loss(t, np.array([0j, 1 + 0j])).value == pytest.approx(1.0)
        assert cosine_loss(t, -t).value == pytest.approx(2.0)
        assert cosine_loss(t, -t, "paper_literal").value == pytest.approx(-2.0)

    def test_phase_matters(self):
        t = np.array([1 + 0j, 2 + 0j])
        assert cosine_loss(t, 1j * t).value == pytest.approx(1.0)

    def test_zero_norm_is_flagged(self):
        term = cosine_loss(np.ones(3) + 0j, np.zeros(3) + 0j)
        assert term.value == pytest.approx(1.0)
        assert "zero_norm" in term.flags
        assert np.all(np.isfinite(term.grad))

    def test_unknown_form(self):
        with pytest.raises(ValueError):
            cosine_loss(np.ones(2), np.ones(2), "bogus")

    def test_matches_scalar_recomputation(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            t, s = cplx(rng, 17), cplx(rng, 17)
            assert cosine_loss(t, s).value == pytest.approx(1 - scalar_cosine(t, s), rel=1e-12)

    @settings(max_examples=50, deadline=None)
    # the 1e-12 norm guard bounds how small the scales may go
    @given(st.floats(0.1, 1e3), st.floats(0.1, 1e3), st.integers(0, 2**32 - 1))
    def test_scale_invariance(self, a, b, seed):
        rng = np.random.default_rng(seed)
        t, s = cplx(rng, 12), cplx(rng, 12)
        base = cosine_loss(t, s).value
        assert cosine_loss(a * t, b * s).value == pytest.approx(base, abs=1e-10)


class TestBandLosses:
    def test_low_freq_scale_and_identity(self):
        rng = np.random.default_rng(1)
        t = cplx(rng, 4, 20)
        assert low_freq_loss(t, 5 * t).value == pytest.approx(0, abs=1e-12)
        assert low_freq_loss(t, t).value == pytest.approx(0, abs=1e-12)

    def test_low_freq_matches_direct_formula(self):
        rng = np.random.default_rng(2)
        t, s = cplx(rng, 3, 9), cplx(rng, 3, 9)
        want = np.mean([1 - scalar_cosine(a, b) for a, b in zip(t, s)])
        assert low_freq_loss(t, s).value == pytest.approx(want, rel=1e-12)

    def test_ragged_frames(self):
        rng = np.random.default_rng(3)
        ts = [cplx(rng, n) for n in (3, 7, 5)]
        ss = [cplx(rng, n) for n in (3, 7, 5)]
        term = low_freq_loss(ts, ss)
        assert isinstance(term.grad, list) and [g.size for g in term.grad] == [3, 7, 5]

    def test_high_freq_endpoints(self):
        rng = np.random.default_rng(4)
        t, s = cplx(rng, 3, 11), cplx(rng, 3, 11)
        cos_only = low_freq_loss(t, s)
        l2_only = np.mean([l2_loss(a, b).value for a, b in zip(t, s)])
        assert high_freq_loss(t, s, beta=1.0).value == cos_only.value
        np.testing.assert_array_equal(high_freq_loss(t, s, beta=1.0).grad, cos_only.grad)
        assert high_freq_loss(t, s, beta=0.0).value == pytest.approx(l2_only, rel=1e-14)

    def test_high_freq_half_is_average(self):
        rng = np.random.default_rng(5)
        t, s = cplx(rng, 9), cplx(rng, 9)
        want = 0.5 * (1 - scalar_cosine(t, s)) + 0.5 * scalar_l2(t, s)
        assert high_freq_loss(t, s, 0.5).value == pytest.approx(want, rel=1e-12)

    def test_high_freq_affine_in_beta(self):
        rng = np.random.default_rng(6)
        t, s = cplx(rng, 2, 15), cplx(rng, 2, 15)
        v0 = high_freq_loss(t, s, 0.0).value
        v1 = high_freq_loss(t, s, 1.0).value
        for beta in (0.1, 0.37, 0.9):
            assert high_freq_loss(t, s, beta).value == pytest.approx(beta * v1 + (1 - beta) * v0, rel=1e-14)

    def test_beta_range(self):
        with pytest.raises(ValueError):
            high_freq_loss(np.ones(3), np.ones(3), beta=1.5)


class TestElementwise:
    def test_l1_l2_scalars(self):
        assert l2_loss(np.array([0.0]), np.array([2.0])).value == 4.0
        assert l1_loss(np.array([0.0]), np.array([2.0])).value == 2.0
        x = np.array([1 + 1j, 2j])
        assert l1_loss(x, x).value == 0 and l2_loss(x, x).value == 0
        assert np.all(l1_loss(x, x).grad == 0)

    def test_against_loops(self):
        rng = np.random.default_rng(7)
        t, s = cplx(rng, 4, 6), cplx(rng, 4, 6)
        sq = ab = 0.0
        for a, b in zip(t.ravel(), s.ravel()):
            for u, v in ((a.real, b.real), (a.imag, b.imag)):
                sq += (u - v) ** 2
                ab += abs(u - v)
        assert l2_loss(t, s).value == pytest.approx(sq / 48, rel=1e-12)
        assert l1_loss(t, s).value == pytest.approx(ab / 48, rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            l2_loss(np.ones(3), np.ones(4))


class TestKL:
    def test_identical_is_zero(self):
        rng = np.random.default_rng(8)
        t = cplx(rng, 5, 30)
        assert kl_loss(t, t).value == pytest.approx(0, abs=1e-14)

    def test_softmax_normalized(self):
        rng = np.random.default_rng(9)
        p = softmax_over_magnitude(cplx(rng, 6, 40), 2.0)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, rtol=1e-14)

    def test_three_bin_hand_computation(self):
        t = np.array([[1.0, 2.0, 3.0]])
        s = np.array([[3.0, 1.0, 0.5]])
        p = np.exp([1, 2, 3]) / np.exp([1, 2, 3]).sum()
        q = np.exp([3, 1, 0.5]) / np.exp([3, 1, 0.5]).sum()
        want = sum(pi * math.log(pi / qi) for pi, qi in zip(p, q))
        assert kl_loss(t, s).value == pytest.approx(want, rel=1e-12)

    def test_positive_under_perturbation(self):
        rng = np.random.default_rng(10)
        t = cplx(rng, 3, 20)
        s = t.copy()
        s[1, 4] *= 1.5
        assert kl_loss(t, s).value > 0

    def test_bad_temperature(self):
        with pytest.raises(ValueError):
            kl_loss(np.ones(3), np.ones(3), 0.0)


class TestKD:
    @pytest.mark.parametrize("variant", ["dfkd", "l1", "l2", "kl", "fixed_subband", "none"])
    def test_self_distillation_is_zero(self, variant):
        rng = np.random.default_rng(11)
        x = cplx(rng, 6, 257)
        # a one- or two-bin low band leaves ~1e-11 from the additive norm guard
        assert kd_loss(x, x, LossWeights(kd_variant=variant)).value == pytest.approx(0, abs=1e-9)

    def test_fixed_subband_splits_at_128(self):
        rng = np.random.default_rng(12)
        t, s = cplx(rng, 4, 257), cplx(rng, 4, 257)
        term = kd_loss(t, s, LossWeights(kd_variant="fixed_subband"))
        assert np.all(term.parts["m"] == 128)
        assert 128 == round(4000 * 512 / 16000)
        forced = kd_loss(t, s, LossWeights(kd_variant="dfkd"), m=np.full(4, 128))
        assert forced.value == term.value
        np.testing.assert_array_equal(forced.grad, term.grad)

    def test_single_frame_equals_manual_split(self):
        rng = np.random.default_rng(13)
        for _ in range(10):
            t = cplx(rng, 1, 257) * rng.exponential(1, (1, 257))
            s = cplx(rng, 1, 257)
            weights = LossWeights(beta=rng.uniform())
            m = adapt(t)[0]
            tl, th, sl, sh = split_frame(t[0], s[0], m)
            want = low_freq_loss(tl, sl).value + high_freq_loss(th, sh, weights.beta).value
            assert kd_loss(t, s, weights).value == pytest.approx(want, rel=1e-12)

    def test_vectorized_equals_per_frame_composition(self):
        rng = np.random.default_rng(14)
        t = cplx(rng, 12, 257) * rng.exponential(1, (12, 257))
        s = cplx(rng, 12, 257)
        m = adapt(t)
        term = banded_kd_loss(t, s, m, beta=0.3)
        lows, highs = [], []
        grad = np.zeros_like(s)
        for f in range(12):
            tl, th, sl, sh = split_frame(t[f], s[f], m[f])
            lo = low_freq_loss(tl, sl)
            hi = high_freq_loss(th, sh, 0.3)
            lows.append(lo.value)
            highs.append(hi.value)
            grad[f, : m[f] + 1] += lo.grad / 12
            grad[f, m[f]:] += hi.grad / 12
        assert term.parts["l_low"] == pytest.approx(np.mean(lows), rel=1e-12)
        assert term.parts["l_high"] == pytest.approx(np.mean(highs), rel=1e-12)
        np.testing.assert_allclose(term.grad, grad, rtol=1e-10, atol=1e-15)

    def test_full_spectrum_variants(self):
        rng = np.random.default_rng(15)
        t, s = cplx(rng, 3, 257), cplx(rng, 3, 257)
        assert kd_loss(t, s, LossWeights(kd_variant="l2")).value == l2_loss(t, s).value
        assert kd_loss(t, s, LossWeights(kd_variant="l1")).value == l1_loss(t, s).value
        assert kd_loss(t, s, LossWeights(kd_variant="kl")).value == kl_loss(t, s).value
        assert kd_loss(t, s, LossWeights(kd_variant="none")).value == 0.0

    def test_frame_mismatch(self):
        with pytest.raises(ValueError, match="frame"):
            kd_loss(np.ones((3, 257)), np.ones((4, 257)))

    def test_weights_validation(self):
        with pytest.raises(ValueError):
            LossWeights(alpha=1.2)
        with pytest.raises(ValueError):
            LossWeights(kd_variant="abc")


class TestSiSnr:
    def test_identity_hits_guard(self):
        rng = np.random.default_rng(16)
        ref = rng.standard_normal(1000)
        ref /= np.linalg.norm(ref)
        assert si_snr(ref, ref).value == pytest.approx(-120, abs=1.0)

    def test_scale_invariance(self):
        rng = np.random.default_rng(17)
        ref, noise = rng.standard_normal((2, 500))
        est = ref + 0.3 * noise
        base = si_snr_db(est, ref)
        for c in (2.0, 0.01, 37.0):
            assert si_snr_db(c * est, ref) == pytest.approx(base, abs=1e-9)

    def test_equal_power_orthogonal_noise_is_zero_db(self):
        rng = np.random.default_rng(18)
        ref = rng.standard_normal(256)
        noise = rng.standard_normal(256)
        noise -= np.dot(noise, ref) / np.dot(ref, ref) * ref
        noise *= np.linalg.norm(ref) / np.linalg.norm(noise)
        assert si_snr_db(ref + noise, ref) == pytest.approx(0.0, abs=1e-9)

    def test_zero_reference(self):
        with pytest.raises(ValueError, match="zero"):
            si_snr(np.ones(4), np.zeros(4))


class TestTotal:
    def test_endpoints_and_mix(self):
        kd = LossTerm(2.0, np.array([1.0]))
        se = LossTerm(4.0, np.array([3.0]))
        assert total_loss(kd, se, 0.0).value == 4.0
        assert total_loss(kd, se, 1.0).value == 2.0
        mixed = total_loss(kd, se, 0.5)
        assert mixed.value == 3.0 and mixed.grad[0] == 2.0

    def test_alpha_range(self):
        with pytest.raises(ValueError):
            total_loss(LossTerm(0.0), LossTerm(0.0), -0.1)


@pytest.mark.parametrize("name", sorted(gradcheck.LOSS_CASES))
def test_gradients_match_finite_differences(name):
    assert gradcheck.check_loss(name, n_cases=25, seed=1) < gradcheck.TOLERANCE


def test_gradcheck_detects_corruption():
    assert gradcheck.check_loss("l2", n_cases=3, corrupt="l2") > gradcheck.TOLERANCE
