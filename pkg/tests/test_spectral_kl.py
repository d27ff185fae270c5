import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from llfdisc import tensor as T
from llfdisc.spectral_kl import (VARIANCE_EPS, GaussianParams, fourier_kl_loss, fourier_mse_loss,
                                 gaussian_kl, spectral_stats)
from llfdisc.tensor import ShapeError, Tensor

from .test_fourier import dft_oracle

LN2_CASE = math.log(2) + 1 / 8 - 1 / 2


def two_pass(values):
    vals = list(values)
    n = len(vals)
    mean = 0.0
    for v in vals:
        mean += v
    mean /= n
    acc = 0.0
    for v in vals:
        acc += (v - mean) ** 2
    return mean, acc / n + 1e-8


def closed_form_kl(mp, vp, mq, vq):
    sp, sq = math.sqrt(vp), math.sqrt(vq)
    return math.log(sq / sp) + (sp ** 2 + (mp - mq) ** 2) / (2 * sq ** 2) - 0.5


def exact_phase(X):
    # bins equal to their own mirror are real for a real image; drop rounding noise there
    H, W = X.shape[-2:]
    u, v = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    selfconj = (u == (-u) % H) & (v == (-v) % W)
    im = np.where(selfconj, 0.0, X.imag)
    return np.arctan2(im, X.real)


def fkl_oracle(pred, truth):
    Xp, Xt = dft_oracle(pred), dft_oracle(truth)
    d_amp, d_pha = [], []
    for b in range(pred.shape[0]):
        for c in range(pred.shape[1]):
            for out, fn in ((d_amp, np.abs), (d_pha, exact_phase)):
                gp = two_pass(fn(Xp[b, c]).ravel())
                gt = two_pass(fn(Xt[b, c]).ravel())
                out.append(closed_form_kl(*gp, *gt))
    a, p = float(np.mean(d_amp)), float(np.mean(d_pha))
    return a, p, (a + p) / 2


def test_stats_constant_map():
    g = spectral_stats(np.full((1, 1, 3, 3), 0.7))
    assert g.mean.data.item() == pytest.approx(0.7, abs=1e-15)
    assert g.variance.data.item() == VARIANCE_EPS


def test_stats_two_values():
    g = spectral_stats(np.array([0.0, 2.0]).reshape(1, 1, 1, 2))
    assert g.mean.data.item() == 1.0
    assert g.variance.data.item() == 1.0 + 1e-8


def test_stats_match_two_pass(rng):
    x = rng.normal(size=(2, 3, 5, 4))
    g = spectral_stats(x)
    for b in range(2):
        for c in range(3):
            m, v = two_pass(x[b, c].ravel())
            assert abs(g.mean.data[b, c] - m) < 1e-12
            assert abs(g.variance.data[b, c] - v) < 1e-12
    joint = spectral_stats(x, scope="joint")
    assert joint.mean.shape == (2,)
    assert abs(joint.variance.data[1] - two_pass(x[1].ravel())[1]) < 1e-12
    with pytest.raises(ValueError):
        spectral_stats(x, scope="pixel")


def test_kl_hand_values():
    assert gaussian_kl(GaussianParams(0.3, 2.0), GaussianParams(0.3, 2.0)) == 0.0
    assert abs(gaussian_kl(GaussianParams(1.0, 1.0), GaussianParams(0.0, 1.0)) - 0.5) < 1e-12
    assert abs(gaussian_kl(GaussianParams(0.0, 1.0), GaussianParams(0.0, 4.0)) - LN2_CASE) < 1e-12
    assert LN2_CASE == pytest.approx(0.318147, abs=1e-6)


def test_kl_tensor_path_matches_float_path():
    p = GaussianParams(Tensor([0.0, 1.0]), Tensor([1.0, 1.0]))
    q = GaussianParams(Tensor([0.0, 0.0]), Tensor([4.0, 1.0]))
    np.testing.assert_allclose(gaussian_kl(p, q).data, [LN2_CASE, 0.5], atol=1e-12)


def test_kl_rejects_nonpositive_variance():
    with pytest.raises(ValueError):
        gaussian_kl(GaussianParams(0.0, 0.0), GaussianParams(0.0, 1.0))
    with pytest.raises(ValueError):
        gaussian_kl(GaussianParams(Tensor([0.0]), Tensor([1.0])), GaussianParams(Tensor([0.0]), Tensor([-1.0])))


def test_kl_nonnegative_on_random_pairs():
    rng = np.random.default_rng(7)
    mp, mq = rng.normal(0, 3, 10_000), rng.normal(0, 3, 10_000)
    vp, vq = np.exp(rng.uniform(-8, 4, 10_000)), np.exp(rng.uniform(-8, 4, 10_000))
    vals = gaussian_kl(GaussianParams(Tensor(mp), Tensor(vp)), GaussianParams(Tensor(mq), Tensor(vq))).data
    assert (vals >= 0).all()


@settings(max_examples=200, deadline=None)
@given(st.floats(-100, 100), st.floats(1e-8, 1e4), st.floats(-100, 100), st.floats(1e-8, 1e4))
def test_kl_nonnegative_property(mp, vp, mq, vq):
    assert gaussian_kl(GaussianParams(mp, vp), GaussianParams(mq, vq)) >= -1e-12


def test_fkl_identical_is_zero(rng):
    x = rng.random((2, 3, 8, 8))
    assert fourier_kl_loss(x, x).as_floats() == (0.0, 0.0, 0.0)


def test_fkl_brightness_scaling_only_moves_amplitude(rng):
    x = rng.random((1, 3, 8, 8))
    r = fourier_kl_loss(0.25 * x, x)
    assert r.d_pha.item() == 0.0
    assert r.d_amp.item() > 0.0
    assert r.total.item() == pytest.approx(r.d_amp.item() / 2, abs=1e-15)


def test_fkl_matches_pipeline_oracle(rng):
    pred, truth = rng.random((2, 3, 8, 8)), rng.random((2, 3, 8, 8))
    got = fourier_kl_loss(pred, truth).as_floats()
    np.testing.assert_allclose(got, fkl_oracle(pred, truth), rtol=0, atol=1e-10)


def test_fkl_is_asymmetric_and_reverse_flag(rng):
    x, y = rng.random((1, 3, 8, 8)), rng.random((1, 3, 8, 8)) ** 2
    fwd, bwd = fourier_kl_loss(x, y).total.item(), fourier_kl_loss(y, x).total.item()
    assert abs(fwd - bwd) > 1e-6
    assert fourier_kl_loss(x, y, reverse=True).total.item() == pytest.approx(bwd, abs=1e-14)


def test_fkl_joint_scope_differs(rng):
    x, y = rng.random((1, 3, 8, 8)), rng.random((1, 3, 8, 8))
    y[:, 0] *= 0.2
    assert fourier_kl_loss(x, y, scope="joint").total.item() != fourier_kl_loss(x, y).total.item()


def test_circular_shift_leaves_amplitude_term(rng):
    x, y = rng.random((1, 3, 8, 8)), rng.random((1, 3, 8, 8))
    shifted = np.roll(x, (3, 2), axis=(2, 3))
    a = fourier_kl_loss(x, y)
    b = fourier_kl_loss(shifted, y)
    assert abs(a.d_amp.item() - b.d_amp.item()) < 1e-10


def test_fkl_nonnegative_and_breakdown_invariant(rng):
    for _ in range(20):
        r = fourier_kl_loss(rng.random((1, 3, 6, 6)), rng.random((1, 3, 6, 6)))
        d_amp, d_pha, total = r.as_floats()
        assert d_amp >= 0 and d_pha >= 0
        assert total == pytest.approx((d_amp + d_pha) / 2, abs=1e-15)


def test_fkl_gradient(rng):
    pred, truth = rng.random((1, 3, 8, 8)), Tensor(rng.random((1, 3, 8, 8)))
    assert T.gradient_check(lambda p: fourier_kl_loss(p, truth).total, Tensor(pred)) < 1e-4


def test_fkl_shape_mismatch():
    with pytest.raises(ShapeError):
        fourier_kl_loss(np.zeros((1, 3, 4, 4)), np.zeros((1, 3, 4, 2)))


def test_fourier_mse_oracle(rng):
    pred, truth = rng.random((1, 3, 6, 8)), rng.random((1, 3, 6, 8))
    Xp, Xt = dft_oracle(pred), dft_oracle(truth)
    amp = np.mean((np.abs(Xp) - np.abs(Xt)) ** 2)
    pha = np.mean((exact_phase(Xp) - exact_phase(Xt)) ** 2)
    assert abs(fourier_mse_loss(pred, truth).item() - (amp + pha)) < 1e-10
