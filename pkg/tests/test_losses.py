import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import adversarial_loop, bce_loop, conv2d_loop, feature_match_loop
from sketchinpaint.losses import (
    HRFExtractor,
    LossConfig,
    LossReport,
    PatchDiscriminator,
    adversarial_losses,
    adversarial_terms,
    bce_structure_loss,
    bce_structure_loss_logits,
    feature_match_loss,
    gradient_penalty,
    hrf_loss,
    l1_unmasked,
)
from sketchinpaint.tensor import ContractError, DimensionError, Tensor, backward, grad_check
from sketchinpaint.tensor.functional import nearest_index

LN2 = math.log(2)


# -- structure BCE ---------------------------------------------------------------

def test_bce_exact_prediction_is_near_zero():
    rng = np.random.default_rng(0)
    gt = (rng.random((2, 2, 8, 8)) < 0.3).astype(np.float64)
    le, ll = bce_structure_loss(Tensor(gt), gt[:, :1], gt[:, 1:])
    assert float(le.data) <= 1e-6 and float(ll.data) <= 1e-6


def test_bce_half_is_ln2():
    gt = (np.random.default_rng(1).random((1, 1, 5, 7)) < 0.5).astype(float)
    le, ll = bce_structure_loss(Tensor(np.full((1, 2, 5, 7), 0.5)), gt, 1 - gt)
    assert float(le.data) == pytest.approx(LN2, abs=1e-12) and float(ll.data) == pytest.approx(LN2, abs=1e-12)


def test_bce_matches_loop():
    rng = np.random.default_rng(2)
    p = rng.random((2, 2, 6, 6))
    p[0, 0, 0, :3] = [0.0, 1.0, 1e-9]  # exercise the clamp
    e, l = rng.random((2, 1, 6, 6)), (rng.random((2, 1, 6, 6)) < 0.5).astype(float)
    le, ll = bce_structure_loss(Tensor(p), e, l)
    assert abs(float(le.data) - bce_loop(p[:, 0], e)) <= 1e-6
    assert abs(float(ll.data) - bce_loop(p[:, 1], l)) <= 1e-6


def test_bce_logits_agree_with_probabilities():
    rng = np.random.default_rng(3)
    z = rng.standard_normal((2, 2, 4, 4))
    e, l = rng.random((2, 1, 4, 4)), rng.random((2, 1, 4, 4))
    a = bce_structure_loss_logits(Tensor(z), e, l)
    b = bce_structure_loss(Tensor(1 / (1 + np.exp(-z))), e, l)
    assert all(abs(float(x.data) - float(y.data)) <= 1e-12 for x, y in zip(a, b))


def test_bce_shape_mismatch():
    with pytest.raises(DimensionError):
        bce_structure_loss(Tensor(np.zeros((1, 2, 4, 4))), np.zeros((1, 1, 4, 5)), np.zeros((1, 1, 4, 4)))


def test_bce_gradient_float64():
    rng = np.random.default_rng(4)
    p = Tensor(rng.uniform(0.05, 0.95, (1, 2, 4, 4)))
    e, l = rng.random((1, 1, 4, 4)), rng.random((1, 1, 4, 4))
    assert grad_check(lambda p: sum(bce_structure_loss(p, e, l), Tensor(0.0)), p) <= 1e-5


# -- L1 on known pixels ------------------------------------------------------------

def test_l1_examples():
    m = np.array([[1, 0], [0, 0]], float)
    diff = np.array([[5, 1], [2, 3]], float)
    assert float(l1_unmasked(Tensor(diff), np.zeros((2, 2)), m).data) == 1.5
    assert float(l1_unmasked(Tensor(diff), diff, m).data) == 0
    assert float(l1_unmasked(Tensor(diff), np.zeros((2, 2)), np.ones((2, 2))).data) == 0
    assert float(l1_unmasked(Tensor(diff), np.zeros((2, 2)), m, normalize="unmasked").data) == 2.0


def test_l1_broadcasts_mask_over_channels():
    rng = np.random.default_rng(5)
    pred, gt = rng.random((2, 3, 4, 4)), rng.random((2, 3, 4, 4))
    m = (rng.random((2, 1, 4, 4)) < 0.5).astype(float)
    ref = np.mean(np.abs(gt - pred) * (1 - m))
    assert abs(float(l1_unmasked(Tensor(pred), gt, m).data) - ref) <= 1e-12
    with pytest.raises(DimensionError):
        l1_unmasked(Tensor(pred), gt, np.zeros((2, 1, 3, 4)))


def test_l1_gradient_float64():
    rng = np.random.default_rng(6)
    pred = Tensor(rng.random((1, 3, 4, 4)))
    gt = rng.random((1, 3, 4, 4))
    m = (rng.random((1, 1, 4, 4)) < 0.5).astype(float)
    assert grad_check(lambda p: l1_unmasked(p, gt, m), pred) <= 1e-5


# -- discriminator terms ------------------------------------------------------------

def _disc(seed=7, dtype=np.float64, **kw):
    rng = np.random.default_rng(seed)
    d = PatchDiscriminator(rng, **kw).to(dtype)
    for c in d.convs:
        c.bias.data = rng.standard_normal(c.bias.shape) * 0.1
    return d


def test_discriminator_patch_grid_and_clamp():
    d = _disc()
    logits, feats = d(Tensor(np.random.default_rng(0).random((2, 3, 32, 32))))
    assert logits.shape == (2, 1, 2, 2) and [f.shape[2] for f in feats] == [16, 8, 4]
    d.convs[-1].bias.data[:] = 1e3
    assert np.all(d(Tensor(np.zeros((1, 3, 16, 16))))[0].data == 20)


def test_zero_logits_give_two_ln2():
    rng = np.random.default_rng(8)
    z = Tensor(np.zeros((2, 1, 4, 4)))
    for m in (np.zeros((2, 1, 16, 16)), np.ones((2, 1, 16, 16)), (rng.random((2, 1, 16, 16)) < 0.4).astype(float)):
        l_d, l_g = adversarial_terms(z, z, m)
        assert float(l_d.data) == pytest.approx(2 * LN2, abs=1e-12)
        assert float(l_g.data) == pytest.approx(LN2, abs=1e-12)


def test_nothing_masked_treats_fake_as_real():
    rng = np.random.default_rng(9)
    zr, zf = rng.standard_normal((1, 1, 3, 3)), rng.standard_normal((1, 1, 3, 3))
    l_d, _ = adversarial_terms(Tensor(zr), Tensor(zf), np.zeros((1, 1, 12, 12)))
    ref = np.mean(np.log1p(np.exp(-zr))) + np.mean(np.log1p(np.exp(-zf)))
    assert abs(float(l_d.data) - ref) <= 1e-12


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4), st.integers(1, 5))
def test_adversarial_matches_loop(seed, gh, factor):
    rng = np.random.default_rng(seed)
    zr = rng.standard_normal((2, 1, gh, gh + 1)) * 10
    zf = rng.standard_normal((2, 1, gh, gh + 1)) * 10
    size = (gh * factor, (gh + 1) * factor + rng.integers(0, factor))
    m = (rng.random((2, 1, *size)) < 0.5).astype(float)
    l_d, l_g = adversarial_terms(Tensor(zr).clamp(-20, 20), Tensor(zf).clamp(-20, 20), m)
    rows, cols = nearest_index(size[0], gh), nearest_index(size[1], gh + 1)
    ref_d, ref_g = adversarial_loop(zr, zf, m[..., rows[:, None], cols[None, :]])
    assert abs(float(l_d.data) - ref_d) <= 1e-6 and abs(float(l_g.data) - ref_g) <= 1e-6


def test_adversarial_shape_errors():
    d = _disc()
    x = np.zeros((1, 3, 16, 16))
    with pytest.raises(DimensionError):
        adversarial_losses(d, x, x, np.zeros((1, 1, 8, 16)))
    with pytest.raises(DimensionError):
        adversarial_terms(Tensor(np.zeros((1, 1, 4, 4))), Tensor(np.zeros((1, 1, 4, 4))), np.zeros((1, 1, 2, 2)))


def test_adversarial_losses_gradients_float64():
    d = _disc()
    rng = np.random.default_rng(10)
    real = Tensor(rng.random((2, 3, 16, 16)))
    fake = Tensor(rng.random((2, 3, 16, 16)))
    m = (rng.random((2, 1, 16, 16)) < 0.5).astype(float)
    assert grad_check(lambda *_: adversarial_losses(d, real, fake, m)[0], *d.parameters(), max_coords=6) <= 1e-5
    assert grad_check(lambda f, *_: adversarial_losses(d, real, f, m)[1], fake, *d.parameters(), max_coords=6) <= 1e-5


def test_discriminator_loss_ignores_generator():
    d = _disc()
    rng = np.random.default_rng(11)
    fake = Tensor(rng.random((1, 3, 16, 16)), requires_grad=True)
    l_d, _ = adversarial_losses(d, rng.random((1, 3, 16, 16)), fake, np.ones((1, 1, 16, 16)))
    backward(l_d)
    assert fake.grad is None


# -- gradient penalty ------------------------------------------------------------------

def test_gp_linear_discriminator_is_squared_weight_norm():
    d = _disc(slope=1.0)  # leaky slope 1 makes D affine
    for c in d.convs:
        c.weight.data *= 0.3  # stay inside the clamp window
    x = np.random.default_rng(12).random((2, 3, 16, 16))
    base = float(d(Tensor(np.zeros((1, 3, 16, 16))))[0].data.sum())
    w = np.zeros((3, 16, 16))
    for idx in np.ndindex(w.shape):
        e = np.zeros((1, 3, 16, 16))
        e[(0, *idx)] = 1
        w[idx] = float(d(Tensor(e))[0].data.sum()) - base
    assert abs(float(gradient_penalty(d, Tensor(x)).data) - (w ** 2).sum()) <= 1e-5 * max(1, (w ** 2).sum())


def test_gp_constant_discriminator_is_zero():
    d = _disc()
    for c in d.convs:
        c.weight.data[:] = 0
    assert float(gradient_penalty(d, Tensor(np.random.default_rng(13).random((2, 3, 16, 16)))).data) == 0


def test_gp_matches_finite_difference_norm():
    d = _disc(seed=14, channels=(4, 4, 4))
    x = np.random.default_rng(15).random((2, 3, 16, 16))
    eps = 1e-6
    sq = 0.0
    for i in range(2):
        for idx in np.ndindex(3, 16, 16):
            xp, xm = x[i:i + 1].copy(), x[i:i + 1].copy()
            xp[(0, *idx)] += eps
            xm[(0, *idx)] -= eps
            g = (float(d(Tensor(xp))[0].data.sum()) - float(d(Tensor(xm))[0].data.sum())) / (2 * eps)
            sq += g * g
    got = float(gradient_penalty(d, Tensor(x)).data)
    assert abs(got - sq / 2) / max(1.0, sq / 2) <= 1e-3


def test_gp_gradient_float64():
    d = _disc(seed=16, channels=(4, 4, 4))
    x = Tensor(np.random.default_rng(17).random((2, 3, 16, 16)))
    assert grad_check(lambda *_: gradient_penalty(d, x), *d.parameters(), max_coords=6) <= 1e-5


# -- feature matching ------------------------------------------------------------------

def test_feature_match_examples():
    rng = np.random.default_rng(18)
    feats = [Tensor(rng.random((1, 2, 4, 4))), Tensor(rng.random((1, 3, 2, 2)))]
    assert float(feature_match_loss(feats, feats).data) == 0
    a = rng.random((1, 2, 3, 3))
    assert float(feature_match_loss([Tensor(a)], [Tensor(a + 0.7)]).data) == pytest.approx(0.7, abs=1e-12)
    with pytest.raises(ContractError):
        feature_match_loss(feats, feats[:1])


def test_feature_match_loop_and_gradient():
    rng = np.random.default_rng(19)
    real = [rng.random((2, 2, 4, 4)), rng.random((2, 4, 2, 2))]
    fake = [Tensor(rng.random(r.shape)) for r in real]
    got = float(feature_match_loss([Tensor(r) for r in real], fake).data)
    assert abs(got - feature_match_loop(real, [f.data for f in fake])) <= 1e-6
    assert grad_check(lambda *f: feature_match_loss([Tensor(r) for r in real], list(f)), *fake) <= 1e-5


# -- HRF ----------------------------------------------------------------------------------

def test_hrf_examples():
    rng = np.random.default_rng(20)
    a, b = rng.random((1, 3, 12, 12)), rng.random((1, 3, 12, 12))
    ext = HRFExtractor().to(np.float64)
    assert float(hrf_loss(Tensor(a), a, ext).data) == 0
    assert float(hrf_loss(Tensor(a), b, lambda x: [x]).data) == pytest.approx(np.mean((a - b) ** 2), abs=1e-15)


def test_hrf_extractor_is_fixed_and_deterministic():
    e1, e2 = HRFExtractor(seed=3), HRFExtractor(seed=3)
    assert all(np.array_equal(p.data, q.data) for p, q in zip(e1.parameters(), e2.parameters()))
    assert not any(p.requires_grad for p in e1.parameters())
    x = np.random.default_rng(0).random((1, 3, 16, 16)).astype(np.float32)
    assert [f.shape for f in e1(Tensor(x))] == [(1, 8, 16, 16), (1, 16, 16, 16), (1, 16, 16, 16)]


def test_hrf_matches_loop():
    ext = HRFExtractor(seed=21, channels=(2, 3), dilations=(1, 2)).to(np.float64)
    rng = np.random.default_rng(22)
    a, b = rng.random((1, 3, 7, 7)), rng.random((1, 3, 7, 7))

    def feats(x):
        out = []
        for c in ext.convs:
            x = np.maximum(conv2d_loop(x, c.weight.data, c.bias.data, 1, c.padding, c.dilation), 0)
            out.append(x)
        return out

    ref = np.mean([np.mean((fa - fb) ** 2) for fa, fb in zip(feats(a), feats(b))])
    assert abs(float(hrf_loss(Tensor(a), b, ext).data) - ref) <= 1e-6


def test_hrf_gradient_float64():
    ext = HRFExtractor(seed=23, channels=(3, 3)).to(np.float64)
    for c in ext.convs:
        c.bias.data = np.random.default_rng(1).standard_normal(c.bias.shape) * 0.1
    rng = np.random.default_rng(24)
    pred, gt = Tensor(rng.random((1, 3, 6, 6))), rng.random((1, 3, 6, 6))
    assert grad_check(lambda p: hrf_loss(p, gt, ext), pred) <= 1e-5


# -- weighting ------------------------------------------------------------------------------

def test_loss_report_total():
    cfg = LossConfig()
    r = LossReport.from_terms(cfg, 3, l1=0.2, l_d=1.3, l_g=0.7, gp=5.0, fm=0.01, hrf=0.05)
    expected = 10 * 0.2 + 10 * (1.3 + 0.7 + 1e-3 * 5.0) + 100 * 0.01 + 30 * 0.05
    assert abs(r.total - expected) <= 1e-6 and r.step == 3


def test_loss_config_validation():
    with pytest.raises(ValueError):
        LossConfig(fm=-1)
    with pytest.raises(ValueError):
        LossConfig(l1_normalize="pixels")
