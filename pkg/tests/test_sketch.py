import copy
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sketchinpaint.sketch import (
    SSU,
    LineSegmentSet,
    SSUConfig,
    box_downsample,
    canny,
    default_sigma,
    doublings_needed,
    gaussian_kernel,
    random_segments,
    rasterize_lines,
    resize_bilinear,
    shifted_sigmoid,
    ssu_forward,
    upsample_iterative,
)
from sketchinpaint.tensor import ContractError, DimensionError, Tensor, grad_check, grad_check_reference
from sketchinpaint.tensor import functional as F


# -- canny ------------------------------------------------------------------------

def test_canny_constant_image_is_empty():
    assert not canny(np.full((32, 40), 0.7)).any()
    assert not canny(np.zeros((16, 16))).any()


def test_default_sigmas():
    assert default_sigma(256) == 2.0
    assert default_sigma(512) == 2.5


def test_gaussian_kernel_truncation():
    k = gaussian_kernel(2.0)
    assert len(k) == 2 * 8 + 1 and abs(k.sum() - 1) < 1e-12


@pytest.mark.parametrize("col", [10, 17, 31])
def test_canny_vertical_step_single_pixel_line(col):
    img = np.zeros((40, 48))
    img[:, col:] = 1.0
    e = canny(img, sigma=1.5)
    assert np.all(e.sum(axis=1) == 1)
    cols = np.nonzero(e)[1]
    assert np.all(cols == cols[0]) and cols[0] in (col - 1, col)


def test_canny_horizontal_step():
    img = np.zeros((40, 30))
    img[22:] = 1.0
    e = canny(img, sigma=2.0)
    assert np.all(e.sum(axis=0) == 1)


@pytest.mark.parametrize("sigma", [1.0, 2.0, 2.5])
def test_canny_diagonal_step_thin_along_gradient(sigma):
    yy, xx = np.mgrid[:48, :48]
    img = (xx + yy > 47).astype(float)
    e = canny(img, sigma=sigma).astype(bool)
    assert e.any()
    # away from the corners, where symmetric padding folds the step, no two edge
    # pixels are neighbours along the gradient direction (1, 1)
    r = len(gaussian_kernel(sigma)) // 2
    pairs = e[:-1, :-1] & e[1:, 1:]
    assert not pairs[r:-r, r:-r].any()


def test_canny_rejects_bad_input():
    with pytest.raises(DimensionError):
        canny(np.zeros((3, 4, 4)))
    with pytest.raises(ContractError):
        canny(np.zeros((4, 4)), sigma=0)


def test_canny_square_outline_closed():
    img = np.zeros((48, 48))
    img[12:36, 12:36] = 1
    e = canny(img, sigma=1.0)
    # every row crossing the square has edges on both sides
    for r in range(16, 32):
        assert e[r, :24].any() and e[r, 24:].any()


# -- rasterizer ---------------------------------------------------------------------

def test_empty_set_draws_nothing():
    assert not rasterize_lines(LineSegmentSet(), 20, 30).any()


def test_horizontal_segment_on_pixel_centres_aliased():
    h = w = 256
    # centres of pixels (row 100, cols 40..90)
    x0, x1, y = (40 + 0.5) / w, (90 + 0.5) / w, (100 + 0.5) / h
    img = rasterize_lines(LineSegmentSet([[x0, y, x1, y]], [1.0]), h, w, antialias=False)
    expected = np.zeros((h, w))
    expected[100, 40:91] = 1
    assert np.array_equal(img, expected)


def test_antialiased_values_are_coverage():
    img = rasterize_lines(random_segments(np.random.default_rng(0), 5), 64, 64)
    assert img.min() >= 0 and img.max() <= 1
    assert len(np.unique(img)) > 3  # fractional coverage present


def test_overlaps_combine_by_max():
    segs = LineSegmentSet([[0.1, 0.5, 0.9, 0.5], [0.5, 0.1, 0.5, 0.9]], [3.0, 3.0])
    both = rasterize_lines(segs, 64, 64)
    a = rasterize_lines(LineSegmentSet(segs.segments[:1], [3.0]), 64, 64)
    b = rasterize_lines(LineSegmentSet(segs.segments[1:], [3.0]), 64, 64)
    assert np.array_equal(both, np.maximum(a, b))


def test_multiscale_consistency():
    rng = np.random.default_rng(1)
    for _ in range(5):
        lines = random_segments(rng, 6, width=(1.0, 3.0))
        small = rasterize_lines(lines, 256, 256)
        big = box_downsample(rasterize_lines(lines, 512, 512), 2)
        assert np.abs(small - big).mean() <= 0.05


@pytest.mark.parametrize("s,width", [(64, (4.0, 8.0)), (128, (2.0, 4.0)), (256, (1.0, 2.0))])
def test_coarse_drawing_overlaps_fine_drawing(s, width):
    # widths are at least one pixel at the coarse scale; thinner lines binarize to gaps
    rng = np.random.default_rng(2)
    for _ in range(10):
        lines = random_segments(rng, 5, width=width)
        fine = rasterize_lines(lines, 2 * s, 2 * s) >= 0.5
        coarse = np.kron(rasterize_lines(lines, s, s) >= 0.5, np.ones((2, 2), dtype=bool))
        iou = (fine & coarse).sum() / max((fine | coarse).sum(), 1)
        assert iou >= 0.6


def test_line_text_round_trip(tmp_path):
    lines = random_segments(np.random.default_rng(3), 4)
    path = tmp_path / "lines.txt"
    lines.save(path)
    back = LineSegmentSet.load(path)
    assert np.allclose(back.segments, lines.segments, atol=1e-8) and np.allclose(back.widths, lines.widths, atol=1e-8)


def test_line_text_comments_and_errors():
    text = "# header\n0.1 0.2 0.3 0.4 2  # trailing\n\n  # indented comment\n0 0 1 1 1.5\n"
    lines = LineSegmentSet.from_text(text)
    assert len(lines) == 2 and lines.widths.tolist() == [2.0, 1.5]
    with pytest.raises(ValueError):
        LineSegmentSet.from_text("0.1 0.2 0.3\n")
    with pytest.raises(ContractError):
        LineSegmentSet.from_text("0.1 0.2 1.3 0.4 1\n")


# -- SSU --------------------------------------------------------------------------------

def test_ssu_doubles_extent():
    model = SSU(SSUConfig.tiny(), np.random.default_rng(0))
    out = ssu_forward(np.zeros((1, 1, 64, 64), np.float32), model)
    assert out.shape == (1, 1, 128, 128)
    with pytest.raises(DimensionError):
        model(Tensor(np.zeros((1, 2, 8, 8), np.float32)))


def _jitter(model, rng):
    for name, p in model.named_parameters():
        if name.endswith("bias"):
            p.data = p.data + (rng.standard_normal(p.shape) * 0.1).astype(p.dtype)


def test_ssu_gradient_float32():
    rng = np.random.default_rng(4)
    model = SSU(SSUConfig(channels=4), rng)
    _jitter(model, rng)
    ref = copy.deepcopy(model).to(np.float64)
    x = rng.random((1, 1, 6, 6))
    t = (rng.random((1, 1, 12, 12)) < 0.3).astype(float)
    x32, x64 = Tensor(x.astype(np.float32)), Tensor(x)
    direct = grad_check(lambda *_: F.bce(F.sigmoid(model(x32)), t), x32, *model.parameters(), max_coords=10)
    assert direct <= 1e-2
    err = grad_check_reference(lambda *_: F.bce(F.sigmoid(model(x32)), t), [x32, *model.parameters()],
                               lambda *_: F.bce(F.sigmoid(ref(x64)), t), [x64, *ref.parameters()], max_coords=10)
    assert err <= 1e-3


def test_ssu_gradient_float64():
    rng = np.random.default_rng(5)
    model = SSU(SSUConfig(channels=3), rng).to(np.float64)
    _jitter(model, rng)
    x = Tensor(rng.random((2, 1, 5, 5)))
    t = (rng.random((2, 1, 10, 10)) < 0.3).astype(float)
    assert grad_check(lambda *_: F.bce(F.sigmoid(model(x)), t), x, *model.parameters(), max_coords=8) <= 1e-5


def test_shifted_sigmoid_constants():
    assert shifted_sigmoid(np.zeros(1), 2, 2)[0] == pytest.approx(0.9820, abs=1e-4)
    assert shifted_sigmoid(np.zeros(1), 2, 2)[0] == pytest.approx(1 / (1 + math.exp(-4)), abs=1e-15)
    big = shifted_sigmoid(np.array([-500.0, 500.0]), 2, 2)
    assert 0 < big[0] < big[1] < 1


def test_doublings():
    assert doublings_needed((256, 256), (256, 256)) == 0
    assert doublings_needed((256, 256), (1024, 1024)) == 2
    assert doublings_needed((256, 256), (700, 700)) == 2
    assert doublings_needed((256, 256), (257, 256)) == 1


def test_upsample_identity_when_same_size():
    model = SSU(SSUConfig.tiny(), np.random.default_rng(0))
    x = np.random.default_rng(1).random((16, 16))
    assert np.array_equal(upsample_iterative(x, model, 16, 16), x)


def test_upsample_zero_network_is_constant():
    model = SSU(SSUConfig.tiny(), np.random.default_rng(0))
    for p in model.parameters():
        p.data[:] = 0
    out = upsample_iterative(np.zeros((8, 8)), model, 32, 32)
    assert out.shape == (32, 32)
    assert np.all(out == shifted_sigmoid(np.zeros(1), 2, 2)[0])


def test_upsample_256_to_1024_range():
    rng = np.random.default_rng(6)
    model = SSU(SSUConfig(channels=4), rng)
    x = rasterize_lines(random_segments(rng, 4), 256, 256)
    out = upsample_iterative(x, model, 1024, 1024)
    assert out.shape == (1024, 1024) and out.min() > 0 and out.max() < 1


def test_upsample_rejects_smaller_target():
    model = SSU(SSUConfig.tiny(), np.random.default_rng(0))
    with pytest.raises(ContractError):
        upsample_iterative(np.zeros((16, 16)), model, 8, 16)


def test_bilinear_reference():
    rng = np.random.default_rng(7)
    x = rng.random((5, 7))
    out = resize_bilinear(x, 9, 4)
    for i in range(9):
        for j in range(4):
            cy = min(max((i + 0.5) * 5 / 9 - 0.5, 0), 4)
            cx = min(max((j + 0.5) * 7 / 4 - 0.5, 0), 6)
            y0, x0 = int(math.floor(cy)), int(math.floor(cx))
            y1, x1 = min(y0 + 1, 4), min(x0 + 1, 6)
            fy, fx = cy - y0, cx - x0
            ref = (x[y0, x0] * (1 - fy) * (1 - fx) + x[y1, x0] * fy * (1 - fx)
                   + x[y0, x1] * (1 - fy) * fx + x[y1, x1] * fy * fx)
            assert out[i, j] == pytest.approx(ref, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12))
def test_bilinear_preserves_constants(h, w):
    assert np.allclose(resize_bilinear(np.full((3, 4), 0.25), h, w), 0.25)
