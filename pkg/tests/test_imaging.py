import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import luma_601, psnr_loop, ssim_loop
from rgt.imaging import (
    ImagePlane,
    PnmDepthError,
    PnmMagicError,
    PnmTruncatedError,
    augment,
    bicubic_resize,
    dihedral,
    format_db,
    invert_flags,
    luma,
    metrics_csv,
    psnr,
    read_pnm,
    resize_weights,
    rgb_to_ycbcr,
    ssim,
    write_pnm,
    ycbcr_to_rgb,
)

u8_images = arrays(np.uint8, st.tuples(st.integers(1, 6), st.integers(1, 6), st.just(3)))


def rgb(arr, max_value=255.0):
    return ImagePlane(np.asarray(arr, dtype=np.float64), "RGB", max_value)


def gray(arr):
    return ImagePlane(np.asarray(arr, dtype=np.float64), "Y", 255.0)


# ---- image plane


def test_plane_validation():
    with pytest.raises(ValueError):
        ImagePlane(np.full((2, 2, 3), 256.0))
    with pytest.raises(ValueError):
        ImagePlane(np.zeros((2, 2, 3)), "Y")
    with pytest.raises(ValueError):
        ImagePlane(np.zeros((2, 2, 3)), "HSV")
    with pytest.raises(ValueError):
        ImagePlane(np.zeros((2, 2, 3)), "RGB", 100.0)
    assert ImagePlane(np.zeros((4, 5)), "Y").channels == 1


def test_range_conversion_round_trip(rng):
    img = rgb(rng.uniform(0, 255, (3, 4, 3)))
    back = img.to_range(1.0).to_range(255.0)
    np.testing.assert_allclose(back.data, img.data, atol=1e-12)


# ---- PNM


def test_p6_byte_layout():
    blob = b"P6\n2 1\n255\n" + bytes([255, 0, 0, 0, 0, 255])
    img = read_pnm(blob)
    assert (img.height, img.width, img.space) == (1, 2, "RGB")
    np.testing.assert_array_equal(img.data[0], [[255, 0, 0], [0, 0, 255]])
    assert write_pnm(img) == blob


def test_header_comments_accepted():
    img = read_pnm(b"P5 # gray\n1 1\n# depth\n255\n" + bytes([7]))
    assert img.space == "Y" and img.data[0, 0, 0] == 7


@given(u8_images)
def test_pnm_round_trip_is_bit_stable(arr):
    blob = write_pnm(rgb(arr))
    again = read_pnm(blob)
    np.testing.assert_array_equal(again.data, arr)
    assert write_pnm(again) == blob


def test_pnm_errors():
    with pytest.raises(PnmDepthError):
        read_pnm(b"P6\n1 1\n65535\n" + bytes(6))
    with pytest.raises(PnmMagicError):
        read_pnm(b"P3\n1 1\n255\n0 0 0\n")
    with pytest.raises(PnmTruncatedError):
        read_pnm(b"P6\n2 2\n255\n" + bytes(5))
    with pytest.raises(PnmTruncatedError):
        read_pnm(b"P6\n2 2")


# ---- color


def test_ycbcr_reference_values():
    ycc = rgb_to_ycbcr(rgb([[[255, 255, 255], [0, 0, 0], [90, 90, 90]]]))
    assert ycc.data[0, 0, 0] == pytest.approx(235.0, abs=1e-12)
    assert ycc.data[0, 1, 0] == pytest.approx(16.0, abs=1e-12)
    np.testing.assert_allclose(ycc.data[0, :, 1:], 128.0, atol=1e-12)


def test_luma_matches_formula(rng):
    data = rng.uniform(0, 255, (5, 6, 3))
    np.testing.assert_allclose(luma(rgb(data)), luma_601(data), atol=1e-12)
    np.testing.assert_allclose(luma(rgb(data / 255, 1.0)), luma_601(data), atol=1e-9)


@given(arrays(np.float64, (4, 4, 3), elements=st.floats(0, 255)))
def test_ycbcr_inverse(data):
    back = ycbcr_to_rgb(rgb_to_ycbcr(rgb(data)))
    np.testing.assert_allclose(back.data, data, atol=1e-6)


def test_color_space_tags_checked():
    with pytest.raises(ValueError):
        rgb_to_ycbcr(gray(np.zeros((2, 2))))
    with pytest.raises(ValueError):
        ycbcr_to_rgb(rgb(np.zeros((2, 2, 3))))


# ---- resize


@given(st.integers(1, 40), st.integers(1, 40))
def test_resize_rows_sum_to_one(n_in, n_out):
    np.testing.assert_allclose(resize_weights(n_in, n_out).sum(axis=1), 1.0, atol=1e-12)


@pytest.mark.parametrize("out", [(3, 5), (16, 16), (40, 24)])
def test_resize_preserves_constant(out):
    img = rgb(np.full((12, 10, 3), 77.25))
    np.testing.assert_allclose(bicubic_resize(img, *out).data, 77.25, atol=1e-9)


def test_resize_ramp_interior_is_linear():
    n_in, n_out = 32, 16
    ramp = np.tile((2.0 + 3.0 * np.arange(n_in))[None, :, None], (4, 1, 3))
    out = bicubic_resize(rgb(ramp), 4, n_out).data[0, :, 0]
    src = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    interior = slice(2, n_out - 2)  # away from the clamped edges
    np.testing.assert_allclose(out[interior], 2.0 + 3.0 * src[interior], atol=1e-9)


def test_resize_shape_and_errors(rng):
    img = rgb(rng.uniform(0, 255, (64, 64, 3)))
    assert bicubic_resize(img, 32, 32).data.shape == (32, 32, 3)
    with pytest.raises(ValueError):
        bicubic_resize(img, 0, 4)


# ---- metrics


def test_psnr_closed_forms(rng):
    a = gray(np.full((8, 8), 100.0))
    assert psnr(a, a) == math.inf
    expected = 10 * math.log10(255.0**2 / 16.0**2)  # 24.0484...
    assert abs(psnr(a, gray(np.full((8, 8), 116.0))) - expected) < 5e-5
    assert format_db(psnr(a, a)) == "inf"


def test_ssim_closed_forms(rng):
    a = gray(np.full((16, 16), 100.0))
    c1 = (0.01 * 255) ** 2
    expected = (2 * 100 * 110 + c1) / (100**2 + 110**2 + c1)  # 0.995476...
    assert abs(ssim(a, gray(np.full((16, 16), 110.0))) - expected) < 1e-12
    assert abs(expected - 0.99547) < 5e-5
    b = rgb(rng.uniform(0, 255, (16, 16, 3)))
    assert abs(ssim(b, b) - 1.0) <= 1e-12


def test_metrics_match_loop_oracles(rng):
    for _ in range(5):
        a, b = rng.uniform(0, 255, (2, 16, 16, 3))
        assert abs(psnr(rgb(a), rgb(b)) - psnr_loop(luma_601(a), luma_601(b))) <= 1e-9
        assert abs(ssim(rgb(a), rgb(b)) - ssim_loop(luma_601(a), luma_601(b))) <= 1e-9


def test_crop_and_symmetry(rng):
    a, b = rng.uniform(0, 255, (2, 20, 20))
    assert psnr(gray(a), gray(b)) == psnr(gray(b), gray(a))
    assert psnr(gray(a), gray(b), crop=2) == pytest.approx(psnr_loop(a[2:-2, 2:-2], b[2:-2, 2:-2]), abs=1e-9)
    assert ssim(gray(a), gray(b), crop=2) == pytest.approx(ssim_loop(a[2:-2, 2:-2], b[2:-2, 2:-2]), abs=1e-9)


def test_metric_errors():
    with pytest.raises(ValueError):
        psnr(gray(np.zeros((4, 4))), gray(np.zeros((4, 5))))
    with pytest.raises(ValueError):
        ssim(gray(np.zeros((10, 10))), gray(np.zeros((10, 10))))


def test_metrics_csv():
    text = metrics_csv([("a", math.inf, 1.0), ("b", 24.04864, 0.5)])
    assert text == "image,psnr_db,ssim\na,inf,1.000000\nb,24.0486,0.500000\n"


# ---- augmentation


def test_dihedral_group_laws(rng):
    x = rng.normal(size=(3, 5, 2))
    np.testing.assert_array_equal(dihedral(x, False, 0), x)
    y = x
    for _ in range(4):
        y = dihedral(y, False, 1)
    np.testing.assert_array_equal(y, x)
    np.testing.assert_array_equal(dihedral(dihedral(x, True, 0), True, 0), x)


@given(st.booleans(), st.integers(0, 3))
def test_dihedral_inverse(hflip, rot):
    x = np.arange(24.0).reshape(3, 4, 2)
    inv = invert_flags(hflip, rot)
    np.testing.assert_array_equal(dihedral(dihedral(x, hflip, rot), *inv), x)


def test_augment_applies_same_transform(rng):
    lr, hr = rng.normal(size=(4, 6, 3)), rng.normal(size=(8, 12, 3))
    a, b = augment((lr, hr), True, 1)
    assert a.shape == (6, 4, 3) and b.shape == (12, 8, 3)
    np.testing.assert_array_equal(a, dihedral(lr, True, 1))
    np.testing.assert_array_equal(b, dihedral(hr, True, 1))
