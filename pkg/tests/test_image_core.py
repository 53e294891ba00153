import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from msdenoise.image_core import (Image, ImageReadError, NoiseSpec, UnsupportedFormatError,
                                  add_noise, load_image, quantize, rgb_to_ycrcb, save_image,
                                  to_grayscale, ycrcb_to_rgb)
from msdenoise.metrics import rrmse


def write_pgm(path, pixels, maxval=255):
    pixels = np.asarray(pixels)
    h, w = pixels.shape[:2]
    magic = b"P6" if pixels.ndim == 3 else b"P5"
    dtype = ">u2" if maxval > 255 else "u1"
    with open(path, "wb") as fh:
        fh.write(magic + b"\n# test\n%d %d\n%d\n" % (w, h, maxval))
        fh.write(pixels.astype(dtype).tobytes())


def rgb(*values):
    return Image(np.array(values, dtype=float).reshape(1, 1, 3))


# ---------------------------------------------------------------- Image type

def test_image_rejects_out_of_range():
    with pytest.raises(ValueError):
        Image(np.array([[1.5]]))
    with pytest.raises(ValueError):
        Image(np.array([[-0.1]]))


def test_image_shape_and_immutability():
    img = Image(np.zeros((4, 5)))
    assert (img.height, img.width, img.channels) == (4, 5, 1)
    assert img.data.size == 4 * 5 * 1
    with pytest.raises(ValueError):
        img.data[0, 0, 0] = 1.0


def test_noise_spec_requires_positive_level():
    with pytest.raises(ValueError):
        NoiseSpec(0.0)


# ---------------------------------------------------------------- I/O

@pytest.mark.parametrize("code, expected", [(255, 1.0), (0, 0.0)])
def test_load_constant_pgm(tmp_path, code, expected):
    p = tmp_path / "c.pgm"
    write_pgm(p, np.full((3, 4), code))
    img = load_image(p)
    assert img.channels == 1 and img.data.shape == (3, 4, 1)
    assert np.all(img.data == expected)


def test_load_known_codes(tmp_path):
    p = tmp_path / "k.pgm"
    write_pgm(p, [[0, 51], [102, 255]])
    np.testing.assert_allclose(load_image(p).channel(0), [[0, 0.2], [0.4, 1.0]], atol=1e-15)


def test_load_16bit_and_ppm(tmp_path):
    p = tmp_path / "w.pgm"
    write_pgm(p, [[0, 65535, 13107]], maxval=65535)
    np.testing.assert_allclose(load_image(p).channel(0), [[0, 1, 0.2]], atol=1e-15)
    q = tmp_path / "c.ppm"
    write_pgm(q, np.array([[[255, 0, 51]]]))
    img = load_image(q)
    assert img.channels == 3
    np.testing.assert_allclose(img.data[0, 0], [1, 0, 0.2])


def test_load_errors_are_distinct(tmp_path):
    with pytest.raises(ImageReadError):
        load_image(tmp_path / "missing.png")
    bad = tmp_path / "x.pgm"
    bad.write_bytes(b"GIF89a....")
    with pytest.raises(UnsupportedFormatError):
        load_image(bad)
    trunc = tmp_path / "t.pgm"
    trunc.write_bytes(b"P5\n4 4\n255\n\x00\x01")
    with pytest.raises(ImageReadError):
        load_image(trunc)


def test_quantize_rounds_half_up():
    assert list(quantize(np.array([1.0, 0.5, 0.0, 0.002]))) == [255, 128, 0, 1]


@pytest.mark.parametrize("ext", ["png", "pgm"])
def test_save_load_roundtrip(tmp_path, rng, ext):
    img = Image(rng.random((17, 23)))
    p = tmp_path / f"r.{ext}"
    save_image(img, p)
    back = load_image(p)
    assert np.max(np.abs(back.data - img.data)) <= 1 / 510 + 1e-15


def test_save_color_roundtrip(tmp_path, rng):
    img = Image(rng.random((9, 7, 3)))
    for ext in ("png", "ppm"):
        save_image(img, tmp_path / f"c.{ext}")
        back = load_image(tmp_path / f"c.{ext}")
        assert back.channels == 3
        assert np.max(np.abs(back.data - img.data)) <= 1 / 510 + 1e-15


def test_save_to_missing_dir_fails(tmp_path):
    from msdenoise.image_core import ImageWriteError
    with pytest.raises(ImageWriteError):
        save_image(Image(np.zeros((2, 2))), tmp_path / "no" / "x.png")


# ---------------------------------------------------------------- colour

@pytest.mark.parametrize("pix, y", [((1, 1, 1), 1.0), ((0, 0, 0), 0.0), ((1, 0, 0), 0.299)])
def test_grayscale_weights(pix, y):
    g = to_grayscale(rgb(*pix))
    assert g.channels == 1
    assert g.data[0, 0, 0] == pytest.approx(y, abs=1e-15)


def test_grayscale_requires_rgb():
    with pytest.raises(ValueError):
        to_grayscale(Image(np.zeros((2, 2))))


def test_ycrcb_gray_and_red():
    np.testing.assert_allclose(rgb_to_ycrcb(rgb(0.3, 0.3, 0.3)).data[0, 0], [0.3, 0.5, 0.5], atol=1e-15)
    y, cr, cb = rgb_to_ycrcb(rgb(1, 0, 0)).data[0, 0]
    assert y == pytest.approx(0.299)
    assert cr == pytest.approx(1.0)
    assert cb == pytest.approx(0.5 - 0.5 * 0.299 / (1 - 0.114))
    assert cb == pytest.approx(0.3306, abs=1e-3)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_ycrcb_roundtrip(seed):
    img = Image(np.random.default_rng(seed).random((6, 5, 3)))
    ycc = rgb_to_ycrcb(img)
    assert ycc.data.min() >= 0 and ycc.data.max() <= 1
    assert np.max(np.abs(ycrcb_to_rgb(ycc).data - img.data)) <= 1e-12


# ---------------------------------------------------------------- noise

def test_noise_deterministic_and_seed_sensitive(rng):
    img = Image(rng.random((16, 16)))
    a = add_noise(img, NoiseSpec(0.2, 7))
    b = add_noise(img, NoiseSpec(0.2, 7))
    c = add_noise(img, NoiseSpec(0.2, 8))
    assert np.array_equal(a.data, b.data)
    assert not np.array_equal(a.data, c.data)


def test_noise_tiny_level_is_identity(rng):
    img = Image(rng.random((16, 16, 3)))
    assert np.max(np.abs(add_noise(img, NoiseSpec(1e-12, 3)).data - img.data)) <= 1e-10


def test_noise_level_matches_rrmse():
    clean = np.full((512, 512), 0.5)
    noisy = add_noise(Image(clean), NoiseSpec(0.2, 42)).channel(0)
    assert 0.19 <= rrmse(noisy, clean) <= 0.21
    # twice the level, roughly twice the error on unclamped content
    noisy4 = add_noise(Image(clean), NoiseSpec(0.4, 42)).channel(0)
    assert rrmse(noisy4, clean) == pytest.approx(2 * rrmse(noisy, clean), rel=0.05)


def test_noise_oracle():
    clean = np.linspace(0.2, 0.8, 64).reshape(8, 8)
    xi = np.random.default_rng(5).standard_normal(clean.shape)
    s = np.sqrt(np.mean(clean ** 2))
    expected = np.clip(clean + 0.1 * s * xi, 0, 1)
    np.testing.assert_array_equal(add_noise(Image(clean), NoiseSpec(0.1, 5)).channel(0), expected)
