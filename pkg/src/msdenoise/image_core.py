"""Image container, PNG/PNM file I/O, colour transforms and noise injection.

Intensities are always stored as float64 in [0, 1]. Pixel data is kept as a
``(height, width, channels)`` array; flattening a channel in C order gives the
row-major cell numbering used by the solvers.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image as _PILImage

__all__ = [
    "Image",
    "NoiseSpec",
    "ImageError",
    "ImageReadError",
    "UnsupportedFormatError",
    "ImageWriteError",
    "load_image",
    "save_image",
    "to_grayscale",
    "rgb_to_ycrcb",
    "ycrcb_to_rgb",
    "add_noise",
    "quantize",
]

# BT.601 full-range luma weights
KR, KG, KB = 0.299, 0.587, 0.114
CR_SCALE = 0.5 / (1.0 - KR)  # 0.713...
CB_SCALE = 0.5 / (1.0 - KB)  # 0.564...


class ImageError(Exception):
    """Base class for image I/O failures."""


class ImageReadError(ImageError):
    """The file is missing, truncated or cannot be decoded."""


class UnsupportedFormatError(ImageError):
    """The file is readable but not a PNG/PGM/PPM image we handle."""


class ImageWriteError(ImageError):
    pass


@dataclass(frozen=True)
class Image:
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise ValueError(f"image data must be (h, w, 1|3), got {data.shape}")
        if data.size and (np.nanmin(data) < 0.0 or np.nanmax(data) > 1.0):
            raise ValueError("intensities must lie in [0, 1]")
        if not np.all(np.isfinite(data)):
            raise ValueError("intensities must be finite")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def channel(self, k: int) -> np.ndarray:
        return self.data[:, :, k]

    @classmethod
    def from_channels(cls, channels, clip: bool = False) -> "Image":
        data = np.stack([np.asarray(c, dtype=np.float64) for c in channels], axis=2)
        if clip:
            data = np.clip(data, 0.0, 1.0)
        return cls(data)


@dataclass(frozen=True)
class NoiseSpec:
    level: float
    seed: int = 0

    def __post_init__(self):
        if not self.level > 0:
            raise ValueError("noise level must be positive")


# ---------------------------------------------------------------- file I/O

def _read_token(buf: bytes, pos: int):
    n = len(buf)
    while pos < n:
        ch = buf[pos:pos + 1]
        if ch == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise ImageReadError("truncated PNM header")
    return buf[start:pos], pos


def _read_pnm(buf: bytes) -> np.ndarray:
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise UnsupportedFormatError(f"unsupported netpbm variant {magic!r}")
    pos = 2
    fields = []
    for _ in range(3):
        tok, pos = _read_token(buf, pos)
        try:
            fields.append(int(tok))
        except ValueError as exc:
            raise ImageReadError(f"bad PNM header field {tok!r}") from exc
    width, height, maxval = fields
    if not 0 < maxval < 65536:
        raise UnsupportedFormatError(f"unsupported PNM maxval {maxval}")
    pos += 1  # single whitespace byte before the raster
    nch = 1 if magic == b"P5" else 3
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height * nch
    raster = buf[pos:pos + count * dtype.itemsize]
    if len(raster) < count * dtype.itemsize:
        raise ImageReadError("truncated PNM raster")
    codes = np.frombuffer(raster, dtype=dtype).reshape(height, width, nch)
    full = 65535 if maxval > 255 else 255
    # a nonstandard maxval is first stretched to the format's full range
    return codes.astype(np.float64) * (full / maxval) / full


def _read_png(path) -> np.ndarray:
    try:
        with _PILImage.open(path) as im:
            im.load()
            mode = im.mode
            if mode in ("I;16", "I;16B", "I;16L"):
                return np.asarray(im, dtype=np.float64)[:, :, None] / 65535.0
            if mode == "I":
                return np.asarray(im, dtype=np.float64)[:, :, None] / 65535.0
            if mode in ("L", "P", "1", "LA", "PA"):
                im = im.convert("L") if mode != "L" else im
                return np.asarray(im, dtype=np.float64)[:, :, None] / 255.0
            if mode in ("RGB", "RGBA"):
                im = im.convert("RGB") if mode != "RGB" else im
                return np.asarray(im, dtype=np.float64) / 255.0
            raise UnsupportedFormatError(f"unsupported PNG mode {mode}")
    except UnsupportedFormatError:
        raise
    except OSError as exc:
        raise ImageReadError(str(exc)) from exc


def load_image(path) -> Image:
    """Load a PNG or binary PGM/PPM file, scaling codes to [0, 1]."""
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise ImageReadError(f"cannot read {path}: {exc}") from exc
    if buf[:8] == b"\x89PNG\r\n\x1a\n":
        data = _read_png(path)
    elif buf[:1] == b"P" and buf[1:2].isdigit():
        data = _read_pnm(buf)
    else:
        raise UnsupportedFormatError(f"{path}: not a PNG or PGM/PPM file")
    return Image(np.clip(data, 0.0, 1.0))


def quantize(values) -> np.ndarray:
    """Clamp to [0, 1] and map to 8-bit codes, rounding half away from zero."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0) * 255.0
    return np.floor(v + 0.5).astype(np.uint8)


def save_image(img: Image, path) -> None:
    """Write ``img`` as 8-bit PNG, or as PGM/PPM for ``.pgm/.ppm/.pnm`` suffixes."""
    codes = quantize(img.data)
    ext = os.path.splitext(str(path))[1].lower()
    try:
        if ext in (".pgm", ".ppm", ".pnm"):
            magic = b"P5" if img.channels == 1 else b"P6"
            header = b"%s\n%d %d\n255\n" % (magic, img.width, img.height)
            with open(path, "wb") as fh:
                fh.write(header + codes.tobytes())
        else:
            arr = codes[:, :, 0] if img.channels == 1 else codes
            _PILImage.fromarray(arr).save(path, format="PNG")
    except (OSError, ValueError) as exc:
        raise ImageWriteError(f"cannot write {path}: {exc}") from exc


# ---------------------------------------------------------------- colour

def _require_rgb(img: Image):
    if img.channels != 3:
        raise ValueError(f"expected a 3-channel image, got {img.channels}")


def to_grayscale(img: Image) -> Image:
    _require_rgb(img)
    d = img.data
    y = KR * d[:, :, 0] + KG * d[:, :, 1] + KB * d[:, :, 2]
    return Image(np.clip(y, 0.0, 1.0)[:, :, None])


def rgb_to_ycrcb(img: Image) -> Image:
    """Full-range BT.601 YCrCb with chroma offset by 0.5; channel order Y, Cr, Cb."""
    _require_rgb(img)
    r, g, b = (img.data[:, :, k] for k in range(3))
    y = KR * r + KG * g + KB * b
    cr = (r - y) * CR_SCALE + 0.5
    cb = (b - y) * CB_SCALE + 0.5
    # exact-arithmetic range is [0, 1]; only round-off can leak outside
    return Image(np.clip(np.stack([y, cr, cb], axis=2), 0.0, 1.0))


def ycrcb_to_rgb(img: Image) -> Image:
    _require_rgb(img)
    return Image(np.clip(_ycrcb_to_rgb_array(img.data), 0.0, 1.0))


def _ycrcb_to_rgb_array(d: np.ndarray) -> np.ndarray:
    y = d[:, :, 0]
    r = y + (d[:, :, 1] - 0.5) / CR_SCALE
    b = y + (d[:, :, 2] - 0.5) / CB_SCALE
    g = (y - KR * r - KB * b) / KG
    return np.stack([r, g, b], axis=2)


# ---------------------------------------------------------------- noise

def add_noise(img: Image, spec: NoiseSpec) -> Image:
    """Additive Gaussian noise scaled by each channel's RMS, then clamped.

    ``noisy = clip(I + level * rms(I) * xi, 0, 1)`` with ``xi`` standard normal
    draws from ``numpy.random.default_rng(seed)``.
    """
    rng = np.random.default_rng(spec.seed)
    out = np.empty_like(img.data)
    for k in range(img.channels):
        ch = img.data[:, :, k]
        rms = np.sqrt(np.mean(ch * ch))
        xi = rng.standard_normal(ch.shape)
        out[:, :, k] = np.clip(ch + spec.level * rms * xi, 0.0, 1.0)
    return Image(out)
