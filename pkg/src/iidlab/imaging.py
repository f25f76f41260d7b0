"""Image representation, color transfer functions, luminance and file I/O.

Images are planar, channel-major float arrays of shape ``(C, H, W)``.  Most
functions in the package also accept a leading batch axis ``(N, C, H, W)``;
the channel axis is always ``-3``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

COLOR_SPACES = ("linear", "srgb", "data")
REC709 = np.array([0.2126, 0.7152, 0.0722])

IIDF_MAGIC = b"IIDF"
_IIDF_HEADER = struct.Struct("<4sIIII")
# Guards against absurd headers before any allocation happens.
MAX_PIXELS = 1 << 28


class ImageFormatError(ValueError):
    """Raised for malformed or inconsistent image files and buffers."""


@dataclass(frozen=True)
class LinearImage:
    """A planar float32 image with a color-space tag.

    Tags ``linear`` and ``srgb`` hold non-negative values; ``data`` is for
    signed quantities such as the residual layer.
    """

    data: np.ndarray
    color_space: str = "linear"

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim == 2:
            data = data[None]
        if data.ndim != 3:
            raise ImageFormatError(f"expected (C, H, W) data, got shape {data.shape}")
        if data.shape[0] not in (1, 2, 3):
            raise ImageFormatError(f"unsupported channel count {data.shape[0]}")
        if self.color_space not in COLOR_SPACES:
            raise ImageFormatError(f"unknown color space {self.color_space!r}")
        if not np.all(np.isfinite(data)):
            raise ImageFormatError("image contains NaN or Inf")
        if self.color_space != "data" and np.any(data < 0):
            raise ImageFormatError(f"negative values in a {self.color_space} image")
        data = np.ascontiguousarray(data)
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)


def _unwrap(img):
    if isinstance(img, LinearImage):
        return img.data, True
    return np.asarray(img), False


def srgb_to_linear(img):
    """Apply the sRGB EOTF. Accepts a ``LinearImage`` tagged srgb or an array."""
    x, wrapped = _unwrap(img)
    if wrapped and img.color_space != "srgb":
        raise ValueError(f"expected an srgb image, got {img.color_space}")
    if np.any(x < 0) or np.any(x > 1):
        raise ValueError("sRGB values must lie in [0, 1]")
    out = np.where(x <= 0.04045, x / 12.92, ((x + 0.055) / 1.055) ** 2.4)
    if wrapped:
        return LinearImage(out, "linear")
    return out.astype(x.dtype, copy=False) if np.issubdtype(x.dtype, np.floating) else out


def linear_to_srgb(img):
    """Encode linear values with the sRGB OETF; input is clamped to [0, 1]."""
    x, wrapped = _unwrap(img)
    x = np.clip(x, 0.0, 1.0)
    p = np.power(x, 1 / 2.4)
    # 1.055 p - 0.055 written so that 1 maps to exactly 1
    out = np.where(x <= 0.0031308, 12.92 * x, p + 0.055 * (p - 1))
    out = np.clip(out, 0.0, 1.0)
    if wrapped:
        return LinearImage(out, "srgb")
    return out.astype(x.dtype, copy=False) if np.issubdtype(x.dtype, np.floating) else out


def luminance(img):
    """Rec.709 luminance of a 3-channel image, keeping a singleton channel axis."""
    x, wrapped = _unwrap(img)
    if x.ndim < 3 or x.shape[-3] != 3:
        raise ValueError(f"luminance needs 3 channels on axis -3, got shape {x.shape}")
    w = REC709.astype(x.dtype) if np.issubdtype(x.dtype, np.floating) else REC709
    lum = w[0] * x[..., 0:1, :, :] + w[1] * x[..., 1:2, :, :] + w[2] * x[..., 2:3, :, :]
    if wrapped:
        return LinearImage(lum, img.color_space)
    return lum


def resize_bilinear(x: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Bilinear resize over the last two axes with half-pixel centers.

    Interpolation is written as ``a + t * (b - a)`` so constant inputs are
    reproduced exactly at any scale.
    """
    x = np.asarray(x)
    out = x
    for axis, n_out in ((-2, size[0]), (-1, size[1])):
        n_in = out.shape[axis]
        if n_in == n_out:
            continue
        pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        pos = np.clip(pos, 0, n_in - 1)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        t = (pos - lo).astype(out.dtype)
        a = np.take(out, lo, axis=axis)
        b = np.take(out, hi, axis=axis)
        shape = [1] * out.ndim
        shape[axis] = n_out
        out = a + t.reshape(shape) * (b - a)
    return out


def avg_pool(x: np.ndarray, factor: int) -> np.ndarray:
    """Box-downsample the last two axes by an integer factor."""
    x = np.asarray(x)
    if factor == 1:
        return x
    *lead, h, w = x.shape
    if h % factor or w % factor:
        raise ValueError(f"size {(h, w)} not divisible by {factor}")
    return x.reshape(*lead, h // factor, factor, w // factor, factor).mean(axis=(-3, -1))


# -- file I/O ---------------------------------------------------------------


def write_iidf(img: LinearImage, path) -> None:
    tag = COLOR_SPACES.index(img.color_space)
    header = _IIDF_HEADER.pack(IIDF_MAGIC, img.width, img.height, img.channels, tag)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(img.data.astype("<f4", copy=False).tobytes())


def read_iidf(path) -> LinearImage:
    raw = Path(path).read_bytes()
    if len(raw) < _IIDF_HEADER.size:
        raise ImageFormatError(f"{path}: truncated header")
    magic, width, height, channels, tag = _IIDF_HEADER.unpack_from(raw)
    if magic != IIDF_MAGIC:
        raise ImageFormatError(f"{path}: bad magic {magic!r}")
    if channels not in (1, 2, 3):
        raise ImageFormatError(f"{path}: unsupported channel count {channels}")
    if tag >= len(COLOR_SPACES):
        raise ImageFormatError(f"{path}: unknown color space tag {tag}")
    if width == 0 or height == 0 or width * height * channels > MAX_PIXELS:
        raise ImageFormatError(f"{path}: bad dimensions {width}x{height}x{channels}")
    expected = _IIDF_HEADER.size + 4 * width * height * channels
    if len(raw) != expected:
        raise ImageFormatError(f"{path}: payload is {len(raw)} bytes, expected {expected}")
    data = np.frombuffer(raw, dtype="<f4", offset=_IIDF_HEADER.size)
    data = data.reshape(channels, height, width).astype(np.float32)
    return LinearImage(data, COLOR_SPACES[tag])


def read_png(path) -> LinearImage:
    """Read an 8-bit PNG as an srgb-tagged image; alpha is dropped."""
    with Image.open(path) as im:
        if im.mode not in ("RGB", "RGBA", "L"):
            raise ImageFormatError(f"{path}: unsupported PNG mode {im.mode}")
        im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.float32) / 255.0
    return LinearImage(arr.transpose(2, 0, 1), "srgb")


def write_png(img: LinearImage, path) -> None:
    """Write an image as 8-bit PNG. Linear images are sRGB-encoded first."""
    if img.color_space == "linear":
        img = linear_to_srgb(img)
    data = np.clip(img.data, 0, 1)
    if data.shape[0] == 1:
        data = np.repeat(data, 3, axis=0)
    elif data.shape[0] != 3:
        raise ImageFormatError("PNG output needs 1 or 3 channels")
    u8 = np.round(data.transpose(1, 2, 0) * 255).astype(np.uint8)
    Image.fromarray(u8, "RGB").save(path)


def read_image(path) -> LinearImage:
    path = Path(path)
    if path.suffix.lower() == ".png":
        return read_png(path)
    return read_iidf(path)


def write_image(img: LinearImage, path) -> None:
    path = Path(path)
    if path.suffix.lower() == ".png":
        write_png(img, path)
    else:
        write_iidf(img, path)
