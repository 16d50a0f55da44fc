"""Image planes, PPM/PGM I/O, color conversion, bicubic resampling and SR metrics."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

SPACES = ("RGB", "Y", "YCbCr")
RANGES = (255.0, 1.0)


@dataclass(frozen=True)
class ImagePlane:
    """``H x W x ch`` float image tagged with color space and value range (1 or 255)."""

    data: np.ndarray
    space: str = "RGB"
    max_value: float = 255.0

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise ValueError(f"image data must be H x W x ch, got shape {arr.shape}")
        if self.space not in SPACES:
            raise ValueError(f"unknown color space {self.space!r}")
        if self.max_value not in RANGES:
            raise ValueError(f"range must be [0,255] or [0,1], got max {self.max_value}")
        expected = 1 if self.space == "Y" else 3
        if arr.shape[2] != expected:
            raise ValueError(f"{self.space} image needs {expected} channels, got {arr.shape[2]}")
        if arr.size and (arr.min() < 0 or arr.max() > self.max_value):
            raise ValueError(f"values outside [0, {self.max_value:g}]")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def to_range(self, max_value: float) -> "ImagePlane":
        if max_value == self.max_value:
            return self
        return ImagePlane(np.clip(self.data * (max_value / self.max_value), 0, max_value), self.space, max_value)


# ---------------------------------------------------------------- PNM I/O


class PnmError(ValueError):
    pass


class PnmMagicError(PnmError):
    pass


class PnmDepthError(PnmError):
    pass


class PnmTruncatedError(PnmError):
    pass


_HEADER = re.compile(rb"(P[56])(?:\s+|#[^\n]*\n)+(\d+)(?:\s+|#[^\n]*\n)+(\d+)(?:\s+|#[^\n]*\n)+(\d+)\s")


def read_pnm(blob: bytes) -> ImagePlane:
    """Parse binary P6 (RGB) or P5 (gray) with maxval 255."""
    if blob[:2] not in (b"P6", b"P5"):
        raise PnmMagicError("not a binary PPM/PGM (expected P6 or P5)")
    m = _HEADER.match(blob)
    if m is None:
        raise PnmTruncatedError("incomplete PNM header")
    magic, w, h, maxval = m.group(1), int(m.group(2)), int(m.group(3)), int(m.group(4))
    if maxval != 255:
        raise PnmDepthError(f"unsupported maxval {maxval}; only 8-bit (255) images are supported")
    ch = 3 if magic == b"P6" else 1
    n = w * h * ch
    payload = blob[m.end() : m.end() + n]
    if len(payload) < n:
        raise PnmTruncatedError(f"pixel data truncated: {len(payload)} of {n} bytes")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, ch).astype(np.float64)
    return ImagePlane(arr, "RGB" if ch == 3 else "Y", 255.0)


def write_pnm(img: ImagePlane) -> bytes:
    """Encode as P6/P5; values are rounded to the nearest 8-bit level."""
    img = img.to_range(255.0)
    if img.space == "YCbCr":
        raise ValueError("convert YCbCr to RGB before writing")
    magic = b"P6" if img.channels == 3 else b"P5"
    pix = np.clip(np.rint(img.data), 0, 255).astype(np.uint8)
    return magic + f"\n{img.width} {img.height}\n255\n".encode() + pix.tobytes()


# ------------------------------------------------------ color conversion

# BT.601 studio swing on 8-bit RGB
_YCC = np.array(
    [
        [65.481, 128.553, 24.966],
        [-37.797, -74.203, 112.0],
        [112.0, -93.786, -18.214],
    ]
) / 255.0
_YCC_OFFSET = np.array([16.0, 128.0, 128.0])


def rgb_to_ycbcr(img: ImagePlane) -> ImagePlane:
    if img.space != "RGB":
        raise ValueError(f"expected an RGB image, got {img.space}")
    rgb = img.to_range(255.0).data
    return ImagePlane(rgb @ _YCC.T + _YCC_OFFSET, "YCbCr", 255.0)


def ycbcr_to_rgb(img: ImagePlane) -> ImagePlane:
    if img.space != "YCbCr":
        raise ValueError(f"expected a YCbCr image, got {img.space}")
    rgb = np.linalg.solve(_YCC, (img.data - _YCC_OFFSET).reshape(-1, 3).T).T
    return ImagePlane(np.clip(rgb.reshape(img.data.shape), 0, 255), "RGB", 255.0)


def luma(img: ImagePlane) -> np.ndarray:
    """Y channel on the 0-255 scale as an ``H x W`` array."""
    if img.space == "Y":
        return img.to_range(255.0).data[:, :, 0]
    if img.space == "RGB":
        img = rgb_to_ycbcr(img)
    return img.data[:, :, 0]


# ------------------------------------------------------------- resizing


def cubic(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    ax = np.abs(x)
    ax2, ax3 = ax * ax, ax * ax * ax
    return np.where(
        ax <= 1,
        (a + 2) * ax3 - (a + 3) * ax2 + 1,
        np.where(ax < 2, a * ax3 - 5 * a * ax2 + 8 * a * ax - 4 * a, 0.0),
    )


def resize_weights(n_in: int, n_out: int) -> np.ndarray:
    """``n_out x n_in`` interpolation matrix; rows sum to 1.

    Sample centers map as ``src = (dst + 0.5) * n_in / n_out - 0.5``; when
    shrinking, the kernel is stretched by the scale factor (antialiasing).
    Out-of-range taps are clamped to the edge.
    """
    scale = n_out / n_in
    stretch = min(scale, 1.0)
    support = 2.0 / stretch
    dst = np.arange(n_out)
    src = (dst + 0.5) / scale - 0.5
    left = np.floor(src - support).astype(int) + 1
    taps = int(math.ceil(2 * support)) + 1
    idx = left[:, None] + np.arange(taps)[None, :]
    w = cubic((src[:, None] - idx) * stretch) * stretch
    w = w / w.sum(axis=1, keepdims=True)
    mat = np.zeros((n_out, n_in))
    np.add.at(mat, (np.repeat(dst, taps), np.clip(idx, 0, n_in - 1).ravel()), w.ravel())
    return mat


def bicubic_resize(img: ImagePlane, out_h: int, out_w: int) -> ImagePlane:
    if out_h < 1 or out_w < 1:
        raise ValueError("target size must be positive")
    wh = resize_weights(img.height, out_h)
    ww = resize_weights(img.width, out_w)
    out = np.einsum("ih,hwc,jw->ijc", wh, img.data, ww)
    return ImagePlane(np.clip(out, 0, img.max_value), img.space, img.max_value)


# -------------------------------------------------------------- metrics


def _shave(y: np.ndarray, crop: int) -> np.ndarray:
    return y[crop : y.shape[0] - crop, crop : y.shape[1] - crop] if crop else y


def _metric_inputs(a: ImagePlane, b: ImagePlane, crop: int) -> tuple[np.ndarray, np.ndarray]:
    if a.data.shape != b.data.shape:
        raise ValueError(f"image shapes differ: {a.data.shape} vs {b.data.shape}")
    return _shave(luma(a), crop), _shave(luma(b), crop)


def psnr(a: ImagePlane, b: ImagePlane, crop: int = 0) -> float:
    """PSNR in dB on the Y channel after removing ``crop`` border pixels; ``inf`` when identical."""
    ya, yb = _metric_inputs(a, b, crop)
    mse = np.mean((ya - yb) ** 2)
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(255.0**2 / mse)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax**2) / (2 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def _filter_valid(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    view = np.lib.stride_tricks.sliding_window_view(img, win.shape)
    return np.einsum("ijkl,kl->ij", view, win)


def ssim(a: ImagePlane, b: ImagePlane, crop: int = 0) -> float:
    """Mean SSIM over all valid 11x11 Gaussian-window positions of the Y channel."""
    ya, yb = _metric_inputs(a, b, crop)
    win = gaussian_window()
    if min(ya.shape) < win.shape[0]:
        raise ValueError(f"image {ya.shape} smaller than the {win.shape[0]}x{win.shape[0]} SSIM window")
    c1, c2 = (0.01 * 255) ** 2, (0.03 * 255) ** 2
    mu_a, mu_b = _filter_valid(ya, win), _filter_valid(yb, win)
    var_a = _filter_valid(ya * ya, win) - mu_a**2
    var_b = _filter_valid(yb * yb, win) - mu_b**2
    cov = _filter_valid(ya * yb, win) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def format_db(value: float) -> str:
    return "inf" if math.isinf(value) else f"{value:.4f}"


def metrics_csv(rows: Sequence[tuple[str, float, float]]) -> str:
    lines = ["image,psnr_db,ssim"]
    lines += [f"{name},{format_db(p)},{s:.6f}" for name, p, s in rows]
    return "\n".join(lines) + "\n"


# --------------------------------------------------------- augmentation


def dihedral(x: np.ndarray, hflip: bool, rot90: int) -> np.ndarray:
    """Horizontal flip (optional) followed by ``rot90`` counter-clockwise quarter turns."""
    if hflip:
        x = x[:, ::-1]
    return np.ascontiguousarray(np.rot90(x, rot90 % 4, axes=(0, 1)))


def invert_flags(hflip: bool, rot90: int) -> tuple[bool, int]:
    """Flags of the inverse transform; flipped elements are their own inverse."""
    return (True, rot90 % 4) if hflip else (False, (-rot90) % 4)


def augment(pair: tuple[np.ndarray, np.ndarray], hflip: bool = False, rot90: int = 0):
    lr, hr = pair
    return dihedral(lr, hflip, rot90), dihedral(hr, hflip, rot90)
