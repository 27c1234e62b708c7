"""Square images, isotropic padding and center rotation.

Coordinates are array coordinates: ``x`` is the column, ``y`` the row, rows
growing downwards.  A positive angle applies the standard rotation matrix in
this frame, so on screen content turns clockwise.  Beam indices in
:mod:`radial_canon.beams` run the same way, which makes a rotation by ``k``
beam spacings equal to a circular shift by ``k``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .errors import NonSquareImage, UnreadableFile


@dataclass(frozen=True, eq=False)
class Image:
    """H x W x C float image with values in [0, 1].

    ``pad`` records how many pixels of isotropic border have already been added.
    """

    data: np.ndarray
    pad: int = 0

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise ValueError(f"image must be HxW or HxWxC, got shape {arr.shape}")
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

    @property
    def is_square(self) -> bool:
        return self.height == self.width


def as_image(img) -> Image:
    return img if isinstance(img, Image) else Image(img)


def center_index(size: int) -> int:
    """Pixel index of the grid center, ``round_half_up((size - 1) / 2)``."""
    return size // 2


def optimal_padding(width: int) -> int:
    """Smallest isotropic border that keeps every pixel inside under any rotation."""
    return max(0, math.ceil(width * (math.sqrt(2.0) - 1.0) / 2.0))


def pad(img, delta: int, mode: str = "zero") -> Image:
    img = as_image(img)
    if delta < 0:
        raise ValueError("delta must be >= 0")
    if mode == "zero":
        fill = np.zeros(img.channels)
    elif mode == "corner_color":
        fill = img.data[0, 0, :]
    else:
        raise ValueError(f"unknown padding mode {mode!r}")
    h, w, c = img.data.shape
    out = np.empty((h + 2 * delta, w + 2 * delta, c))
    out[...] = fill
    out[delta:delta + h, delta:delta + w] = img.data
    return Image(out, pad=img.pad + delta)


def _source_coords(size: int, theta_deg: float):
    t = math.radians(theta_deg)
    cos_t, sin_t = math.cos(t), math.sin(t)
    # snap so grid-aligned angles stay exact
    cos_t = round(cos_t) if abs(cos_t - round(cos_t)) < 1e-12 else cos_t
    sin_t = round(sin_t) if abs(sin_t - round(sin_t)) < 1e-12 else sin_t
    c = (size - 1) / 2.0
    rows, cols = np.mgrid[0:size, 0:size].astype(np.float64)
    x = cols - c
    y = rows - c
    # inverse map: source = R(-theta) (p - c) + c
    xs = cos_t * x + sin_t * y + c
    ys = -sin_t * x + cos_t * y + c
    return ys, xs


def rotate(img, theta_deg: float, interp: str = "bilinear") -> Image:
    """Rotate a square image about its center by ``theta_deg`` degrees.

    Pull mapping: each output pixel reads the input at the inversely rotated
    position.  Reads falling outside the grid contribute 0.
    """
    img = as_image(img)
    if not img.is_square:
        raise NonSquareImage(f"rotate needs a square image, got {img.height}x{img.width}")
    theta_deg = float(theta_deg) % 360.0
    if theta_deg == 0.0:
        return Image(img.data.copy(), pad=img.pad)
    n = img.width
    ys, xs = _source_coords(n, theta_deg)
    src = img.data
    if interp == "nearest":
        r = np.floor(ys + 0.5).astype(np.int64)
        c = np.floor(xs + 0.5).astype(np.int64)
        ok = (r >= 0) & (r < n) & (c >= 0) & (c < n)
        out = np.zeros_like(src)
        out[ok] = src[r[ok], c[ok]]
        return Image(out, pad=img.pad)
    if interp != "bilinear":
        raise ValueError(f"unknown interpolation {interp!r}")
    r0 = np.floor(ys).astype(np.int64)
    c0 = np.floor(xs).astype(np.int64)
    fr = (ys - r0)[..., None]
    fc = (xs - c0)[..., None]
    out = np.zeros_like(src)
    for dr, dc, w in ((0, 0, (1 - fr) * (1 - fc)), (0, 1, (1 - fr) * fc),
                      (1, 0, fr * (1 - fc)), (1, 1, fr * fc)):
        rr = r0 + dr
        cc = c0 + dc
        ok = (rr >= 0) & (rr < n) & (cc >= 0) & (cc < n)
        vals = np.zeros_like(src)
        vals[ok] = src[rr[ok], cc[ok]]
        out += w * vals
    return Image(np.clip(out, 0.0, 1.0), pad=img.pad)


def shift(img, dx: int, dy: int) -> Image:
    """Integer translation (columns by ``dx``, rows by ``dy``) with zero fill."""
    img = as_image(img)
    h, w, _ = img.data.shape
    out = np.zeros_like(img.data)
    src_r = slice(max(0, -dy), min(h, h - dy))
    dst_r = slice(max(0, dy), min(h, h + dy))
    src_c = slice(max(0, -dx), min(w, w - dx))
    dst_c = slice(max(0, dx), min(w, w + dx))
    out[dst_r, dst_c] = img.data[src_r, src_c]
    return Image(out, pad=img.pad)


def read_png(path) -> Image:
    try:
        with PILImage.open(path) as im:
            im.load()
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.float64) / 255.0
    except (OSError, ValueError) as exc:
        raise UnreadableFile(f"{path}: {exc}") from exc
    return Image(arr)


def write_png(path, img) -> None:
    img = as_image(img)
    arr = np.round(np.clip(img.data, 0.0, 1.0) * 255.0).astype(np.uint8)
    if arr.shape[2] == 1:
        PILImage.fromarray(arr[:, :, 0], mode="L").save(Path(path))
    elif arr.shape[2] == 3:
        PILImage.fromarray(arr, mode="RGB").save(Path(path))
    else:
        raise ValueError("PNG output supports 1 or 3 channels")
