"""Radial beam masks, beam sampling and the coverage/overlap analytics.

Beam 0 points straight up from the center pixel and indices increase
clockwise on screen: beam ``i`` has direction ``90 - i * 360 / n_beams``
degrees measured counter-clockwise from the positive x axis (y up).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BeamBoundExceeded, DomainError, MaskOutOfGrid, SizeMismatch
from .imageops import as_image, center_index


def max_beams(length: int, thickness: int) -> int:
    """Largest beam count the pixel ring at radius ``length`` can separate."""
    return (8 * length) // (2 * thickness + 1)


def _bresenham(dx: int, dy: int) -> list[tuple[int, int]]:
    """Integer Bresenham from the origin to (dx, dy), origin excluded.

    Runs on absolute values and re-applies signs, so the pixel pattern is
    symmetric under axis swaps and reflections.
    """
    sx = 1 if dx > 0 else -1
    sy = 1 if dy > 0 else -1
    ax, ay = abs(dx), abs(dy)
    swap = ay > ax
    if swap:
        ax, ay = ay, ax
    err = 2 * ay - ax
    major = minor = 0
    out = []
    for _ in range(ax):
        if err >= 0:
            minor += 1
            err -= 2 * ax
        major += 1
        err += 2 * ay
        if swap:
            out.append((minor * sx, major * sy))
        else:
            out.append((major * sx, minor * sy))
    return out


def _round_away(v: float) -> int:
    return int(math.copysign(math.floor(abs(v) + 0.5), v))


def beam_direction(i: int, n_beams: int) -> float:
    """Direction of beam ``i`` in degrees (counter-clockwise, y up)."""
    return 90.0 - i * 360.0 / n_beams


def _endpoints(n_beams: int, length: int) -> np.ndarray:
    """(n_beams, 2) integer (x, y) endpoints at Euclidean distance ``length``."""
    out = np.empty((n_beams, 2), dtype=np.int64)
    for i in range(n_beams):
        a = math.radians(beam_direction(i, n_beams))
        # x = column offset, y = row offset (rows grow downwards)
        out[i] = _round_away(length * math.cos(a)), _round_away(-length * math.sin(a))
    return out


def _beam_coords(grid_size: int, n_beams: int, length: int, thickness: int) -> np.ndarray:
    """Unchecked (n_beams, length, 2*thickness+1, 2) array of (row, col).

    Each beam is the Bresenham line from the center to its endpoint, read at
    ``length`` unit (Euclidean) steps: step ``t`` takes the line pixel whose
    major coordinate is ``round(t * n_pixels / length)``.  Off-axis lines have
    fewer than ``length`` pixels, so some repeat; in exchange step ``t`` sits
    at radius ~t for every direction, which keeps rotations and circular
    shifts in register.
    """
    c = center_index(grid_size)
    ends = _endpoints(n_beams, length)
    ex, ey = ends[:, 0:1], ends[:, 1:2]
    ax, ay = np.abs(ex), np.abs(ey)
    # exact diagonals alternate their widening axis by quadrant so that a
    # quarter turn of the mask maps it onto itself
    x_major = (ax > ay) | ((ax == ay) & (ex * ey < 0))
    big = np.maximum(ax, ay)
    small = np.minimum(ax, ay)
    t = np.arange(1, length + 1)[None, :]
    j = np.clip((2 * t * big + length) // (2 * length), 1, big)
    # closed form of the integer Bresenham minor coordinate (ties step outwards)
    minor = (2 * j * small + big) // (2 * big)
    sx = np.where(ex > 0, 1, -1)
    sy = np.where(ey > 0, 1, -1)
    px = np.where(x_major, j, minor) * sx
    py = np.where(x_major, minor, j) * sy
    # neighbours ordered from the beam's left side to its right side
    offsets = np.arange(-thickness, thickness + 1)[None, None, :]
    row_side = np.where(ex > 0, 1, -1)[:, :, None]
    col_side = np.where(ey < 0, 1, -1)[:, :, None]
    xm = x_major[:, :, None]
    rows = c + py[:, :, None] + np.where(xm, offsets * row_side, 0)
    cols = c + px[:, :, None] + np.where(xm, 0, offsets * col_side)
    return np.stack([rows, cols], axis=-1)


@dataclass(frozen=True, eq=False)
class BeamMask:
    grid_size: int
    num_beams: int
    length: int
    thickness: int
    coords: np.ndarray  # (num_beams, length, 2*thickness+1, 2) of (row, col)

    @property
    def width(self) -> int:
        return 2 * self.thickness + 1


def build_mask(grid_size: int, num_beams: int, length: int, thickness: int) -> BeamMask:
    if num_beams < 1 or length < 1 or thickness < 0:
        raise ValueError("need num_beams >= 1, length >= 1, thickness >= 0")
    if num_beams > 8 * length / (2 * thickness + 1):
        raise BeamBoundExceeded(
            f"{num_beams} beams exceed the bound 8*{length}/{2 * thickness + 1}")
    coords = _beam_coords(grid_size, num_beams, length, thickness)
    if coords.min() < 0 or coords.max() >= grid_size:
        raise MaskOutOfGrid(
            f"beams of length {length} and thickness {thickness} leave a {grid_size} grid")
    coords.setflags(write=False)
    return BeamMask(grid_size, num_beams, length, thickness, coords)


def sample(img, mask: BeamMask) -> np.ndarray:
    """Gather beam pixels into a (num_beams, 2*eps+1, D, C) tensor."""
    img = as_image(img)
    if img.height != mask.grid_size or img.width != mask.grid_size:
        raise SizeMismatch(f"image {img.height}x{img.width} vs mask grid {mask.grid_size}")
    rows = mask.coords[..., 0].transpose(0, 2, 1)
    cols = mask.coords[..., 1].transpose(0, 2, 1)
    return img.data[rows, cols]


def sample_batch(images: np.ndarray, mask: BeamMask) -> np.ndarray:
    """Batched gather for an (N, H, W, C) stack."""
    if images.shape[1] != mask.grid_size or images.shape[2] != mask.grid_size:
        raise SizeMismatch(f"images {images.shape[1:3]} vs mask grid {mask.grid_size}")
    rows = mask.coords[..., 0].transpose(0, 2, 1)
    cols = mask.coords[..., 1].transpose(0, 2, 1)
    return images[:, rows, cols]


def circular_shift(beams, k: int, axis: int = 0):
    """Beam ``i`` of the result is beam ``i - k`` of the input."""
    return np.roll(beams, k, axis=axis)


def _check_domain(num_beams: int):
    if num_beams < 8:
        raise DomainError("the triangle approximation needs at least 8 beams")


def _uncovered(num_beams: int, length: int, thickness: int) -> float:
    base = 8.0 * length / num_beams - (2 * thickness + 1)
    return base ** 2 / (2.0 * math.tan(2.0 * math.pi / num_beams))


def coverage_approx(num_beams: int, length: int, thickness: int) -> float:
    _check_domain(num_beams)
    return num_beams * (4.0 * length ** 2 / num_beams - _uncovered(num_beams, length, thickness))


def overlap_approx(num_beams: int, length: int, thickness: int) -> float:
    _check_domain(num_beams)
    return num_beams * ((2 * thickness + 1) * length - 4.0 * length ** 2 / num_beams
                        + _uncovered(num_beams, length, thickness))


def multiplicity_grid(mask: BeamMask) -> np.ndarray:
    """Number of beams touching each pixel (a pixel counts once per beam)."""
    grid = np.zeros((mask.grid_size, mask.grid_size), dtype=np.int64)
    for beam in mask.coords:
        flat = np.unique(beam[..., 0].ravel() * mask.grid_size + beam[..., 1].ravel())
        grid.ravel()[flat] += 1
    return grid


def exact_coverage(mask: BeamMask) -> tuple[int, dict[int, int]]:
    """Pixels covered at least once, plus a histogram {multiplicity: pixel count}."""
    grid = multiplicity_grid(mask)
    values, counts = np.unique(grid[grid > 0], return_counts=True)
    return int((grid > 0).sum()), {int(v): int(n) for v, n in zip(values, counts)}


def exact_overlap(mask: BeamMask) -> int:
    """Sum of ``m - 1`` over pixels touched by ``m >= 1`` beams."""
    _, hist = exact_coverage(mask)
    return sum((m - 1) * n for m, n in hist.items())


def unique_pixel_counts(mask: BeamMask) -> np.ndarray:
    """Per beam, how many of its pixels no other beam touches."""
    grid = multiplicity_grid(mask)
    out = np.empty(mask.num_beams, dtype=np.int64)
    for i, beam in enumerate(mask.coords):
        flat = np.unique(beam[..., 0].ravel() * mask.grid_size + beam[..., 1].ravel())
        out[i] = int((grid.ravel()[flat] == 1).sum())
    return out
