"""Procedural datasets and image-directory plumbing.

Synthetic images are generated at their canonical orientation (label 0).
Light azimuths are measured on screen: counter-clockwise from the right,
90 degrees pointing up.  Because a positive rotation turns content clockwise
on screen, rotating a lit sphere by theta moves its light to ``azimuth - theta``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import EmptyDataset, MixedSizes
from .imageops import read_png, write_png

KINDS = ("lit_sphere", "oriented_glyph", "gradient_disk")
LIGHT_ELEVATION = 45.0
MANIFEST = "manifest.csv"


@dataclass(frozen=True)
class SyntheticSpec:
    kind: str = "lit_sphere"
    image_size: int = 64
    count: int = 512
    light_azimuth: float = 90.0
    noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown synthetic kind {self.kind!r}")
        if self.count < 0:
            raise ValueError("count must be >= 0")


@dataclass(eq=False)
class Dataset:
    images: np.ndarray                       # (N, S, S, C) in [0, 1]
    thetas: np.ndarray = None                # (N,) degrees of rotation already applied
    ks: np.ndarray = None                    # (N,) subgroup index or -1
    names: list[str] = field(default_factory=list)
    splits: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        n = len(self.images)
        if self.thetas is None:
            self.thetas = np.zeros(n)
        if self.ks is None:
            self.ks = np.full(n, -1, dtype=np.int64)
        if not self.names:
            self.names = [f"{i:05d}.png" for i in range(n)]
        if not self.splits:
            self.splits = [""] * n

    def __len__(self) -> int:
        return len(self.images)

    @property
    def image_size(self) -> int:
        return self.images.shape[1]

    @property
    def channels(self) -> int:
        return self.images.shape[3]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.images[idx], self.thetas[idx], self.ks[idx],
                       [self.names[i] for i in idx], [self.splits[i] for i in idx])


def _grid(size: int):
    c = (size - 1) / 2.0
    rows, cols = np.mgrid[0:size, 0:size].astype(np.float64)
    # screen coordinates, y up
    return cols - c, c - rows


def _sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def render_lit_sphere(size: int, azimuth: float, intensity: float = 1.0, radius: float = 0.8,
                      ambient: float = 0.1) -> np.ndarray:
    x, y = _grid(size)
    r = radius * (size - 1) / 2.0
    u, v = x / r, y / r
    inside = u * u + v * v <= 1.0
    w = np.sqrt(np.clip(1.0 - u * u - v * v, 0.0, None))
    az, el = math.radians(azimuth), math.radians(LIGHT_ELEVATION)
    light = (math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el))
    shade = np.maximum(0.0, u * light[0] + v * light[1] + w * light[2])
    img = np.where(inside, ambient + intensity * shade, 0.0)
    return np.clip(img, 0.0, 1.0)[:, :, None]


def gen_lit_sphere(spec: SyntheticSpec) -> Dataset:
    """Lambertian spheres lit from ``spec.light_azimuth`` at 45 deg elevation.

    Each sample draws its own light intensity, ambient term and radius.
    """
    if spec.image_size < 32:
        raise ValueError("lit spheres need image_size >= 32")
    imgs = []
    for i in range(spec.count):
        rng = _sample_rng(spec.seed, i)
        img = render_lit_sphere(spec.image_size, spec.light_azimuth,
                                intensity=rng.uniform(0.6, 1.0),
                                radius=rng.uniform(0.7, 0.85),
                                ambient=rng.uniform(0.05, 0.15))
        imgs.append(_add_noise(img, spec.noise_std, rng))
    return _finish(imgs, spec)


def _point_in_polygon(x: np.ndarray, y: np.ndarray, poly: np.ndarray) -> np.ndarray:
    inside = np.zeros(x.shape, dtype=bool)
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        crosses = (y1 > y) != (y2 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (x < xint)
    return inside


# arrow pointing up with a flag on the right of the stem (no mirror symmetry)
GLYPH = np.array([
    (0.0, 0.9), (0.5, 0.3), (0.18, 0.3), (0.18, -0.2), (0.5, -0.2),
    (0.5, -0.45), (0.18, -0.45), (0.18, -0.8), (-0.18, -0.8), (-0.18, 0.3), (-0.5, 0.3),
])


def render_glyph(size: int, scale: float = 1.0, value: float = 1.0, supersample: int = 4) -> np.ndarray:
    offs = (np.arange(supersample) + 0.5) / supersample - 0.5
    x, y = _grid(size)
    half = (size - 1) / 2.0 * 0.9 * scale
    acc = np.zeros((size, size))
    poly = GLYPH * half
    for dy in offs:
        for dx in offs:
            acc += _point_in_polygon(x + dx, y - dy, poly)
    return (value * acc / supersample ** 2)[:, :, None]


def gen_oriented_glyph(spec: SyntheticSpec) -> Dataset:
    imgs = []
    for i in range(spec.count):
        rng = _sample_rng(spec.seed, i)
        img = render_glyph(spec.image_size, scale=rng.uniform(0.8, 1.0), value=rng.uniform(0.6, 1.0))
        imgs.append(_add_noise(img, spec.noise_std, rng))
    return _finish(imgs, spec)


def gen_gradient_disk(spec: SyntheticSpec) -> Dataset:
    imgs = []
    x, y = _grid(spec.image_size)
    for i in range(spec.count):
        rng = _sample_rng(spec.seed, i)
        r = rng.uniform(0.7, 0.9) * (spec.image_size - 1) / 2.0
        lo = rng.uniform(0.1, 0.3)
        img = np.where(x * x + y * y <= r * r, lo + (1.0 - lo) * (y / r + 1.0) / 2.0, 0.0)
        imgs.append(_add_noise(np.clip(img, 0.0, 1.0)[:, :, None], spec.noise_std, rng))
    return _finish(imgs, spec)


GENERATORS = {
    "lit_sphere": gen_lit_sphere,
    "oriented_glyph": gen_oriented_glyph,
    "gradient_disk": gen_gradient_disk,
}


def generate(spec: SyntheticSpec) -> Dataset:
    return GENERATORS[spec.kind](spec)


def light_positions() -> list[float]:
    """Nine azimuths 40 degrees apart."""
    return [40.0 * i for i in range(9)]


def light_sweep(spec: SyntheticSpec) -> dict[float, Dataset]:
    """One lit-sphere test set per light position."""
    return {az: gen_lit_sphere(replace(spec, kind="lit_sphere", light_azimuth=az))
            for az in light_positions()}


def _add_noise(img: np.ndarray, std: float, rng: np.random.Generator) -> np.ndarray:
    if std > 0:
        img = img + rng.normal(0.0, std, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def _finish(imgs, spec: SyntheticSpec) -> Dataset:
    if not imgs:
        return Dataset(np.zeros((0, spec.image_size, spec.image_size, 1)))
    return Dataset(np.stack(imgs))


def split_indices(n: int, fraction: float = 0.8, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Disjoint shuffled train/test index arrays with ``round(fraction * n)`` training items."""
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(fraction * n))
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def load_image_dir(path) -> Dataset:
    """PNG files in lexicographic order; labels come from manifest.csv when present."""
    path = Path(path)
    files = sorted(p for p in path.iterdir() if p.suffix.lower() == ".png")
    if not files:
        raise EmptyDataset(f"no PNG files in {path}")
    imgs = [read_png(f).data for f in files]
    shapes = {im.shape for im in imgs}
    if len(shapes) != 1:
        raise MixedSizes(f"images in {path} differ in shape: {sorted(shapes)}")
    h, w, _ = imgs[0].shape
    if h != w:
        raise MixedSizes(f"images in {path} are not square ({h}x{w})")
    ds = Dataset(np.stack(imgs), names=[f.name for f in files])
    manifest = path / MANIFEST
    if manifest.exists():
        rows = {r["filename"]: r for r in csv.DictReader(manifest.open(newline="", encoding="utf-8"))}
        for i, name in enumerate(ds.names):
            row = rows.get(name)
            if row is None:
                continue
            ds.thetas[i] = float(row["theta_degrees"] or 0.0)
            ds.ks[i] = int(row["k"]) if row["k"] not in ("", None) else -1
            ds.splits[i] = row.get("split", "") or ""
    return ds


def write_dataset(ds: Dataset, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    with (path / MANIFEST).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["filename", "theta_degrees", "k", "split"])
        for i, name in enumerate(ds.names):
            write_png(path / name, ds.images[i])
            k = int(ds.ks[i])
            writer.writerow([name, f"{float(ds.thetas[i]):.6f}", "" if k < 0 else k, ds.splits[i]])
    return path
