"""Augmentation, optimization, evaluation and the analysis harnesses.

Images in a :class:`~radial_canon.data.Dataset` sit at their canonical
orientation.  Training pads each image, rotates it by a sampled angle and
regresses that angle; evaluation does the same on the held-out split with
a seeded generator so every run sees the same test rotations.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import rbt
from .angles import LOSS_MODES, angular_distance, circle_loss, combine_losses, loss_to_degrees, one_hot, prior_loss
from .autodiff import Tensor
from .beams import BeamMask, build_mask, sample_batch
from .data import Dataset, split_indices
from .errors import ConfigError, EmptyDataset, MaskOutOfGrid, NonFiniteLoss, ShapeMismatch, SizeMismatch
from .imageops import Image, as_image, optimal_padding, pad, rotate, shift
from .net import BicModel, ModelConfig, init

REGIMES = ("finite", "continuous")
PRESETS = ("A", "B", "C")


# ---- configuration ----------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    num_beams: int = 32
    length: int = 0            # 0 picks the length from beam_preset
    beam_preset: str = "B"
    thickness: int = 1
    latent: int = 128
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    loss_mode: str = "circle_only"
    rotation_regime: str = "continuous"
    iterations: int = 1000
    seed: int = 0
    split_fraction: float = 0.8
    edge_factor: float = 0.5
    prior_source: str = "context"
    pad_mode: str = "zero"
    dtype: str = "float64"

    def __post_init__(self):
        if self.loss_mode not in LOSS_MODES:
            raise ConfigError(f"loss_mode must be one of {LOSS_MODES}")
        if self.rotation_regime not in REGIMES:
            raise ConfigError(f"rotation_regime must be one of {REGIMES}")
        if self.beam_preset not in PRESETS:
            raise ConfigError(f"beam_preset must be one of {PRESETS}")
        if self.loss_mode != "circle_only" and self.rotation_regime != "finite":
            raise ConfigError("prior loss modes need rotation_regime=finite (the prior has no continuous target)")
        if self.batch_size < 1 or self.iterations < 0 or self.num_beams < 1:
            raise ConfigError("batch_size and num_beams must be >= 1, iterations >= 0")
        if not 0.0 < self.split_fraction <= 1.0:
            raise ConfigError("split_fraction must lie in (0, 1]")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")


def _coerce(kind, text: str):
    if kind in (int, "int"):
        return int(text)
    if kind in (float, "float"):
        return float(text)
    return text


def config_from_text(text: str) -> TrainConfig:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    types = {f.name: f.type for f in fields(TrainConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            values[key] = _coerce(types[key], val)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {val!r}") from exc
    return TrainConfig(**values)


def read_config(path) -> TrainConfig:
    return config_from_text(Path(path).read_text(encoding="utf-8"))


def config_to_text(cfg: TrainConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in asdict(cfg).items())


def write_config(path, cfg: TrainConfig) -> None:
    Path(path).write_text(config_to_text(cfg), encoding="utf-8")


def preset_length(image_size: int, preset: str, num_beams: int = 8, thickness: int = 1) -> int:
    """Beam length for preset A (W/2 - delta), B (W/2) or C (W/2 + delta).

    C is cut back to the longest beam that still fits the padded grid.
    """
    delta = optimal_padding(image_size)
    half = image_size // 2
    target = {"A": half - delta, "B": half, "C": half + delta}[preset]
    grid = image_size + 2 * delta
    length = max(target, 1)
    while length > 1:
        try:
            build_mask(grid, num_beams, length, thickness)
            return length
        except MaskOutOfGrid:
            length -= 1
    return length


# ---- sampling and optimization ----------------------------------------

def augment(img, regime: str, num_beams: int, rng: np.random.Generator):
    """Rotate a padded image by a random angle; returns (image, degrees, k or None)."""
    if regime == "finite":
        k = int(rng.integers(num_beams))
        theta = k * 360.0 / num_beams
    elif regime == "continuous":
        k = None
        theta = float(rng.uniform(0.0, 360.0))
    else:
        raise ValueError(f"unknown rotation regime {regime!r}")
    return rotate(img, theta), theta, k


def draw_angles(count: int, regime: str, num_beams: int, rng: np.random.Generator):
    """The angle sequence :func:`augment` would draw, without rotating anything."""
    if regime == "finite":
        ks = rng.integers(num_beams, size=count)
        return ks * 360.0 / num_beams, ks
    return rng.uniform(0.0, 360.0, size=count), np.full(count, -1)


def adam_step(params: dict, grads: dict, state: dict | None, t: int, lr: float = 1e-4,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update.  Returns (new params, new state)."""
    if t < 1:
        raise ValueError("Adam step counter starts at 1")
    if set(params) != set(grads):
        raise ShapeMismatch("parameter and gradient names differ")
    state = state or {}
    new_params, new_state = {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeMismatch(f"{name}: gradient {g.shape} vs parameter {p.shape}")
        m, v = state.get(name, (np.zeros_like(p), np.zeros_like(p)))
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        new_params[name] = (p - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype)
        new_state[name] = (m, v)
    return new_params, new_state


# ---- predictors -------------------------------------------------------

class Regressor:
    """A trained model together with the padding and beam mask it was trained with.

    Entry points accept images at the original size (padded on the fly) or
    already padded to the beam grid.
    """

    def __init__(self, model: BicModel, image_size: int, pad_mode: str = "zero"):
        self.model = model
        self.image_size = image_size
        self.delta = optimal_padding(image_size)
        self.pad_mode = pad_mode
        cfg = model.config
        self.mask: BeamMask = build_mask(image_size + 2 * self.delta, cfg.num_beams, cfg.length, cfg.thickness)

    @property
    def grid_size(self) -> int:
        return self.mask.grid_size

    def prepare(self, img) -> np.ndarray:
        img = as_image(img)
        if img.width == self.grid_size:
            return img.data
        if img.width != self.image_size:
            raise SizeMismatch(f"image is {img.width} px; expected {self.image_size} or padded {self.grid_size}")
        return pad(img, self.delta, self.pad_mode).data

    def beams(self, images) -> np.ndarray:
        images = np.asarray(images, dtype=np.float64)
        if images.ndim == 3:
            images = images[None]
        if images.shape[1] != self.grid_size:
            images = np.stack([self.prepare(im) for im in images])
        return sample_batch(images, self.mask).astype(self.model.config.dtype)

    def predict_vectors(self, images, labels=None, batch: int = 64) -> np.ndarray:
        images = np.asarray(images)
        if images.ndim == 3:
            images = images[None]
        out = [self.model.forward(self.beams(images[i:i + batch])).z.data
               for i in range(0, len(images), batch)]
        return np.concatenate(out).astype(np.float64)

    def predict_degrees(self, images, labels=None) -> np.ndarray:
        return vectors_to_degrees(self.predict_vectors(images))

    def save(self, path, extra: dict | None = None):
        meta = {"image_size": self.image_size, "pad_mode": self.pad_mode}
        meta.update(extra or {})
        self.model.save(path, meta)

    @classmethod
    def load(cls, path) -> tuple["Regressor", dict]:
        model, meta = BicModel.load(path)
        return cls(model, meta["image_size"], meta.get("pad_mode", "zero")), meta


class OraclePredictor:
    """Returns the ground-truth unit vector; with no label it answers ``theta``."""

    def __init__(self, theta: float = 0.0):
        self.theta = theta

    def predict_vectors(self, images, labels=None) -> np.ndarray:
        n = len(np.asarray(images)) if np.ndim(images) == 4 else 1
        deg = np.full(n, self.theta) if labels is None else np.asarray(labels, dtype=np.float64)
        rad = np.radians(deg)
        return np.stack([np.cos(rad), np.sin(rad)], axis=-1)

    def predict_degrees(self, images, labels=None) -> np.ndarray:
        return vectors_to_degrees(self.predict_vectors(images, labels))


class RandomPredictor:
    """Uniformly random unit vectors: the chance-level baseline."""

    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)

    def predict_vectors(self, images, labels=None) -> np.ndarray:
        n = len(np.asarray(images)) if np.ndim(images) == 4 else 1
        rad = self.rng.uniform(0.0, 2 * math.pi, size=n)
        return np.stack([np.cos(rad), np.sin(rad)], axis=-1)

    def predict_degrees(self, images, labels=None) -> np.ndarray:
        return vectors_to_degrees(self.predict_vectors(images, labels))


def vectors_to_degrees(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    return np.mod(np.degrees(np.arctan2(z[..., 1], z[..., 0])), 360.0)


# ---- training ---------------------------------------------------------

class TrainResult(NamedTuple):
    model: BicModel
    curve: list[float]
    regressor: Regressor
    train_idx: np.ndarray
    test_idx: np.ndarray


def model_config_for(cfg: TrainConfig, image_size: int, channels: int) -> ModelConfig:
    length = cfg.length or preset_length(image_size, cfg.beam_preset, cfg.num_beams, cfg.thickness)
    return ModelConfig(num_beams=cfg.num_beams, length=length, thickness=cfg.thickness,
                       channels=channels, latent=cfg.latent, edge_factor=cfg.edge_factor,
                       prior_source=cfg.prior_source, dtype=cfg.dtype)


def _loss(model: BicModel, beams, ref_beams, thetas_deg, ks, cfg: TrainConfig, epoch: int):
    use_prior = cfg.loss_mode != "circle_only"
    out = model.forward(beams, reference=ref_beams if use_prior else None)
    rad = np.radians(thetas_deg).astype(cfg.dtype)
    l_circle = circle_loss(rad, out.z[:, 0], out.z[:, 1]).mean()
    if not use_prior:
        return l_circle
    l_prior = prior_loss(one_hot(ks, cfg.num_beams), out.p)
    return combine_losses(l_circle, l_prior, cfg.loss_mode, epoch)


def train(cfg: TrainConfig, dataset: Dataset, progress=None) -> TrainResult:
    """Fit a model on the training split; the loss curve has one entry per iteration."""
    if len(dataset) == 0:
        raise EmptyDataset("cannot train on an empty dataset")
    train_idx, test_idx = split_indices(len(dataset), cfg.split_fraction, cfg.seed)
    if len(train_idx) == 0:
        raise EmptyDataset("training split is empty")
    mcfg = model_config_for(cfg, dataset.image_size, dataset.channels)
    model = init(mcfg, cfg.seed)
    reg = Regressor(model, dataset.image_size, cfg.pad_mode)
    padded = np.stack([reg.prepare(dataset.images[i]) for i in train_idx])

    rng = np.random.default_rng([cfg.seed, 1])
    order = rng.permutation(len(train_idx))
    cursor, epoch = 0, 1
    state, curve = None, []
    names = list(model.params)
    for t in range(1, cfg.iterations + 1):
        pick = []
        while len(pick) < cfg.batch_size:
            if cursor == len(order):
                order, cursor, epoch = rng.permutation(len(train_idx)), 0, epoch + 1
            take = min(cfg.batch_size - len(pick), len(order) - cursor)
            pick.extend(order[cursor:cursor + take])
            cursor += take
        base = padded[pick]
        thetas, ks = draw_angles(len(pick), cfg.rotation_regime, cfg.num_beams, rng)
        rotated = np.stack([rotate(im, th).data for im, th in zip(base, thetas)])
        beams = sample_batch(rotated, reg.mask).astype(cfg.dtype)
        ref = sample_batch(base, reg.mask).astype(cfg.dtype) if cfg.loss_mode != "circle_only" else None

        model.zero_grad()
        loss = _loss(model, beams, ref, thetas, ks, cfg, epoch)
        value = float(loss.item())
        if not math.isfinite(value):
            raise NonFiniteLoss(f"loss became {value} at iteration {t} (epoch {epoch})")
        loss.backward()
        grads = {k: model.params[k].grad for k in names}
        for k, g in grads.items():
            if g is None:
                grads[k] = np.zeros_like(model.params[k].data)
            elif not np.all(np.isfinite(g)):
                raise NonFiniteLoss(f"non-finite gradient for {k} at iteration {t}")
        new, state = adam_step({k: model.params[k].data for k in names}, grads, state, t,
                               cfg.learning_rate, cfg.beta1, cfg.beta2)
        for k in names:
            model.params[k].data = new[k]
        curve.append(value)
        if progress is not None:
            progress(t, value)
    return TrainResult(model, curve, reg, train_idx, test_idx)


def write_curve(path, curve, header=("iteration", "loss")) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i, v in enumerate(curve, 1):
            w.writerow([i, repr(float(v))])


# ---- evaluation -------------------------------------------------------

@dataclass
class EvalReport:
    count: int
    mean_loss: float
    mean_error_deg: float
    errors_deg: np.ndarray = field(repr=False)
    thetas_deg: np.ndarray = field(repr=False)
    hist_edges: np.ndarray = field(repr=False)
    hist_counts: np.ndarray = field(repr=False)
    hist_mean_error: np.ndarray = field(repr=False)
    consistency_gap_deg: float = 0.0   # max |atan2 error - loss_to_degrees(loss)|
    stability: list = field(default_factory=list, repr=False)

    def rows(self):
        for lo, hi, n, e in zip(self.hist_edges[:-1], self.hist_edges[1:], self.hist_counts, self.hist_mean_error):
            yield lo, hi, int(n), e


def evaluate(predictor, dataset: Dataset, regime: str = "continuous", num_beams: int = 32,
             seed: int = 0, bins: int = 24, prerotated: bool = False) -> EvalReport:
    """Rotate every image once at a seeded random angle and score the predictions.

    ``predictor`` is a :class:`Regressor` or any object with a compatible
    ``predict_vectors(images, labels)``.  ``regime`` picks the test
    rotations, so a model trained on the finite group can be scored on
    arbitrary angles.  With ``prerotated`` the images are taken as already
    rotated by ``dataset.thetas``.
    """
    if len(dataset) == 0:
        raise EmptyDataset("cannot evaluate on an empty dataset")
    if prerotated:
        thetas = np.asarray(dataset.thetas, dtype=np.float64)
        rotated = dataset.images
    else:
        rng = np.random.default_rng([seed, 2])
        thetas, _ = draw_angles(len(dataset), regime, num_beams, rng)
        delta = optimal_padding(dataset.image_size)
        pad_mode = getattr(predictor, "pad_mode", "zero")
        rotated = np.stack([rotate(pad(im, delta, pad_mode), th).data for im, th in zip(dataset.images, thetas)])
    z = np.asarray(predictor.predict_vectors(rotated, labels=thetas), dtype=np.float64)
    # re-normalize in double precision so both error readings agree
    z = z / np.linalg.norm(z, axis=-1, keepdims=True)
    losses = circle_loss(np.radians(thetas), z[:, 0], z[:, 1])
    errors = angular_distance(vectors_to_degrees(z), thetas)
    errors = np.atleast_1d(errors)
    via_loss = loss_to_degrees(np.clip(losses, 0.0, 4.0))
    edges = np.linspace(0.0, 360.0, bins + 1)
    which = np.clip(np.digitize(thetas, edges) - 1, 0, bins - 1)
    counts = np.bincount(which, minlength=bins)
    sums = np.bincount(which, weights=errors, minlength=bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_err = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return EvalReport(
        count=len(dataset), mean_loss=float(np.mean(losses)), mean_error_deg=float(np.mean(errors)),
        errors_deg=errors, thetas_deg=np.asarray(thetas), hist_edges=edges, hist_counts=counts,
        hist_mean_error=mean_err,
        consistency_gap_deg=float(np.max(np.abs(np.atleast_1d(via_loss) - errors))),
    )


def write_report(path, report: EvalReport) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["theta_lo", "theta_hi", "count", "mean_error_deg"])
        for row in report.rows():
            w.writerow(row)
        w.writerow([])
        w.writerow(["samples", "mean_loss", "mean_error_deg", "consistency_gap_deg"])
        w.writerow([report.count, report.mean_loss, report.mean_error_deg, report.consistency_gap_deg])


# ---- canonicalization and analysis ------------------------------------

def canonicalize(predictor, img, label: float | None = None) -> tuple[Image, float]:
    """Undo the predicted rotation; returns (image, predicted degrees)."""
    img = as_image(img)
    labels = None if label is None else [label]
    theta = float(predictor.predict_degrees(img.data[None], labels=labels)[0])
    return rotate(img, -theta), theta


def saliency(reg: Regressor, img, theta_deg: float = 0.0) -> np.ndarray:
    """|d circle_loss / d pixel| on the padded grid, scaled so the maximum is 1.

    ``theta_deg`` is the label the loss is measured against.  Pixels that no
    beam reads get exactly zero.
    """
    data = np.asarray(reg.prepare(img), dtype=reg.model.config.dtype)
    x = Tensor(data, requires_grad=True)
    rows = reg.mask.coords[..., 0].transpose(0, 2, 1)
    cols = reg.mask.coords[..., 1].transpose(0, 2, 1)
    beams = x[rows, cols]
    beams = beams.reshape(1, *beams.shape)
    out = reg.model.forward(beams)
    rad = math.radians(theta_deg)
    loss = circle_loss(rad, out.z[:, 0], out.z[:, 1]).sum()
    loss.backward()
    heat = np.abs(x.grad).sum(axis=-1)
    peak = heat.max()
    return heat / peak if peak > 0 else heat


def stability_sweep(reg, dataset: Dataset, radius: int = 5) -> list[tuple[int, int, float]]:
    """Mean angular deviation from the unshifted prediction for each shift (dx, dy)."""
    if len(dataset) == 0:
        raise EmptyDataset("cannot sweep an empty dataset")
    base_imgs = np.stack([reg.prepare(im) for im in dataset.images])
    base = reg.predict_degrees(base_imgs)
    curve = []
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            if dx == 0 and dy == 0:
                curve.append((0, 0, 0.0))
                continue
            moved = np.stack([shift(im, dx, dy).data for im in base_imgs])
            dev = angular_distance(reg.predict_degrees(moved), base)
            curve.append((dx, dy, float(np.mean(dev))))
    return curve


def write_stability(path, curve) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["dx", "dy", "mean_deviation_deg"])
        w.writerows(curve)


def embeddings(reg: Regressor, img, orbit) -> np.ndarray:
    """Beam-encoder outputs (before the graph layers) for each angle in ``orbit``.

    Rows are grouped by angle: row ``a * |B| + i`` is beam ``i`` at ``orbit[a]``.
    """
    base = reg.prepare(img)
    rotated = np.stack([rotate(base, th).data for th in orbit])
    raw = reg.model.encode_beams(reg.beams(rotated)).data
    return raw.reshape(-1, raw.shape[-1])


def export_embeddings(reg: Regressor, img, orbit, path) -> np.ndarray:
    mat = embeddings(reg, img, orbit)
    rbt.write_tensor(path, mat)
    return mat
