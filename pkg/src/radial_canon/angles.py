"""Angle arithmetic, the finite rotation subgroup and the angle losses.

Loss functions take radians.  They are written with plain operators plus
:func:`sin`/:func:`cos`/:func:`log` dispatchers so the same code runs on
numpy arrays and on autodiff tensors.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDistribution, DomainError, NotInSubgroup


def _dispatch(name):
    np_fn = getattr(np, name)

    def fn(x):
        method = getattr(x, name, None)
        if method is not None and not isinstance(x, np.ndarray):
            return method()
        return np_fn(x)

    fn.__name__ = name
    return fn


sin = _dispatch("sin")
cos = _dispatch("cos")
log = _dispatch("log")


@dataclass(frozen=True)
class Angle:
    """Angle in degrees, always normalized into [0, 360)."""

    degrees: float

    def __post_init__(self):
        object.__setattr__(self, "degrees", normalize(self.degrees))

    @property
    def radians(self) -> float:
        return math.radians(self.degrees)

    def __add__(self, other: "Angle") -> "Angle":
        return angle_add(self, other)

    def __neg__(self) -> "Angle":
        return Angle(-self.degrees)


@dataclass(frozen=True)
class UnitVec:
    re: float
    im: float

    @classmethod
    def from_degrees(cls, deg: float) -> "UnitVec":
        t = math.radians(deg)
        return cls(math.cos(t), math.sin(t))

    def normalized(self) -> "UnitVec":
        n = math.hypot(self.re, self.im)
        if n == 0.0:
            raise DomainError("cannot normalize the zero vector")
        return UnitVec(self.re / n, self.im / n)

    @property
    def degrees(self) -> float:
        return normalize(math.degrees(math.atan2(self.im, self.re)))


def normalize(deg):
    out = np.mod(deg, 360.0)
    # mod of tiny negatives can round up to exactly 360
    out = np.where(out >= 360.0, 0.0, out)
    return float(out) if np.ndim(out) == 0 else out


def angle_add(a, b) -> Angle:
    a = a.degrees if isinstance(a, Angle) else a
    b = b.degrees if isinstance(b, Angle) else b
    return Angle(a + b)


def angular_distance(a_deg, b_deg):
    """Shortest distance on the circle, in [0, 180]."""
    d = np.abs(np.mod(np.asarray(a_deg) - np.asarray(b_deg) + 180.0, 360.0) - 180.0)
    return float(d) if np.ndim(d) == 0 else d


class FiniteRotationGroup:
    """The cyclic subgroup of rotations by multiples of ``360 / n``."""

    def __init__(self, n: int):
        if n < 1:
            raise ValueError("group order must be >= 1")
        self.n = n

    @property
    def step(self) -> float:
        return 360.0 / self.n

    @property
    def elements(self) -> list[Angle]:
        return [self.k_to_theta(k) for k in range(self.n)]

    def k_to_theta(self, k: int) -> Angle:
        return Angle((k % self.n) * 360.0 / self.n)

    def theta_to_k(self, theta, tol: float = 1e-9) -> int:
        deg = theta.degrees if isinstance(theta, Angle) else normalize(theta)
        q = deg * self.n / 360.0
        k = round(q)
        if abs(q - k) > tol:
            raise NotInSubgroup(f"{deg} deg is not a multiple of {self.step} deg")
        return int(k) % self.n

    def __contains__(self, theta) -> bool:
        try:
            self.theta_to_k(theta)
        except NotInSubgroup:
            return False
        return True


def k_to_theta(k: int, n: int) -> Angle:
    return FiniteRotationGroup(n).k_to_theta(k)


def theta_to_k(theta, n: int) -> int:
    return FiniteRotationGroup(n).theta_to_k(theta)


def circle_loss(theta, re, im):
    """Squared error between (cos theta, sin theta) and the prediction (re, im)."""
    return (sin(theta) - im) ** 2 + (cos(theta) - re) ** 2


def circle_loss_grad(theta, re, im):
    """Analytic partials (d/dtheta, d/dre, d/dim) of :func:`circle_loss`.

    d/dre and d/dim carry the minus sign of the chain rule; the magnitudes
    are ``2 (cos theta - re)`` and ``2 (sin theta - im)``.
    """
    d_theta = 2.0 * (re * np.sin(theta) - im * np.cos(theta))
    d_re = -2.0 * (np.cos(theta) - re)
    d_im = -2.0 * (np.sin(theta) - im)
    return d_theta, d_re, d_im


def loss_to_degrees(loss):
    """Angular error whose unit-vector prediction produces this circle loss."""
    arr = np.asarray(loss, dtype=np.float64)
    if np.any(arr < 0.0) or np.any(arr > 4.0) or not np.all(np.isfinite(arr)):
        raise DomainError("circle loss must lie in [0, 4]")
    out = np.degrees(np.arccos(np.clip(1.0 - arr / 2.0, -1.0, 1.0)))
    return float(out) if out.ndim == 0 else out


def prior_loss(p_true, p, check: bool = True):
    """Cross-entropy ``-sum(p_true * log p)``, averaged over leading batch axes.

    ``p_true`` is one-hot (numpy); ``p`` may be a numpy array or a tensor.
    """
    p_true = np.asarray(p_true, dtype=np.float64)
    if check:
        pv = np.asarray(getattr(p, "data", p))
        if np.any(pv[p_true > 0] <= 0.0):
            raise DegenerateDistribution("zero probability at the true rotation")
    if isinstance(p, np.ndarray) or np.isscalar(p) or isinstance(p, (list, tuple)):
        # 0 * log 0 counts as 0 off the hot index
        p = np.where(p_true > 0, np.asarray(p, dtype=np.float64), 1.0)
    per = -(log(p) * p_true).sum(axis=-1)
    if per.ndim == 0:
        return per
    return per.mean()


def one_hot(k, n: int) -> np.ndarray:
    k = np.asarray(k)
    out = np.zeros(k.shape + (n,))
    np.put_along_axis(out, k[..., None], 1.0, axis=-1)
    return out


LOSS_MODES = ("circle_only", "sum", "dynamic")


def combine_losses(l_circle, l_prior, mode: str, epoch: int = 1):
    if mode == "circle_only":
        return l_circle
    if mode == "sum":
        return l_circle + l_prior
    if mode == "dynamic":
        if epoch < 1:
            raise ValueError("epochs count from 1")
        w = 1.0 / epoch
        return l_circle * (1.0 - w) + l_prior * w
    raise ValueError(f"unknown loss mode {mode!r}")


def total_loss(theta, re, im, p_true=None, p=None, mode: str = "circle_only", epoch: int = 1):
    l_circle = circle_loss(theta, re, im)
    if getattr(l_circle, "ndim", 0):
        l_circle = l_circle.mean()
    if mode == "circle_only":
        return l_circle
    return combine_losses(l_circle, prior_loss(p_true, p), mode, epoch)
