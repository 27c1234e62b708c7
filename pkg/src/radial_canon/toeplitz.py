"""Beam-pair similarity, wrapped-diagonal extraction and the rotation prior.

With ``emb_b`` equal to ``emb_a`` circularly shifted by ``k`` beams, the
matching pairs sit on the wrapped diagonal ``j - i = k (mod n)`` of the
similarity matrix, so summing each wrapped diagonal scores each shift.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, as_tensor, softmax
from .errors import ShapeMismatch


@dataclass(frozen=True, eq=False)
class ToeplitzExtractor:
    masks: np.ndarray   # (n, n, n); masks[k, i, j] = 1 iff (j - i) % n == k
    angles: np.ndarray  # (n,) degrees for each diagonal index

    @property
    def n(self) -> int:
        return self.masks.shape[0]


def build_extractor(n: int) -> ToeplitzExtractor:
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    diag = (j - i) % n
    masks = (diag[None, :, :] == np.arange(n)[:, None, None]).astype(np.float64)
    angles = np.arange(n) * 360.0 / n
    masks.setflags(write=False)
    angles.setflags(write=False)
    return ToeplitzExtractor(masks, angles)


def angle_matrix(n: int) -> np.ndarray:
    """Full (n, n) reading: entry (i, j) is the rotation that carries beam i onto beam j."""
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    return ((j - i) % n) * 360.0 / n


def _is_tensor(*xs) -> bool:
    return any(isinstance(x, Tensor) for x in xs)


def similarity(emb_a, emb_b):
    """``1 / (1 + ||a_i - b_j||)`` over all beam pairs.

    Accepts (..., n, L) arrays or tensors; flatten per-beam features to L first.
    """
    tensor_mode = _is_tensor(emb_a, emb_b)
    a, b = as_tensor(emb_a), as_tensor(emb_b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"embedding shapes differ: {a.shape} vs {b.shape}")
    if a.ndim < 2 or a.shape[-1] < 1:
        raise ShapeMismatch("embeddings need shape (..., n, L) with L >= 1")
    diff = a.reshape(*a.shape[:-1], 1, a.shape[-1]) - b.reshape(*b.shape[:-2], 1, *b.shape[-2:])
    xi = 1.0 / (diff.norm(axis=-1) + 1.0)
    return xi if tensor_mode else xi.data


def toeplitz_logits(xi, extractor: ToeplitzExtractor):
    """logit_k = sum of the similarity matrix over wrapped diagonal k."""
    tensor_mode = _is_tensor(xi)
    x = as_tensor(xi)
    n = extractor.n
    if x.shape[-2:] != (n, n):
        raise ShapeMismatch(f"similarity matrix {x.shape[-2:]} vs extractor size {n}")
    flat = x.reshape(*x.shape[:-2], n * n)
    logits = flat @ extractor.masks.reshape(n, n * n).T.astype(x.dtype)
    return logits if tensor_mode else logits.data


def prior_distribution(logits):
    tensor_mode = _is_tensor(logits)
    p = softmax(as_tensor(logits), axis=-1)
    return p if tensor_mode else p.data


def rotation_prior(emb_ref, emb_rot, extractor: ToeplitzExtractor | None = None):
    """Probability over discrete shifts carrying ``emb_ref`` to ``emb_rot``."""
    n = emb_ref.shape[-2]
    extractor = extractor or build_extractor(n)
    return prior_distribution(toeplitz_logits(similarity(emb_ref, emb_rot), extractor))
