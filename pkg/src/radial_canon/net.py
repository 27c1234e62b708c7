"""The beam canonicalization network.

Pipeline per image: a shared beam encoder (proximity 2D conv, then a stack
of strided 1D convs) embeds every beam into ``L`` features; a directed
wheel-graph context encoder mixes neighbouring beams; a stacked LSTM reads
the beams in index order; three linear layers and a normalization give a
unit vector whose argument is the predicted rotation.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from . import rbt
from .autodiff import Tensor, as_tensor, concat, conv1d, conv2d, parameter
from .errors import NonFiniteActivation, ShapeMismatch
from .toeplitz import build_extractor, prior_distribution, similarity, toeplitz_logits

LEAKY_SLOPE = 0.3


def leaky_relu(x, slope: float = LEAKY_SLOPE):
    if isinstance(x, Tensor):
        return x.leaky_relu(slope)
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0, x, slope * x)


# (kernel, stride, feature-map fraction of L) per layer, keyed by beam length
_SPATIAL_TABLES = {
    14: [(4, 1, 4), (4, 1, 2), (4, 1, 2), (3, 1, 1)],
    16: [(4, 1, 4), (4, 1, 2), (4, 1, 2), (4, 1, 1), (2, 1, 1)],
    64: [(5, 2, 4), (4, 2, 4), (4, 1, 2), (4, 1, 2), (4, 1, 2), (3, 1, 1), (2, 1, 1)],
    125: [(4, 2, 4), (3, 2, 4), (4, 2, 4), (4, 1, 2), (4, 1, 2), (4, 1, 2), (3, 1, 1), (2, 1, 1)],
}


def spatial_plan(length: int, latent: int) -> list[tuple[int, int, int]]:
    """1D conv layers (kernel, stride, out_channels) reducing ``length - 2`` to 1."""
    if length in _SPATIAL_TABLES:
        return [(k, s, max(1, latent // frac)) for k, s, frac in _SPATIAL_TABLES[length]]
    n = length - 2
    layers = []
    while n > 16:
        layers.append((4, 2, 4))
        n = (n - 4) // 2 + 1
    while n > 4:
        layers.append((4, 1, 2))
        n -= 3
    if n > 1 or not layers:
        layers.append((n, 1, 1))
    if len(layers) >= 2:
        k, s, _ = layers[-2]
        layers[-2] = (k, s, 1)
    return [(k, s, max(1, latent // frac)) for k, s, frac in layers]


def _conv_out(n: int, k: int, s: int) -> int:
    return (n - k) // s + 1


@dataclass(frozen=True)
class ModelConfig:
    num_beams: int = 32
    length: int = 64
    thickness: int = 1
    channels: int = 3
    latent: int = 128
    edge_factor: float = 0.5
    gnn_layers: int = 3
    lstm_layers: int = 3
    prior_source: str = "context"  # or "raw": beam-encoder output before the graph
    dtype: str = "float64"

    def __post_init__(self):
        if self.length < 3:
            raise ValueError("beam length must be >= 3 for the 3-wide proximity kernel")
        if not 0.0 < self.edge_factor <= 1.0:
            raise ValueError("edge_factor must lie in (0, 1]")
        if self.prior_source not in ("context", "raw"):
            raise ValueError("prior_source must be 'context' or 'raw'")
        n = self.length - 2
        for k, s, _ in spatial_plan(self.length, self.latent):
            n = _conv_out(n, k, s)
        if n != 1:
            raise ValueError(f"spatial encoder for length {self.length} ends at {n}, not 1")


def wheel_adjacency(n_beams: int) -> np.ndarray:
    """Directed wheel graph: beam i -> beam i+1 and beam i -> center (index n)."""
    a = np.zeros((n_beams + 1, n_beams + 1))
    for i in range(n_beams):
        a[i, (i + 1) % n_beams] = 1.0
        a[i, n_beams] = 1.0
    return a


class ForwardResult(NamedTuple):
    z: Tensor            # (N, 2) unit vectors (re, im)
    p: Tensor | None     # (N, n_beams) rotation prior, only with a reference
    embeddings: Tensor   # (N, n_beams, L) context embeddings fed to the decoder
    raw: Tensor          # (N, n_beams, L) beam-encoder output


class BicModel:
    def __init__(self, config: ModelConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params
        # messages travel along edges: node v averages its in-neighbours, so
        # the center (in-degree n) stays on the same scale as the beams
        adj = wheel_adjacency(config.num_beams)
        incoming = adj.T / np.maximum(adj.sum(axis=0), 1.0)[:, None]
        self.propagation = (np.eye(config.num_beams + 1) + config.edge_factor * incoming).astype(config.dtype)
        self.extractor = build_extractor(config.num_beams)

    # ---- parameters ---------------------------------------------------
    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        if set(state) != set(self.params):
            raise ShapeMismatch("checkpoint parameter names do not match the model")
        for k, v in state.items():
            if v.shape != self.params[k].shape:
                raise ShapeMismatch(f"{k}: {v.shape} vs {self.params[k].shape}")
            self.params[k] = parameter(np.asarray(v, dtype=self.config.dtype))

    def save(self, path, extra: dict | None = None):
        meta = {"model": asdict(self.config)}
        meta.update(extra or {})
        rbt.write_checkpoint(path, self.state_dict(), meta)

    @classmethod
    def load(cls, path) -> tuple["BicModel", dict]:
        state, meta = rbt.read_checkpoint(path)
        model = init(ModelConfig(**meta["model"]), seed=0)
        model.load_state_dict(state)
        return model, meta

    # ---- forward ------------------------------------------------------
    def encode_beams(self, beams) -> Tensor:
        """(N, n_beams, 2e+1, D, C) -> (N, n_beams, L) shared beam encoding."""
        cfg = self.config
        x = as_tensor(beams)
        if x.dtype != np.dtype(cfg.dtype):
            x = Tensor(x.data.astype(cfg.dtype)) if not x.requires_grad else x
        expect = (cfg.num_beams, 2 * cfg.thickness + 1, cfg.length, cfg.channels)
        if x.ndim != 5 or tuple(x.shape[1:]) != expect:
            raise ShapeMismatch(f"beams shape {x.shape} vs expected (N, {expect})")
        n = x.shape[0]
        p = self.params
        h = x.reshape(n * cfg.num_beams, *expect[1:]).transpose(0, 3, 1, 2)
        h = leaky_relu(conv2d(h, p["prox.w"], p["prox.b"]))
        h = h.reshape(h.shape[0], h.shape[1], h.shape[3])
        for i, (_, stride, _) in enumerate(spatial_plan(cfg.length, cfg.latent)):
            h = leaky_relu(conv1d(h, p[f"spatial{i}.w"], p[f"spatial{i}.b"], stride=stride))
        return h.reshape(n, cfg.num_beams, cfg.latent)

    def context_layers(self, raw: Tensor) -> Tensor:
        """Graph layers over beams plus center; returns (N, n_beams + 1, L)."""
        center = raw.mean(axis=1, keepdims=True)
        h = concat([raw, center], axis=1)
        for i in range(self.config.gnn_layers):
            h = leaky_relu(self.propagation @ h @ self.params[f"gnn{i}.w"])
        return h

    def context(self, raw: Tensor) -> Tensor:
        b = self.config.num_beams
        h = self.context_layers(raw)
        # the global context joins the beams only after the graph layers
        return h[:, :b] + h[:, b:b + 1]

    def decode(self, emb: Tensor) -> Tensor:
        cfg = self.config
        p = self.params
        n = emb.shape[0]
        zeros = np.zeros((n, cfg.latent), dtype=cfg.dtype)
        hs = [Tensor(zeros) for _ in range(cfg.lstm_layers)]
        cs = [Tensor(zeros) for _ in range(cfg.lstm_layers)]
        L = cfg.latent
        for t in range(cfg.num_beams):
            inp = emb[:, t]
            for layer in range(cfg.lstm_layers):
                gates = inp @ p[f"lstm{layer}.wx"] + hs[layer] @ p[f"lstm{layer}.wh"] + p[f"lstm{layer}.b"]
                i_g = gates[:, 0:L].sigmoid()
                f_g = gates[:, L:2 * L].sigmoid()
                g_g = gates[:, 2 * L:3 * L].tanh()
                o_g = gates[:, 3 * L:4 * L].sigmoid()
                cs[layer] = f_g * cs[layer] + i_g * g_g
                hs[layer] = o_g * cs[layer].tanh()
                inp = hs[layer]
        return hs[-1]

    def head(self, h: Tensor) -> Tensor:
        p = self.params
        h = leaky_relu(h @ p["head0.w"] + p["head0.b"])
        h = leaky_relu(h @ p["head1.w"] + p["head1.b"])
        z = h @ p["head2.w"] + p["head2.b"]
        return z / (z.norm(axis=-1, keepdims=True) + 1e-12)

    def forward(self, beams, reference=None) -> ForwardResult:
        raw = self.encode_beams(beams)
        emb = self.context(raw)
        z = self.head(self.decode(emb))
        if not np.all(np.isfinite(z.data)):
            raise NonFiniteActivation("non-finite values in the predicted unit vector")
        p = None
        if reference is not None:
            ref_raw = self.encode_beams(reference)
            if self.config.prior_source == "raw":
                a, b = ref_raw, raw
            else:
                a, b = self.context(ref_raw), emb
            p = prior_distribution(toeplitz_logits(similarity(a, b), self.extractor))
        return ForwardResult(z, p, emb, raw)

    __call__ = forward

    def predict_degrees(self, beams) -> np.ndarray:
        z = self.forward(beams).z.data
        return np.mod(np.degrees(np.arctan2(z[:, 1], z[:, 0])), 360.0)


def init(config: ModelConfig, seed: int = 0) -> BicModel:
    """He-normal weights (std sqrt(2 / fan_in)), zero biases; deterministic per seed."""
    rng = np.random.default_rng(seed)
    dt = config.dtype
    params: dict[str, Tensor] = {}

    def weight(name, shape, fan_in):
        params[name] = parameter(rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape).astype(dt))

    def bias(name, size):
        params[name] = parameter(np.zeros(size, dtype=dt))

    L = config.latent
    width = 2 * config.thickness + 1
    prox = max(1, L // 8)
    weight("prox.w", (prox, config.channels, width, 3), config.channels * width * 3)
    bias("prox.b", prox)
    cin = prox
    for i, (k, _, cout) in enumerate(spatial_plan(config.length, L)):
        weight(f"spatial{i}.w", (cout, cin, k), cin * k)
        bias(f"spatial{i}.b", cout)
        cin = cout
    for i in range(config.gnn_layers):
        weight(f"gnn{i}.w", (L, L), L)
    for i in range(config.lstm_layers):
        weight(f"lstm{i}.wx", (L, 4 * L), L)
        weight(f"lstm{i}.wh", (L, 4 * L), L)
        bias(f"lstm{i}.b", 4 * L)
    sizes = [L, max(2, L // 2), max(2, L // 4), 2]
    for i in range(3):
        weight(f"head{i}.w", (sizes[i], sizes[i + 1]), sizes[i])
        bias(f"head{i}.b", sizes[i + 1])
    return BicModel(config, params)
