"""Affine coupling flow over standardized mesh residuals.

Forward coupling maps base-normal samples toward the residual space; the
exact log-density of a point chains the inverse couplings and accumulates
their log-determinants. The residual log-likelihood loss scores the
standardized ground-truth residual under the base density and the
flow-learned residual density, plus the log of the predicted scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import DomainError, ShapeError
from .tensor import Tensor

LOG_TWO_PI = math.log(2.0 * math.pi)


@dataclass
class CouplingNet:
    """Two hidden tanh layers mapping conditioning coords to parameters."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    w3: Tensor
    b3: Tensor

    def __call__(self, x: Tensor) -> Tensor:
        h = T.tanh(T.linear(x, self.w1, self.b1))
        h = T.tanh(T.linear(h, self.w2, self.b2))
        return T.linear(h, self.w3, self.b3)

    def parameters(self) -> list[Tensor]:
        return [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]


@dataclass
class CouplingLayer:
    """One affine coupling step.

    ``mask`` marks the coordinates that are copied through and condition the
    scale/translation of the remaining ones. The scale output is bounded by
    ``scale_bound * tanh`` to keep log-determinants tame.
    """

    mask: np.ndarray
    scale_net: CouplingNet
    translate_net: CouplingNet
    scale_bound: float = 4.0

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=np.float64)
        on = int(self.mask.sum())
        if self.mask.ndim != 1 or on == 0 or on == self.mask.size:
            raise ShapeError(
                f"coupling mask must mix zeros and ones, got {self.mask.tolist()}")
        self.kept = np.flatnonzero(self.mask == 1.0)
        self.moved = np.flatnonzero(self.mask == 0.0)

    def parameters(self) -> list[Tensor]:
        return self.scale_net.parameters() + self.translate_net.parameters()

    def _scale_shift(self, conditioning: Tensor) -> tuple[Tensor, Tensor]:
        s = T.mul(T.tanh(self.scale_net(conditioning)), self.scale_bound)
        t = self.translate_net(conditioning)
        return s, t


def _as_rows(x) -> tuple[Tensor, bool]:
    x = T.as_tensor(x)
    if x.ndim == 1:
        return T.reshape(x, (1, x.shape[0])), True
    if x.ndim == 2:
        return x, False
    raise ShapeError(f"flow input must be a vector or matrix, got shape {x.shape}")


def coupling_forward(x, layer: CouplingLayer) -> tuple[Tensor, Tensor]:
    """y = x on kept coords; x * exp(s) + t on the rest. Returns (y, logdet)."""
    rows, squeeze = _as_rows(x)
    if rows.shape[1] != layer.mask.size:
        raise ShapeError(f"input width {rows.shape[1]} vs mask size {layer.mask.size}")
    kept = T.take_columns(rows, layer.kept)
    moved = T.take_columns(rows, layer.moved)
    s, t = layer._scale_shift(kept)
    moved_out = T.add(T.mul(moved, T.exp(s)), t)
    y = T.add(T.scatter_columns(kept, layer.kept, rows.shape[1]),
              T.scatter_columns(moved_out, layer.moved, rows.shape[1]))
    logdet = T.tsum(s, axis=1)
    if squeeze:
        return T.reshape(y, (rows.shape[1],)), logdet[0]
    return y, logdet


def coupling_inverse(y, layer: CouplingLayer) -> Tensor:
    """Exact algebraic inverse of coupling_forward."""
    x, _ = _inverse_with_logdet(y, layer)
    return x


def _inverse_with_logdet(y, layer: CouplingLayer) -> tuple[Tensor, Tensor]:
    rows, squeeze = _as_rows(y)
    if rows.shape[1] != layer.mask.size:
        raise ShapeError(f"input width {rows.shape[1]} vs mask size {layer.mask.size}")
    kept = T.take_columns(rows, layer.kept)
    moved = T.take_columns(rows, layer.moved)
    s, t = layer._scale_shift(kept)
    moved_in = T.mul(T.sub(moved, t), T.exp(T.neg(s)))
    x = T.add(T.scatter_columns(kept, layer.kept, rows.shape[1]),
              T.scatter_columns(moved_in, layer.moved, rows.shape[1]))
    logdet = T.neg(T.tsum(s, axis=1))
    if squeeze:
        return T.reshape(x, (rows.shape[1],)), logdet[0]
    return x, logdet


@dataclass
class FlowModel:
    """Ordered coupling layers over a standard-normal base density."""

    dim: int
    layers: list[CouplingLayer] = field(default_factory=list)

    def __post_init__(self):
        for i, layer in enumerate(self.layers):
            if layer.mask.size != self.dim:
                raise ShapeError(
                    f"layer {i} mask size {layer.mask.size} vs flow dim {self.dim}")
            if i and np.any(layer.mask + self.layers[i - 1].mask != 1.0):
                raise ShapeError(f"layers {i - 1} and {i} masks are not complementary")

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]


def standard_normal_logpdf(z: Tensor) -> Tensor:
    """Row-wise log N(z; 0, I)."""
    rows, squeeze = _as_rows(z)
    d = rows.shape[1]
    quad = T.tsum(T.mul(rows, rows), axis=1)
    out = T.mul(T.add(quad, d * LOG_TWO_PI), -0.5)
    return out[0] if squeeze else out


def flow_forward(x, flow: FlowModel) -> tuple[Tensor, Tensor]:
    """Push base points through every coupling layer; returns (y, logdet)."""
    y, squeeze = _as_rows(x)
    total = Tensor(np.zeros(y.shape[0]))
    for layer in flow.layers:
        y, logdet = coupling_forward(y, layer)
        total = T.add(total, logdet)
    if squeeze:
        return T.reshape(y, (flow.dim,)), total[0]
    return y, total


def flow_invert(y, flow: FlowModel) -> Tensor:
    """Undo flow_forward by chaining the coupling inverses in reverse order."""
    x, _ = _as_rows(y)
    squeeze = T.as_tensor(y).ndim == 1
    for layer in reversed(flow.layers):
        x = coupling_inverse(x, layer)
    return T.reshape(x, (flow.dim,)) if squeeze else x


def flow_log_density(x, flow: FlowModel) -> Tensor:
    """log of the flow-modeled density at x, via chained inverse couplings."""
    z, squeeze = _as_rows(x)
    total = Tensor(np.zeros(z.shape[0]))
    for layer in reversed(flow.layers):
        z, logdet = _inverse_with_logdet(z, layer)
        total = T.add(total, logdet)
    out = T.add(standard_normal_logpdf(z), total)
    return out[0] if squeeze else out


@dataclass
class ResidualStandardization:
    """Per-vertex predicted mean and positive scale."""

    mu: Tensor     # V x 3
    sigma: Tensor  # V x 3

    def __post_init__(self):
        if self.mu.shape != self.sigma.shape:
            raise ShapeError(
                f"mu shape {self.mu.shape} vs sigma shape {self.sigma.shape}")
        lo, hi = self.sigma.data.min(), self.sigma.data.max()
        if lo < 1e-6 or hi > 1e3:
            raise DomainError(f"sigma range [{lo}, {hi}] outside [1e-6, 1e3]")


def rle_loss(std: ResidualStandardization, mu_g, flow: FlowModel) -> Tensor:
    """Residual log-likelihood loss of the standardized ground-truth residual.

    -log Q(r) - log G(r) + sum(log sigma) with r = (mu_g - mu) / sigma
    flattened to the flow dimension; the additive normalization constant of
    the three-term density split has zero gradient and is dropped.
    """
    mu_g = T.as_tensor(mu_g)
    if mu_g.shape != std.mu.shape:
        raise ShapeError(f"mu_g shape {mu_g.shape} vs mu shape {std.mu.shape}")
    if std.mu.size != flow.dim:
        raise ShapeError(f"residual size {std.mu.size} vs flow dim {flow.dim}")
    residual = T.div(T.sub(mu_g, std.mu), std.sigma)
    flat = T.reshape(residual, (1, flow.dim))
    base = standard_normal_logpdf(flat)[0]
    learned = flow_log_density(flat, flow)[0]
    return T.add(T.sub(T.neg(base), learned), T.tsum(T.log(std.sigma)))


def flow_sample(flow: FlowModel, std: ResidualStandardization,
                count: int, seed: int) -> np.ndarray:
    """Draw base normals, push through the flow, then rescale and shift."""
    if count < 1:
        raise DomainError(f"sample count must be >= 1, got {count}")
    rng = np.random.default_rng(seed)
    base = Tensor(rng.standard_normal((count, flow.dim)))
    pushed, _ = flow_forward(base, flow)
    mu = std.mu.data.reshape(1, -1)
    sigma = std.sigma.data.reshape(1, -1)
    return pushed.data * sigma + mu


def decompose_log_density(p: float, q: float, c: float) -> tuple[float, float, float]:
    """Three-term split of log p: (log q, log(p / (c q)), log c)."""
    if min(p, q, c) <= 0:
        raise DomainError("decomposition needs strictly positive densities")
    return math.log(q), math.log(p / (c * q)), math.log(c)


def build_flow(dim: int, n_layers: int, hidden: int, rng: np.random.Generator,
               scale_bound: float = 4.0, init_std: float = 0.0) -> FlowModel:
    """Stack couplings with alternating half masks.

    ``init_std = 0`` zero-initializes the net output layers, which makes the
    whole flow the identity map at start.
    """
    if dim < 2 and n_layers > 0:
        raise ShapeError(f"coupling layers need dim >= 2, got {dim}")
    half = dim // 2
    layers = []
    for i in range(n_layers):
        mask = np.zeros(dim)
        if i % 2 == 0:
            mask[:half] = 1.0
        else:
            mask[half:] = 1.0
        kept = int(mask.sum())
        moved = dim - kept

        def make_net() -> CouplingNet:
            out_w = (np.zeros((hidden, moved)) if init_std == 0.0
                     else rng.normal(0.0, init_std, (hidden, moved)))
            out_b = (np.zeros(moved) if init_std == 0.0
                     else rng.normal(0.0, init_std, moved))
            return CouplingNet(
                w1=Tensor(rng.normal(0.0, 1.0 / math.sqrt(kept), (kept, hidden)),
                          requires_grad=True),
                b1=Tensor(np.zeros(hidden), requires_grad=True),
                w2=Tensor(rng.normal(0.0, 1.0 / math.sqrt(hidden), (hidden, hidden)),
                          requires_grad=True),
                b2=Tensor(np.zeros(hidden), requires_grad=True),
                w3=Tensor(out_w, requires_grad=True),
                b3=Tensor(out_b, requires_grad=True),
            )

        layers.append(CouplingLayer(mask=mask, scale_net=make_net(),
                                    translate_net=make_net(),
                                    scale_bound=scale_bound))
    return FlowModel(dim=dim, layers=layers)
