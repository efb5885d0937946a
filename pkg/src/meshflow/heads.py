"""Output heads on the encoder tokens.

The mesh head pools the tokens and regresses per-vertex mean/scale plus
weak-perspective camera parameters. A learnable linear map upsamples the
coarse mesh to full resolution. The silhouette decoder upsamples the token
grid back to the input resolution through two transposed convolutions.
Masked modeling swaps a random token subset for a learnable mask token
during training.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, DomainError, ShapeError
from .tensor import Tensor

SIGMA_MIN = 1e-6
SIGMA_MAX = 1e3


@dataclass
class MeshPrediction:
    """Per-vertex mean and scale plus camera (s, t_x, t_y)."""

    mu: Tensor      # V x 3
    sigma: Tensor   # V x 3
    camera: Tensor  # (3,)

    def __post_init__(self):
        if self.mu.shape != self.sigma.shape or self.camera.shape != (3,):
            raise ShapeError(
                f"prediction shapes mu {self.mu.shape} sigma {self.sigma.shape} "
                f"camera {self.camera.shape}")
        if self.sigma.data.min() < SIGMA_MIN or self.sigma.data.max() > SIGMA_MAX:
            raise DomainError("sigma outside its clamp range")
        if self.camera.data[0] <= 0:
            raise DomainError(f"camera scale must be positive, got {self.camera.data[0]}")


@dataclass
class MeshHeadParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    v_coarse: int
    mesh_scale: float = 1.0


def regress_mesh(tokens: Tensor, params: MeshHeadParams) -> MeshPrediction:
    """Mean-pool the tokens, then a 2-layer MLP emits mu, log-sigma, camera.

    sigma is exp of its raw slice clamped (in log space) to the invariant
    range; camera scale is exp of its raw slot. The mean and log-sigma MLP
    outputs are pre-scaled by ``mesh_scale`` so desk-scale learning rates
    move the raw slices at a useful velocity.
    """
    v = params.v_coarse
    pooled = T.tmean(tokens, axis=0, keepdims=True)
    hidden = T.gelu(T.linear(pooled, params.w1, params.b1))
    out = T.reshape(T.linear(hidden, params.w2, params.b2), (6 * v + 3,))
    raw_mu = T.mul(out[0:3 * v], params.mesh_scale)
    raw_log_sigma = T.mul(out[3 * v:6 * v], params.mesh_scale)
    mu = T.reshape(raw_mu, (v, 3))
    sigma = T.reshape(
        T.exp(T.clamp(raw_log_sigma, math.log(SIGMA_MIN), math.log(SIGMA_MAX))),
        (v, 3))
    camera = T.concat([T.exp(out[6 * v:6 * v + 1]), out[6 * v + 1:6 * v + 3]], axis=0)
    return MeshPrediction(mu=mu, sigma=sigma, camera=camera)


@dataclass
class UpsampleMap:
    """Learnable coarse-to-full vertex map."""

    matrix: Tensor  # V_full x V_coarse
    bias: Tensor    # V_full x 3


def upsample_mesh(coarse: Tensor, up: UpsampleMap) -> Tensor:
    if coarse.ndim != 2 or coarse.shape != (up.matrix.shape[1], 3):
        raise ShapeError(
            f"coarse mesh {coarse.shape} vs upsample map {up.matrix.shape}")
    return T.add(T.matmul(up.matrix, coarse), up.bias)


@dataclass
class SilhouetteDecoderParams:
    conv1_w: Tensor  # d x c1 x 4 x 4
    conv1_b: Tensor
    conv2_w: Tensor  # c1 x c2 x 4 x 4
    conv2_b: Tensor
    out_w: Tensor    # c2 x 1
    out_b: Tensor
    grid_rows: int
    grid_cols: int
    dropout: float = 0.1


def _dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return T.mul(x, keep)


def decode_silhouette(tokens: Tensor, params: SilhouetteDecoderParams,
                      train_mode: bool = False,
                      rng: np.random.Generator | None = None) -> Tensor:
    """Token grid -> two stride-2 transposed convolutions -> per-pixel dense
    layer -> logistic squashing. Dropout is active only in training mode."""
    rows, cols = params.grid_rows, params.grid_cols
    n, d = tokens.shape
    if n != rows * cols or d != params.conv1_w.shape[0]:
        raise ConfigurationError(
            f"decoder configured for {rows}x{cols} tokens of width "
            f"{params.conv1_w.shape[0]}, got {tokens.shape}")
    if train_mode and rng is None:
        raise ConfigurationError("training-mode decoding needs a random stream")
    fmap = T.permute(T.reshape(tokens, (rows, cols, d)), (2, 0, 1))
    h = T.relu(T.add(T.conv_transpose2d(fmap, params.conv1_w, stride=2, padding=1),
                     T.reshape(params.conv1_b, (-1, 1, 1))))
    if train_mode and params.dropout > 0:
        h = _dropout(h, params.dropout, rng)
    h = T.relu(T.add(T.conv_transpose2d(h, params.conv2_w, stride=2, padding=1),
                     T.reshape(params.conv2_b, (-1, 1, 1))))
    if train_mode and params.dropout > 0:
        h = _dropout(h, params.dropout, rng)
    height, width = 4 * rows, 4 * cols
    flat = T.reshape(T.permute(h, (1, 2, 0)), (height * width, h.shape[0]))
    logits = T.linear(flat, params.out_w, params.out_b)
    return T.reshape(T.sigmoid(logits), (height, width))


@dataclass
class MaskingPolicy:
    """Masking ratio, the learnable replacement token, and the draw seed."""

    ratio: float
    token: Tensor  # (d,)
    seed: int

    def __post_init__(self):
        if not 0.0 <= self.ratio <= 1.0:
            raise DomainError(f"mask ratio must lie in [0, 1], got {self.ratio}")


def mask_tokens(tokens: Tensor, policy: MaskingPolicy) -> tuple[Tensor, np.ndarray]:
    """Replace ceil(ratio * n) uniformly drawn rows with the mask token.

    Returns the masked sequence and the sorted masked index set; the draw is
    deterministic given the policy seed.
    """
    n, d = tokens.shape
    if policy.token.shape != (d,):
        raise ShapeError(f"mask token shape {policy.token.shape} vs width {d}")
    count = math.ceil(policy.ratio * n)
    if count == 0:
        return tokens, np.empty(0, dtype=np.intp)
    rng = np.random.default_rng(policy.seed)
    idx = np.sort(rng.choice(n, size=count, replace=False))
    keep = np.ones((n, 1))
    keep[idx] = 0.0
    fill = np.zeros((n, 1))
    fill[idx] = 1.0
    masked = T.add(T.mul(tokens, keep),
                   T.matmul(Tensor(fill), T.reshape(policy.token, (1, d))))
    return masked, idx
