"""Tokenization of image and pseudo-depth grids.

Both input grids are cut into non-overlapping patches (raster order over the
patch grid), each patch is mapped by a learnable linear embedding, and a
hybrid positional term is added: a learnable table plus a fixed sinusoidal
table, each weighted by its own learnable scalar gate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, EvaluationError, ShapeError
from .tensor import Tensor


@dataclass
class InputGrids:
    """One sample's raw inputs: image in [0,1], depth in meters."""

    image: np.ndarray  # H x W x C
    depth: np.ndarray  # H x W

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float64)
        self.depth = np.asarray(self.depth, dtype=np.float64)
        if self.image.ndim != 3 or self.depth.ndim != 2:
            raise ShapeError(
                f"grids must be HxWxC and HxW, got {self.image.shape} / {self.depth.shape}")
        if self.image.shape[:2] != self.depth.shape:
            raise ShapeError(
                f"image {self.image.shape[:2]} and depth {self.depth.shape} disagree")
        if not (np.isfinite(self.image).all() and np.isfinite(self.depth).all()):
            raise EvaluationError("input grids contain non-finite values")
        if (self.depth < 0).any():
            raise EvaluationError("depth values must be non-negative")


@dataclass
class PositionalEncoding:
    """Learnable table, fixed sinusoidal table, and their scalar gates."""

    learned: Tensor      # n x d, trainable
    sinusoidal: Tensor   # n x d, fixed
    gate_learned: Tensor
    gate_sinusoidal: Tensor


def sinusoidal_pe(n: int, d: int) -> np.ndarray:
    """Fixed sin/cos position table: pair 2i uses frequency 10000^(-2i/d)."""
    if d % 2 != 0:
        raise ConfigurationError(f"sinusoidal table width must be even, got {d}")
    pos = np.arange(n, dtype=np.float64)[:, None]
    freqs = np.power(10000.0, -np.arange(0, d, 2, dtype=np.float64) / d)
    angles = pos * freqs[None, :]
    table = np.empty((n, d))
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles)
    return table


def extract_patches(grid: np.ndarray, patch_size: int) -> np.ndarray:
    """Flatten non-overlapping patches, raster order over the patch grid."""
    if grid.ndim == 2:
        grid = grid[:, :, None]
    h, w, c = grid.shape
    p = patch_size
    if h % p or w % p:
        raise ConfigurationError(f"grid {h}x{w} not divisible by patch size {p}")
    rows = h // p
    cols = w // p
    patches = grid.reshape(rows, p, cols, p, c).transpose(0, 2, 1, 3, 4)
    return patches.reshape(rows * cols, p * p * c)


def patchify(grid: np.ndarray, patch_size: int, weight: Tensor, bias: Tensor) -> Tensor:
    """Embed each flattened patch with a shared linear map."""
    patches = extract_patches(np.asarray(grid, dtype=np.float64), patch_size)
    if patches.shape[1] != weight.shape[0]:
        raise ShapeError(
            f"patch width {patches.shape[1]} vs embedding rows {weight.shape[0]}")
    return T.linear(Tensor(patches), weight, bias)


def hybrid_pe(tokens: Tensor, enc: PositionalEncoding) -> Tensor:
    """tokens + gate_l * learned + gate_s * sinusoidal; gates get gradients."""
    if tokens.shape != enc.learned.shape or tokens.shape != enc.sinusoidal.shape:
        raise ShapeError(
            f"token shape {tokens.shape} vs positional tables "
            f"{enc.learned.shape} / {enc.sinusoidal.shape}")
    term = T.add(T.mul(enc.gate_learned, enc.learned),
                 T.mul(enc.gate_sinusoidal, enc.sinusoidal))
    return T.add(tokens, term)


@dataclass
class StreamEmbed:
    """Patch embedding weights and positional encoding for one stream."""

    weight: Tensor
    bias: Tensor
    encoding: PositionalEncoding


def embed_inputs(grids: InputGrids, patch_size: int,
                 image_embed: StreamEmbed, depth_embed: StreamEmbed,
                 mask_image=None, mask_depth=None) -> tuple[Tensor, Tensor]:
    """Tokenize both streams with their own weights and positional tables.

    Optional masking callables run on the patch tokens before the positional
    term is added, so masked slots keep their position identity.
    """
    image_tokens = patchify(grids.image, patch_size,
                            image_embed.weight, image_embed.bias)
    depth_tokens = patchify(grids.depth, patch_size,
                            depth_embed.weight, depth_embed.bias)
    if mask_image is not None:
        image_tokens = mask_image(image_tokens)
    if mask_depth is not None:
        depth_tokens = mask_depth(depth_tokens)
    image_tokens = hybrid_pe(image_tokens, image_embed.encoding)
    depth_tokens = hybrid_pe(depth_tokens, depth_embed.encoding)
    if image_tokens.shape != depth_tokens.shape:
        raise ShapeError(
            f"stream token shapes disagree: {image_tokens.shape} vs {depth_tokens.shape}")
    return image_tokens, depth_tokens
