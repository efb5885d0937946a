"""Dual-stream transformer encoder.

Each stream runs multi-head self-attention; cross-attention mixes the two
(queries from one stream, keys/values from the other); three learnable gates
form a convex combination of the three streams; layer norm and a two-layer
MLP produce the output tokens.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import EvaluationError, ShapeError
from .tensor import Tensor


@dataclass
class AttentionParams:
    """Projection matrices (d x d each) and the head count."""

    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    heads: int

    def __post_init__(self):
        d = self.w_q.shape[0]
        for name in ("w_q", "w_k", "w_v", "w_o"):
            m = getattr(self, name)
            if m.shape != (d, d):
                raise ShapeError(f"{name} shape {m.shape}, expected ({d}, {d})")
            if not np.isfinite(m.data).all():
                raise EvaluationError(f"{name} holds non-finite values")
        if d % self.heads != 0:
            raise ShapeError(f"width {d} not divisible by {self.heads} heads")


@dataclass
class FusionGates:
    """Three logits; the emitted weights are positive and sum to one."""

    logits: Tensor

    def __post_init__(self):
        if self.logits.shape != (3,):
            raise ShapeError(f"fusion gates need 3 logits, got shape {self.logits.shape}")

    def weights(self) -> tuple[Tensor, Tensor, Tensor]:
        """(a, b, 1-a-b) with a, b from an exp-normalized positive map."""
        shift = float(self.logits.data.max())
        e = T.exp(T.sub(self.logits, shift))
        total = T.tsum(e)
        a = T.div(e[0], total)
        b = T.div(e[1], total)
        c = T.sub(1.0, T.add(a, b))
        return a, b, c


def _attend(queries: Tensor, keys_values: Tensor, params: AttentionParams) -> Tensor:
    d = queries.shape[1]
    if keys_values.shape[1] != d or params.w_q.shape[0] != d:
        raise ShapeError(
            f"attention widths disagree: {queries.shape} / {keys_values.shape} "
            f"vs params {params.w_q.shape}")
    q = T.matmul(queries, params.w_q)
    k = T.matmul(keys_values, params.w_k)
    v = T.matmul(keys_values, params.w_v)
    dh = d // params.heads
    scale = 1.0 / math.sqrt(dh)
    head_outs = []
    for i in range(params.heads):
        cols = slice(i * dh, (i + 1) * dh)
        qh = q[:, cols]
        kh = k[:, cols]
        vh = v[:, cols]
        scores = T.mul(T.matmul(qh, T.transpose(kh)), scale)
        weights = T.softmax(scores, axis=-1)
        head_outs.append(T.matmul(weights, vh))
    merged = head_outs[0] if len(head_outs) == 1 else T.concat(head_outs, axis=1)
    return T.add(T.matmul(merged, params.w_o), queries)


def self_attention(tokens: Tensor, params: AttentionParams) -> Tensor:
    """Scaled dot-product self-attention with a residual connection."""
    return _attend(tokens, tokens, params)


def cross_attention(queries: Tensor, keys_values: Tensor,
                    params: AttentionParams) -> Tensor:
    """Attention with keys/values from the second stream; residual on queries."""
    return _attend(queries, keys_values, params)


def attention_matrix(queries: np.ndarray, keys: np.ndarray,
                     params: AttentionParams, head: int) -> np.ndarray:
    """Row-stochastic attention weights of one head (inspection helper)."""
    d = queries.shape[1]
    dh = d // params.heads
    cols = slice(head * dh, (head + 1) * dh)
    q = (queries @ params.w_q.data)[:, cols]
    k = (keys @ params.w_k.data)[:, cols]
    scores = q @ k.T / math.sqrt(dh)
    shifted = np.exp(scores - scores.max(axis=-1, keepdims=True))
    return shifted / shifted.sum(axis=-1, keepdims=True)


def gated_fusion(image_stream: Tensor, depth_stream: Tensor, cross_stream: Tensor,
                 gates: FusionGates) -> Tensor:
    """Convex combination of the three streams under the learnable gates."""
    if not (image_stream.shape == depth_stream.shape == cross_stream.shape):
        raise ShapeError(
            f"fusion streams disagree: {image_stream.shape} / "
            f"{depth_stream.shape} / {cross_stream.shape}")
    a, b, c = gates.weights()
    return T.add(T.add(T.mul(a, image_stream), T.mul(b, depth_stream)),
                 T.mul(c, cross_stream))


@dataclass
class EncoderParams:
    self_image: AttentionParams
    self_depth: AttentionParams
    cross: AttentionParams
    gates: FusionGates
    ln_gamma: Tensor
    ln_beta: Tensor
    mlp_w1: Tensor
    mlp_b1: Tensor
    mlp_w2: Tensor
    mlp_b2: Tensor
    cross_queries: str = "image"  # which stream supplies the queries


def _norm_mlp(tokens: Tensor, params: EncoderParams) -> Tensor:
    normed = T.layer_norm(tokens, params.ln_gamma, params.ln_beta)
    hidden = T.gelu(T.linear(normed, params.mlp_w1, params.mlp_b1))
    return T.linear(hidden, params.mlp_w2, params.mlp_b2)


def encoder_forward(image_tokens: Tensor, depth_tokens: Tensor | None,
                    params: EncoderParams) -> Tensor:
    """Full block: per-stream self-attention, cross-attention, fusion, norm, MLP.

    With the depth stream disabled (``depth_tokens is None``) the image
    self-attention stream goes through the same norm and MLP alone.
    """
    attended_image = self_attention(image_tokens, params.self_image)
    if depth_tokens is None:
        return _norm_mlp(attended_image, params)
    attended_depth = self_attention(depth_tokens, params.self_depth)
    if params.cross_queries == "image":
        crossed = cross_attention(attended_image, attended_depth, params.cross)
    else:
        crossed = cross_attention(attended_depth, attended_image, params.cross)
    fused = gated_fusion(attended_image, attended_depth, crossed, params.gates)
    return _norm_mlp(fused, params)
