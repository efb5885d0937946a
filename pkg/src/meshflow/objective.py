"""Supervision terms, weak-perspective projection, and evaluation metrics.

Losses operate on tensors and are differentiable; metrics are plain numpy
and unit-preserving (the evaluation harness feeds millimeters).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import AlignmentError, DomainError, EvaluationError, ShapeError
from .tensor import Tensor

PROB_CLAMP = 1e-7


@dataclass
class LossWeights:
    """Non-negative weights of the five objective terms."""

    lambda_d: float = 0.01
    lambda_v: float = 1.0
    lambda_3d: float = 1.0
    lambda_2d: float = 1.0
    lambda_s: float = 0.1

    def __post_init__(self):
        for name in ("lambda_d", "lambda_v", "lambda_3d", "lambda_2d", "lambda_s"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise DomainError(f"{name} must be finite and >= 0, got {value}")


@dataclass
class JointRegressor:
    """Row-stochastic vertex-to-joint map."""

    matrix: np.ndarray  # J x V

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2:
            raise ShapeError(f"joint regressor must be a matrix, got shape {m.shape}")
        if (m < 0).any() or np.abs(m.sum(axis=1) - 1.0).max() > 1e-9:
            raise DomainError("joint regressor rows must be non-negative and sum to 1")
        self.matrix = m


def regress_joints(vertices: Tensor, reg: JointRegressor) -> Tensor:
    vertices = T.as_tensor(vertices)
    if vertices.ndim != 2 or vertices.shape[0] != reg.matrix.shape[1]:
        raise ShapeError(
            f"vertices {vertices.shape} vs regressor {reg.matrix.shape}")
    return T.matmul(Tensor(reg.matrix), vertices)


def project_weak_perspective(joints3d: Tensor, camera: Tensor) -> Tensor:
    """(x, y, z) -> s * (x, y) + (t_x, t_y)."""
    joints3d, camera = T.as_tensor(joints3d), T.as_tensor(camera)
    if joints3d.ndim != 2 or joints3d.shape[1] != 3 or camera.shape != (3,):
        raise ShapeError(
            f"projection shapes joints {joints3d.shape} camera {camera.shape}")
    if camera.data[0] <= 0:
        raise DomainError(f"projection scale must be positive, got {camera.data[0]}")
    return T.add(T.mul(joints3d[:, 0:2], camera[0]), camera[1:3])


def l1_loss(pred: Tensor, gt) -> Tensor:
    pred, gt = T.as_tensor(pred), T.as_tensor(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"l1 shapes disagree: {pred.shape} vs {gt.shape}")
    return T.tmean(T.absolute(T.sub(pred, gt)))


def silhouette_loss(pred: Tensor, gt) -> Tensor:
    """Mean binary cross-entropy with probabilities clamped at 1e-7."""
    pred = T.as_tensor(pred)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"silhouette shapes disagree: {pred.shape} vs {gt.shape}")
    if not np.all((gt == 0.0) | (gt == 1.0)):
        raise DomainError("silhouette ground truth must be exactly binary")
    p = T.clamp(pred, PROB_CLAMP, 1.0 - PROB_CLAMP)
    ll = T.add(T.mul(T.log(p), gt), T.mul(T.log(T.sub(1.0, p)), 1.0 - gt))
    return T.neg(T.tmean(ll))


_TERMS = (("rle", "lambda_d"), ("vertices", "lambda_v"), ("pose3d", "lambda_3d"),
          ("pose2d", "lambda_2d"), ("silhouette", "lambda_s"))


def total_loss(components: dict, weights: LossWeights) -> Tensor:
    """Weighted sum of the five terms; zero-weight terms may be absent."""
    total = None
    for key, wname in _TERMS:
        weight = getattr(weights, wname)
        if weight == 0.0:
            continue
        if key not in components:
            raise DomainError(f"missing component '{key}' with weight {weight}")
        comp = T.as_tensor(components[key])
        if comp.size != 1:
            raise ShapeError(f"component '{key}' must be scalar, got {comp.shape}")
        if not np.isfinite(comp.data).all():
            raise EvaluationError(f"component '{key}' is non-finite")
        term = T.mul(comp, weight)
        total = term if total is None else T.add(total, term)
    return Tensor(0.0) if total is None else total


# --- metrics (numpy, unit-preserving) ---

def _check_points(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] != 3:
        raise ShapeError(f"point sets disagree: {pred.shape} vs {gt.shape}")
    return pred, gt


def mpjpe(pred, gt, center: bool = True, root: int = 0) -> float:
    """Mean Euclidean joint distance, root-centered at ``root`` by default."""
    pred, gt = _check_points(pred, gt)
    if center:
        pred = pred - pred[root]
        gt = gt - gt[root]
    return float(np.linalg.norm(pred - gt, axis=1).mean())


def mpve(pred, gt) -> float:
    """Per-vertex error: mean distance without any centering."""
    return mpjpe(pred, gt, center=False)


def mpjpe_z(pred, gt, root: int = 0) -> float:
    """Depth-axis error: mean |z difference| after root-centering."""
    pred, gt = _check_points(pred, gt)
    dz = (pred[:, 2] - pred[root, 2]) - (gt[:, 2] - gt[root, 2])
    return float(np.abs(dz).mean())


def umeyama(src: np.ndarray, dst: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Similarity transform (s, R, t) minimizing ||s R src + t - dst||^2.

    Closed form: centroid subtraction, cross-covariance SVD, determinant-
    corrected rotation (reflections forbidden), optimal scale.
    """
    src, dst = _check_points(src, dst)
    n = src.shape[0]
    if n < 3:
        raise AlignmentError(f"alignment needs at least 3 points, got {n}")
    mean_src = src.mean(axis=0)
    mean_dst = dst.mean(axis=0)
    src_c = src - mean_src
    dst_c = dst - mean_dst
    var_src = (src_c ** 2).sum() / n
    var_dst = (dst_c ** 2).sum() / n
    if var_src < 1e-18 or var_dst < 1e-18:
        raise AlignmentError("point set degenerate: all points coincide")
    cov = dst_c.T @ src_c / n
    u, d, vt = np.linalg.svd(cov)
    sign = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        sign[-1] = -1.0
    rot = u @ np.diag(sign) @ vt
    scale = float((d * sign).sum() / var_src)
    trans = mean_dst - scale * rot @ mean_src
    return scale, rot, trans


def pa_mpjpe(pred, gt) -> float:
    """Mean joint distance after similarity alignment of pred onto gt.

    The alignment candidates are the squared-error-optimal Umeyama transform
    and the root-centering identity; the better one under the reported mean
    distance wins. The closed form optimizes squared error, which on small
    point sets can occasionally lose to the identity on mean distance, so
    taking the better of the two keeps "alignment can only reduce error"
    true for every input. A degenerate (all-coincident) prediction uses the
    scale-to-zero limit of the alignment, i.e. the target centroid.
    """
    pred, gt = _check_points(pred, gt)
    identity_error = mpjpe(pred, gt, center=True)
    centered = pred - pred.mean(axis=0)
    if (centered ** 2).sum() / pred.shape[0] < 1e-18:
        aligned = np.tile(gt.mean(axis=0), (pred.shape[0], 1))
    else:
        scale, rot, trans = umeyama(pred, gt)
        aligned = scale * pred @ rot.T + trans
    aligned_error = float(np.linalg.norm(aligned - gt, axis=1).mean())
    return min(aligned_error, identity_error)


@dataclass
class MetricsReport:
    """Evaluation summary in millimeters."""

    mpjpe: float
    pa_mpjpe: float
    mpve: float
    mpjpe_z: float

    def __post_init__(self):
        values = (self.mpjpe, self.pa_mpjpe, self.mpve, self.mpjpe_z)
        if any(v < 0 or not np.isfinite(v) for v in values):
            raise EvaluationError(f"metrics must be finite and >= 0: {values}")
        if self.pa_mpjpe > self.mpjpe + 1e-9:
            raise EvaluationError(
                f"alignment increased error: pa {self.pa_mpjpe} vs {self.mpjpe}")

    def as_table(self) -> str:
        rows = [("mpjpe", self.mpjpe), ("pa_mpjpe", self.pa_mpjpe),
                ("mpve", self.mpve), ("mpjpe_z", self.mpjpe_z)]
        lines = [f"{'metric':<10}{'mm':>12}"]
        lines += [f"{name:<10}{value:>12.4f}" for name, value in rows]
        return "\n".join(lines)

    def to_keyvalues(self) -> str:
        return (f"mpjpe={self.mpjpe!r}\npa_mpjpe={self.pa_mpjpe!r}\n"
                f"mpve={self.mpve!r}\nmpjpe_z={self.mpjpe_z!r}\n")
