"""Synthetic articulated-body scenes.

A body is three capsules: a torso plus two limbs hinged at the torso top.
Joint angles are drawn per seed; limbs get an out-of-plane elevation whose
sign is invisible in the rendered image (shading depends only on the
cross-section height) but directly measurable in the depth map. Template
vertices sit at fixed surface offsets; each joint has an antipodal surface
pair whose average recovers the joint, which makes the canonical joint
regressor consistent with the stored 3-D joints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .objective import JointRegressor

VIEW_HALF = 1.15        # world extent of the pixel grid in x and y
CAMERA_DISTANCE = 2.5   # camera plane to world origin, meters
BACKGROUND_DEPTH = 5.0  # sentinel depth for empty pixels, meters

TORSO_LENGTH = 0.8
TORSO_RADIUS = 0.22
LIMB_LENGTH = 0.45
LIMB_RADIUS = 0.14

JOINT_COUNT = 4  # root, torso top, two limb ends

_GOLDEN = 0.6180339887498949
_GOLDEN_ANGLE = 2.399963229728653


@dataclass
class Scene:
    """One synthetic sample with self-consistent supervision signals."""

    image: np.ndarray       # H x W x 1 in [0, 1]
    depth: np.ndarray       # H x W meters
    silhouette: np.ndarray  # H x W binary
    gt_vertices: np.ndarray  # V x 3
    gt_j3d: np.ndarray      # J x 3
    gt_j2d: np.ndarray      # J x 2
    camera_gt: np.ndarray   # (s, t_x, t_y)


def vertex_template(v_coarse: int) -> list[tuple[int, float, float, float]]:
    """Fixed (segment, axis position, surface angle, sign) per template vertex.

    The first eight entries are antipodal pairs centered on the four joints.
    """
    if v_coarse < 2 * JOINT_COUNT:
        raise ConfigurationError(
            f"need at least {2 * JOINT_COUNT} coarse vertices, got {v_coarse}")
    entries = [
        (0, 0.0, 0.0, 1.0), (0, 0.0, 0.0, -1.0),
        (0, 1.0, 0.0, 1.0), (0, 1.0, 0.0, -1.0),
        (1, 1.0, 0.0, 1.0), (1, 1.0, 0.0, -1.0),
        (2, 1.0, 0.0, 1.0), (2, 1.0, 0.0, -1.0),
    ]
    for k in range(2 * JOINT_COUNT, v_coarse):
        seg = k % 3
        along = 0.05 + 0.9 * math.fmod(k * _GOLDEN, 1.0)
        angle = math.fmod(k * _GOLDEN_ANGLE, 2.0 * math.pi)
        entries.append((seg, along, angle, 1.0))
    return entries


def joint_regressor(v_coarse: int) -> JointRegressor:
    """Canonical map: each joint is the mean of its antipodal vertex pair."""
    matrix = np.zeros((JOINT_COUNT, v_coarse))
    for j in range(JOINT_COUNT):
        matrix[j, 2 * j] = 0.5
        matrix[j, 2 * j + 1] = 0.5
    return JointRegressor(matrix)


def _direction(theta: float, elev: float) -> np.ndarray:
    """Unit vector from an in-plane angle (measured off +y) and an elevation."""
    return np.array([math.sin(theta) * math.cos(elev),
                     math.cos(theta) * math.cos(elev),
                     math.sin(elev)])


def _surface_frame(axis_dir: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ref = np.array([0.0, 0.0, 1.0])
    n1 = np.cross(axis_dir, ref)
    norm = np.linalg.norm(n1)
    if norm < 1e-9:
        n1 = np.cross(axis_dir, np.array([1.0, 0.0, 0.0]))
        norm = np.linalg.norm(n1)
    n1 = n1 / norm
    n2 = np.cross(axis_dir, n1)
    return n1, n2


def synth_scene(seed: int, height: int, width: int, v_coarse: int) -> Scene:
    """Sample one articulated body and render it deterministically."""
    rng = np.random.default_rng(seed)
    center = rng.uniform(-0.15, 0.15, size=2)
    torso_tilt = rng.uniform(-0.35, 0.35)
    # elevation magnitudes stay bounded away from zero so the out-of-plane
    # sign is always a real decision; shading cannot reveal it, depth can
    torso_elev = rng.uniform(0.15, 0.5) * (1.0 if rng.random() < 0.5 else -1.0)

    limb_dirs = []
    for side in (1.0, -1.0):
        polar = rng.uniform(0.45, 1.35)
        elev = rng.uniform(0.25, 0.65) * (1.0 if rng.random() < 0.5 else -1.0)
        limb_dirs.append(_direction(torso_tilt + side * (math.pi - polar), elev))

    torso_dir = _direction(torso_tilt, torso_elev)
    # the root sits on the camera-distance plane (z = 0), so out-of-plane
    # pose directly shifts the body's absolute depth
    root = np.array([center[0], center[1] - 0.4, 0.0])
    top = root + TORSO_LENGTH * torso_dir
    end_a = top + LIMB_LENGTH * limb_dirs[0]
    end_b = top + LIMB_LENGTH * limb_dirs[1]

    segments = [(root, top, TORSO_RADIUS),
                (top, end_a, LIMB_RADIUS),
                (top, end_b, LIMB_RADIUS)]

    vertices = np.empty((v_coarse, 3))
    for i, (seg, along, angle, sign) in enumerate(vertex_template(v_coarse)):
        a, b, radius = segments[seg]
        axis_dir = (b - a) / np.linalg.norm(b - a)
        n1, n2 = _surface_frame(axis_dir)
        normal = math.cos(angle) * n1 + math.sin(angle) * n2
        vertices[i] = a + along * (b - a) + sign * radius * normal

    joints3d = np.stack([root, top, end_a, end_b])
    joints2d = joints3d[:, :2] * 1.0 + np.zeros(2)
    camera_gt = np.array([1.0, 0.0, 0.0])

    xs = -VIEW_HALF + (np.arange(width) + 0.5) * (2.0 * VIEW_HALF / width)
    ys = VIEW_HALF - (np.arange(height) + 0.5) * (2.0 * VIEW_HALF / height)
    px, py = np.meshgrid(xs, ys)

    depth = np.full((height, width), BACKGROUND_DEPTH)
    shade = np.zeros((height, width))
    for a, b, radius in segments:
        d2d = b[:2] - a[:2]
        length2 = float(d2d @ d2d)
        if length2 < 1e-12:
            along = np.zeros_like(px)
        else:
            along = np.clip(((px - a[0]) * d2d[0] + (py - a[1]) * d2d[1]) / length2,
                            0.0, 1.0)
        dist2 = (px - (a[0] + along * d2d[0])) ** 2 + (py - (a[1] + along * d2d[1])) ** 2
        hit = dist2 <= radius * radius
        half = np.sqrt(np.maximum(radius * radius - dist2, 0.0))
        surface = CAMERA_DISTANCE + a[2] + along * (b[2] - a[2]) - half
        closer = hit & (surface < depth)
        depth[closer] = surface[closer]
        shade[closer] = half[closer] / radius

    return Scene(
        image=shade[:, :, None],
        depth=depth,
        silhouette=(depth < BACKGROUND_DEPTH).astype(np.float64),
        gt_vertices=vertices,
        gt_j3d=joints3d,
        gt_j2d=joints2d,
        camera_gt=camera_gt,
    )
