"""2D landmark decoding and the lift from pose features to mesh space.

The encoder emits per-keypoint heatmap logits on a coarse grid plus depth
logits. This module turns those into differentiable 2D landmark positions
(soft-argmax), samples pose features at the landmark sites (bilinear), maps
pose features onto the coarse mesh vertices (linear lift), and backprojects
pixel positions with depth through a pinhole camera.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import DEFAULT_CONFIG, PipelineConfig
from .tensor_core import DenseTensor, TensorError


class LiftingError(ValueError):
    """Raised for invalid camera or landmark geometry inputs."""


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixel units."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise LiftingError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")


def default_intrinsics(cfg: PipelineConfig = DEFAULT_CONFIG) -> CameraIntrinsics:
    """A plausible camera for the square input: f = image size, centre principal point."""
    s = float(cfg.input_size)
    return CameraIntrinsics(fx=s, fy=s, cx=s / 2.0, cy=s / 2.0)


@dataclass(frozen=True)
class Landmarks2D:
    """Per-keypoint positions as (u, v) = (column, row), plus peak confidence."""

    grid: np.ndarray  # (K, 2) float, continuous grid-cell coordinates
    pixel: np.ndarray  # (K, 2) float, input-image pixel coordinates
    confidence: np.ndarray  # (K,) float, max softmax probability per keypoint


def soft_argmax(heatmaps: DenseTensor, temperature: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Softmax-weighted expectation of (u, v) over each keypoint's grid.

    Returns (positions (K, 2), confidence (K,)). Differentiable stand-in for
    argmax; confidence is the peak probability mass.
    """
    h = np.asarray(heatmaps, dtype=np.float64)
    if h.ndim != 3:
        raise TensorError(f"soft_argmax expects (K, H, W), got rank {h.ndim}")
    if temperature <= 0:
        raise LiftingError("temperature must be positive")
    k, height, width = h.shape
    flat = h.reshape(k, -1) / temperature
    flat = flat - flat.max(axis=1, keepdims=True)
    p = np.exp(flat)
    p /= p.sum(axis=1, keepdims=True)
    grid_v, grid_u = np.divmod(np.arange(height * width, dtype=np.float64), width)
    pos = np.stack([p @ grid_u, p @ grid_v], axis=1)
    return pos.astype(np.float32), p.max(axis=1).astype(np.float32)


def grid_to_pixel(grid_pos: np.ndarray, cfg: PipelineConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Map grid-cell centres to input pixels: px = g * stride + (stride - 1) / 2."""
    return (np.asarray(grid_pos, np.float64) * cfg.landmark_stride + cfg.landmark_offset).astype(np.float32)


def decode_landmarks(heatmaps: DenseTensor, cfg: PipelineConfig = DEFAULT_CONFIG) -> Landmarks2D:
    grid, conf = soft_argmax(heatmaps, cfg.heatmap_temperature)
    return Landmarks2D(grid=grid, pixel=grid_to_pixel(grid, cfg), confidence=conf)


def pose_pooling(features: DenseTensor, grid_pos: np.ndarray) -> np.ndarray:
    """Bilinear sample of the feature map at each landmark's grid position.

    Positions are clamped to the map border, so out-of-range landmarks pool
    the nearest edge features rather than raising.
    """
    f = np.asarray(features, dtype=np.float32)
    if f.ndim != 3:
        raise TensorError(f"pose_pooling expects (C, H, W) features, got rank {f.ndim}")
    _, height, width = f.shape
    pos = np.asarray(grid_pos, dtype=np.float64)
    if pos.ndim != 2 or pos.shape[1] != 2:
        raise TensorError("grid positions must be (K, 2)")
    u = np.clip(pos[:, 0], 0.0, width - 1.0)
    v = np.clip(pos[:, 1], 0.0, height - 1.0)
    u0 = np.floor(u).astype(int)
    v0 = np.floor(v).astype(int)
    u1 = np.minimum(u0 + 1, width - 1)
    v1 = np.minimum(v0 + 1, height - 1)
    au = (u - u0)[:, None]
    av = (v - v0)[:, None]
    top = f[:, v0, u0].T * (1 - au) + f[:, v0, u1].T * au
    bottom = f[:, v1, u0].T * (1 - au) + f[:, v1, u1].T * au
    return (top * (1 - av) + bottom * av).astype(np.float32)


def pose_to_vertex(pose_features: np.ndarray, lift_matrix: np.ndarray) -> np.ndarray:
    """Linear lift of per-keypoint features onto coarse mesh vertices.

    ``lift_matrix`` is (V, K); each vertex feature is a learned mix of the K
    keypoint feature vectors.
    """
    pf = np.asarray(pose_features, dtype=np.float32)
    m = np.asarray(lift_matrix, dtype=np.float32)
    if pf.ndim != 2 or m.ndim != 2 or m.shape[1] != pf.shape[0]:
        raise TensorError(f"lift matrix {m.shape} does not match pose features {pf.shape}")
    return m @ pf


def decode_depths(depth_logits: np.ndarray, cfg: PipelineConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Per-keypoint metric depths from the raw depth head.

    The first logit parameterizes the root depth as exp(l0) (always positive,
    1 m at zero); the rest are metric offsets from the root. Everything is
    clamped to a minimum working distance so backprojection stays defined.
    """
    logits = np.asarray(depth_logits, dtype=np.float64).reshape(-1)
    root = np.exp(logits[0])
    depths = np.concatenate([[root], root + logits[1:]])
    return np.maximum(depths, cfg.min_depth).astype(np.float32)


def backproject(pixel_uv: np.ndarray, depths: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    """Pinhole inverse projection: (u, v, d) -> (x, y, z) camera coordinates.

    x = (u - cx) d / fx, y = (v - cy) d / fy, z = d. Depths must be strictly
    positive; points at or behind the camera plane raise.
    """
    uv = np.asarray(pixel_uv, dtype=np.float64)
    d = np.asarray(depths, dtype=np.float64).reshape(-1)
    if uv.ndim != 2 or uv.shape[1] != 2 or uv.shape[0] != d.shape[0]:
        raise TensorError(f"pixel array {uv.shape} does not pair with {d.shape[0]} depths")
    if np.any(d <= 0):
        bad = int(np.argmax(d <= 0))
        raise LiftingError(f"depth must be positive, got {d[bad]} at index {bad}")
    x = (uv[:, 0] - intr.cx) * d / intr.fx
    y = (uv[:, 1] - intr.cy) * d / intr.fy
    # float64 so project(backproject(...)) round-trips exactly
    return np.stack([x, y, d], axis=1)


def project(points: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    """Pinhole forward projection to (u, v); strictly positive z required."""
    p = np.asarray(points, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != 3:
        raise TensorError("project expects (N, 3) points")
    if np.any(p[:, 2] <= 0):
        raise LiftingError("cannot project points at or behind the camera")
    u = intr.fx * p[:, 0] / p[:, 2] + intr.cx
    v = intr.fy * p[:, 1] / p[:, 2] + intr.cy
    return np.stack([u, v], axis=1)
