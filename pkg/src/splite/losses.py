"""Training-style objectives, their analytic gradients, and alignment metrics.

No optimizer lives here; these exist so the geometry pipeline is checkable.
Every loss returns ``(value, gradient)`` in float64, and ``grad_check``
verifies any of them against central finite differences. ``pa_mpjpe`` is the
standard Procrustes-aligned joint error used to score predictions.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .config import DEFAULT_CONFIG, PipelineConfig
from .lifting import CameraIntrinsics, project
from .tensor_core import TensorError
from .topology import edges_from_faces


def _as_points(a, name: str) -> np.ndarray:
    out = np.asarray(a, dtype=np.float64)
    if out.ndim != 2 or out.shape[1] not in (2, 3):
        raise TensorError(f"{name} must be (N, 2) or (N, 3), got {out.shape}")
    return out


def reprojection_loss(joints: np.ndarray, target_uv: np.ndarray,
                      intr: CameraIntrinsics) -> tuple[float, np.ndarray]:
    """Sum of squared pixel residuals after pinhole projection.

    Gradient is with respect to the 3D joints; the chain through u = fx x/z + cx
    gives dL/dz terms proportional to -x/z^2 and -y/z^2.
    """
    x = _as_points(joints, "joints")
    t = _as_points(target_uv, "target_uv")
    if x.shape[0] != t.shape[0] or x.shape[1] != 3 or t.shape[1] != 2:
        raise TensorError(f"joints {x.shape} do not pair with targets {t.shape}")
    uv = project(x, intr)
    r = uv - t
    value = float((r * r).sum())
    z = x[:, 2]
    grad = np.zeros_like(x)
    grad[:, 0] = 2.0 * r[:, 0] * intr.fx / z
    grad[:, 1] = 2.0 * r[:, 1] * intr.fy / z
    grad[:, 2] = -2.0 * (r[:, 0] * intr.fx * x[:, 0] + r[:, 1] * intr.fy * x[:, 1]) / (z * z)
    return value, grad


def pose3d_loss(joints: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Sum of squared 3D residuals."""
    x = _as_points(joints, "joints")
    t = _as_points(target, "target")
    if x.shape != t.shape:
        raise TensorError(f"shape mismatch {x.shape} vs {t.shape}")
    d = x - t
    return float((d * d).sum()), 2.0 * d


def depth_loss(depths: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Sum of squared depth residuals."""
    d = np.asarray(depths, dtype=np.float64).reshape(-1)
    t = np.asarray(target, dtype=np.float64).reshape(-1)
    if d.shape != t.shape:
        raise TensorError(f"shape mismatch {d.shape} vs {t.shape}")
    r = d - t
    return float((r * r).sum()), 2.0 * r


def smoothness_loss(vertices: np.ndarray, faces: np.ndarray) -> tuple[float, np.ndarray]:
    """Sum of squared edge lengths over the mesh's unique undirected edges.

    Penalizes stretched geometry; the gradient at a vertex is 2(v_i - v_j)
    summed over its incident edges.
    """
    v = _as_points(vertices, "vertices")
    if v.shape[1] != 3:
        raise TensorError("smoothness_loss expects (V, 3) vertices")
    edges = edges_from_faces(np.asarray(faces))
    d = v[edges[:, 0]] - v[edges[:, 1]]
    value = float((d * d).sum())
    grad = np.zeros_like(v)
    np.add.at(grad, edges[:, 0], 2.0 * d)
    np.add.at(grad, edges[:, 1], -2.0 * d)
    return value, grad


def aggregate_loss(joints: np.ndarray, vertices: np.ndarray, faces: np.ndarray,
                   target_uv: np.ndarray, target_joints: np.ndarray,
                   target_depths: np.ndarray, intr: CameraIntrinsics,
                   cfg: PipelineConfig = DEFAULT_CONFIG) -> tuple[float, dict[str, float]]:
    """Weighted sum of the four objectives; returns (total, per-term values)."""
    w_re, w_p3, w_d, w_sm = cfg.loss_weights
    l_re, _ = reprojection_loss(joints, target_uv, intr)
    l_p3, _ = pose3d_loss(joints, target_joints)
    l_d, _ = depth_loss(np.asarray(joints, np.float64)[:, 2], target_depths)
    l_sm, _ = smoothness_loss(vertices, faces)
    parts = {"reprojection": l_re, "pose3d": l_p3, "depth": l_d, "smoothness": l_sm}
    total = w_re * l_re + w_p3 * l_p3 + w_d * l_d + w_sm * l_sm
    return float(total), parts


def grad_check(fn: Callable[[np.ndarray], tuple[float, np.ndarray]],
               x: np.ndarray, h: float = 1e-5) -> float:
    """Max |analytic - central finite difference| over all coordinates."""
    x = np.asarray(x, dtype=np.float64)
    _, grad = fn(x)
    worst = 0.0
    flat = x.reshape(-1)
    for i in range(flat.size):
        bump = np.zeros_like(flat)
        bump[i] = h
        hi, _ = fn((flat + bump).reshape(x.shape))
        lo, _ = fn((flat - bump).reshape(x.shape))
        fd = (hi - lo) / (2.0 * h)
        worst = max(worst, abs(fd - grad.reshape(-1)[i]))
    return worst


def similarity_align(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Least-squares similarity transform (scale, rotation, translation).

    Solves min ||s R pred + t - target||^2 with det(R) = +1; a reflection in
    the raw SVD solution is corrected by flipping the smallest singular
    direction. A degenerate (collapsed) prediction keeps scale 1.
    """
    p = _as_points(pred, "pred")
    g = _as_points(target, "target")
    if p.shape != g.shape or p.shape[1] != 3:
        raise TensorError(f"point sets must both be (N, 3), got {p.shape} vs {g.shape}")
    n = p.shape[0]
    mu_p = p.mean(axis=0)
    mu_g = g.mean(axis=0)
    pc = p - mu_p
    gc = g - mu_g
    cov = gc.T @ pc / n
    u, d, vt = np.linalg.svd(cov)
    sign = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        sign[-1] = -1.0
    rot = u @ np.diag(sign) @ vt
    var_p = float((pc * pc).sum()) / n
    scale = float((d * sign).sum() / var_p) if var_p > 0 else 1.0
    trans = mu_g - scale * rot @ mu_p
    return scale, rot, trans


def pa_mpjpe(pred: np.ndarray, target: np.ndarray) -> float:
    """Procrustes-aligned mean per-joint position error, in millimetres.

    Inputs are metric (metres); the prediction is similarity-aligned to the
    target before averaging Euclidean joint distances.
    """
    scale, rot, trans = similarity_align(pred, target)
    aligned = scale * np.asarray(pred, np.float64) @ rot.T + trans
    err = np.linalg.norm(aligned - np.asarray(target, np.float64), axis=1)
    return float(err.mean() * 1000.0)


def mpjpe(pred: np.ndarray, target: np.ndarray) -> float:
    """Unaligned mean per-joint position error, in millimetres."""
    p = _as_points(pred, "pred")
    g = _as_points(target, "target")
    if p.shape != g.shape:
        raise TensorError(f"shape mismatch {p.shape} vs {g.shape}")
    return float(np.linalg.norm(p - g, axis=1).mean() * 1000.0)
