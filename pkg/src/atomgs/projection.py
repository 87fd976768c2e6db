"""World-to-screen projection of 3D Gaussians and its analytic derivatives.

All functions are batched over the leading Gaussian axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene import Camera

DILATION = 0.3  # px^2 added to both diagonal entries of the 2D covariance
NEAR_PLANE = 0.01


def quat_to_rot(q: np.ndarray) -> np.ndarray:
    """Rotation matrices ``(N, 3, 3)`` from (w, x, y, z) quaternions (normalised here)."""
    q = np.atleast_2d(q)
    norm = np.linalg.norm(q, axis=1, keepdims=True)
    if np.any(norm == 0):
        raise ValueError("zero quaternion has no rotation")
    w, x, y, z = (q / norm).T
    return np.stack([
        1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
    ], axis=1).reshape(-1, 3, 3)


def _rot_backward(q: np.ndarray, g_rot: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the raw (unnormalised) quaternion given dL/dR."""
    norm = np.linalg.norm(q, axis=1, keepdims=True)
    qn = q / norm
    w, x, y, z = qn.T
    g = g_rot.reshape(-1, 9).T
    gw = 2 * (-z * g[1] + y * g[2] + z * g[3] - x * g[5] - y * g[6] + x * g[7])
    gx = 2 * (y * g[1] + z * g[2] + y * g[3] - 2 * x * g[4] - w * g[5] + z * g[6] + w * g[7] - 2 * x * g[8])
    gy = 2 * (-2 * y * g[0] + x * g[1] + w * g[2] + x * g[3] + z * g[5] - w * g[6] + z * g[7] - 2 * y * g[8])
    gz = 2 * (-2 * z * g[0] - w * g[1] + x * g[2] + w * g[3] - 2 * z * g[4] + y * g[5] + x * g[6] + y * g[7])
    gqn = np.stack([gw, gx, gy, gz], axis=1)
    return (gqn - qn * np.sum(gqn * qn, axis=1, keepdims=True)) / norm


def build_covariance(q: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Sigma = R S S^T R^T for quaternion(s) ``q`` and scale vector(s) ``s``."""
    single = np.ndim(s) == 1
    rot = quat_to_rot(q)
    m = rot * np.atleast_2d(s)[:, None, :]
    cov = m @ m.transpose(0, 2, 1)
    cov = 0.5 * (cov + cov.transpose(0, 2, 1))
    return cov[0] if single else cov


def covariance_backward(q: np.ndarray, log_s: np.ndarray, g_cov: np.ndarray):
    """Gradients w.r.t. raw quaternions and log-scales from a symmetric dL/dSigma."""
    rot = quat_to_rot(q)
    s = np.exp(log_s)
    m = rot * s[:, None, :]
    g_m = 2.0 * g_cov @ m
    g_s = np.sum(g_m * rot, axis=1)
    g_rot = g_m * s[:, None, :]
    return _rot_backward(q, g_rot), g_s * s


@dataclass
class ProjectedGaussians:
    """Screen-space footprint of a batch of Gaussians for one camera."""

    means2d: np.ndarray   # (N, 2) pixel coordinates (u = column, v = row)
    depth: np.ndarray     # (N,) camera-space z
    cov2d: np.ndarray     # (N, 2, 2) including the low-pass dilation
    conic: np.ndarray     # (N, 3) inverse covariance entries (a, b, c)
    radius: np.ndarray    # (N,) 3-sigma pixel radius, 0 when invisible
    visible: np.ndarray   # (N,) bool
    cam_points: np.ndarray
    jac: np.ndarray
    cov_cam: np.ndarray


def project(means: np.ndarray, cov3d: np.ndarray, cam: Camera, near: float = NEAR_PLANE,
            dilation: float = DILATION) -> ProjectedGaussians:
    means = np.atleast_2d(np.asarray(means, dtype=np.float64))
    cov3d = np.asarray(cov3d, dtype=np.float64).reshape(-1, 3, 3)
    rot = cam.rotation
    t = means @ rot.T + cam.translation
    tz = t[:, 2]
    visible = tz > near
    z = np.where(visible, tz, 1.0)
    inv_z = 1.0 / z
    n = len(means)
    jac = np.zeros((n, 2, 3))
    jac[:, 0, 0] = cam.fx * inv_z
    jac[:, 0, 2] = -cam.fx * t[:, 0] * inv_z ** 2
    jac[:, 1, 1] = cam.fy * inv_z
    jac[:, 1, 2] = -cam.fy * t[:, 1] * inv_z ** 2
    cov_cam = rot @ cov3d @ rot.T
    cov2d = jac @ cov_cam @ jac.transpose(0, 2, 1)
    cov2d = 0.5 * (cov2d + cov2d.transpose(0, 2, 1))
    cov2d[:, 0, 0] += dilation
    cov2d[:, 1, 1] += dilation
    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = a * c - b * b
    conic = np.stack([c / det, -b / det, a / det], axis=1)
    mid = 0.5 * (a + c)
    lam = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    radius = np.where(visible, 3.0 * np.sqrt(lam), 0.0)
    means2d = np.stack([cam.fx * t[:, 0] * inv_z + cam.cx, cam.fy * t[:, 1] * inv_z + cam.cy], axis=1)
    return ProjectedGaussians(means2d, tz, cov2d, conic, radius, visible, t, jac, cov_cam)


def project_backward(p: ProjectedGaussians, cam: Camera, g_means2d=None, g_conic=None,
                     g_cov2d=None, g_depth=None):
    """Chain rule from screen-space quantities back to world means and 3D covariances.

    ``g_conic`` is the gradient w.r.t. the scalars (a, b, c) of the conic;
    ``g_cov2d`` a symmetric-convention matrix gradient. Both may be given.
    Returns ``(g_means3d (N, 3), g_cov3d (N, 3, 3))``.
    """
    n = len(p.depth)
    g_cov = np.zeros((n, 2, 2)) if g_cov2d is None else np.array(g_cov2d, dtype=np.float64)
    if g_conic is not None:
        ga, gb, gc = np.asarray(g_conic, dtype=np.float64).T
        gq = np.stack([ga, 0.5 * gb, 0.5 * gb, gc], axis=1).reshape(n, 2, 2)
        a, b, c = p.conic.T
        inv = np.stack([a, b, b, c], axis=1).reshape(n, 2, 2)
        g_cov = g_cov - inv @ gq @ inv
    jac, v = p.jac, p.cov_cam
    g_v = jac.transpose(0, 2, 1) @ g_cov @ jac
    g_jac = 2.0 * g_cov @ jac @ v
    rot = cam.rotation
    g_cov3d = rot.T @ g_v @ rot

    t = p.cam_points
    z = np.where(p.visible, t[:, 2], 1.0)
    iz, iz2, iz3 = 1.0 / z, 1.0 / z ** 2, 1.0 / z ** 3
    fx, fy = cam.fx, cam.fy
    g_t = np.zeros((n, 3))
    g_t[:, 0] = -fx * iz2 * g_jac[:, 0, 2]
    g_t[:, 1] = -fy * iz2 * g_jac[:, 1, 2]
    g_t[:, 2] = (-fx * iz2 * g_jac[:, 0, 0] - fy * iz2 * g_jac[:, 1, 1]
                 + 2 * fx * t[:, 0] * iz3 * g_jac[:, 0, 2] + 2 * fy * t[:, 1] * iz3 * g_jac[:, 1, 2])
    if g_means2d is not None:
        gu, gv = np.asarray(g_means2d, dtype=np.float64).T
        g_t[:, 0] += fx * iz * gu
        g_t[:, 1] += fy * iz * gv
        g_t[:, 2] += -fx * t[:, 0] * iz2 * gu - fy * t[:, 1] * iz2 * gv
    if g_depth is not None:
        g_t[:, 2] += g_depth
    g_t[~p.visible] = 0.0
    g_cov3d[~p.visible] = 0.0
    return g_t @ rot, g_cov3d
