"""Real spherical-harmonics colour evaluation up to degree 3, with direction gradients."""

from __future__ import annotations

import numpy as np

C0 = 0.28209479177387814
C1 = 0.4886025119029199
C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
      -1.0925484305920792, 0.5462742152960396)
C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658, 0.3731763325901154,
      -0.4570457994644658, 1.445305721320277, -0.5900435899266435)


def basis(dirs: np.ndarray, degree: int, with_grad: bool = False):
    """SH basis values ``(N, K)`` for unit directions and, optionally, ``d basis / d dir`` ``(N, K, 3)``."""
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    n = len(dirs)
    k = (degree + 1) ** 2
    b = np.zeros((n, k))
    g = np.zeros((n, k, 3)) if with_grad else None
    b[:, 0] = C0
    if degree >= 1:
        b[:, 1] = -C1 * y
        b[:, 2] = C1 * z
        b[:, 3] = -C1 * x
        if with_grad:
            g[:, 1, 1] = -C1
            g[:, 2, 2] = C1
            g[:, 3, 0] = -C1
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        b[:, 4] = C2[0] * x * y
        b[:, 5] = C2[1] * y * z
        b[:, 6] = C2[2] * (2 * zz - xx - yy)
        b[:, 7] = C2[3] * x * z
        b[:, 8] = C2[4] * (xx - yy)
        if with_grad:
            g[:, 4] = C2[0] * np.stack([y, x, 0 * x], 1)
            g[:, 5] = C2[1] * np.stack([0 * x, z, y], 1)
            g[:, 6] = C2[2] * np.stack([-2 * x, -2 * y, 4 * z], 1)
            g[:, 7] = C2[3] * np.stack([z, 0 * x, x], 1)
            g[:, 8] = C2[4] * np.stack([2 * x, -2 * y, 0 * x], 1)
    if degree >= 3:
        b[:, 9] = C3[0] * y * (3 * xx - yy)
        b[:, 10] = C3[1] * x * y * z
        b[:, 11] = C3[2] * y * (4 * zz - xx - yy)
        b[:, 12] = C3[3] * z * (2 * zz - 3 * xx - 3 * yy)
        b[:, 13] = C3[4] * x * (4 * zz - xx - yy)
        b[:, 14] = C3[5] * z * (xx - yy)
        b[:, 15] = C3[6] * x * (xx - 3 * yy)
        if with_grad:
            zero = 0 * x
            g[:, 9] = C3[0] * np.stack([6 * x * y, 3 * xx - 3 * yy, zero], 1)
            g[:, 10] = C3[1] * np.stack([y * z, x * z, x * y], 1)
            g[:, 11] = C3[2] * np.stack([-2 * x * y, 4 * zz - xx - 3 * yy, 8 * y * z], 1)
            g[:, 12] = C3[3] * np.stack([-6 * x * z, -6 * y * z, 6 * zz - 3 * xx - 3 * yy], 1)
            g[:, 13] = C3[4] * np.stack([4 * zz - 3 * xx - yy, -2 * x * y, 8 * x * z], 1)
            g[:, 14] = C3[5] * np.stack([2 * x * z, -2 * y * z, xx - yy], 1)
            g[:, 15] = C3[6] * np.stack([3 * xx - 3 * yy, -6 * x * y, zero], 1)
    if degree > 3:
        raise ValueError("SH degree above 3 is not supported")
    return (b, g) if with_grad else b


def eval_colors(sh: np.ndarray, positions: np.ndarray, cam_center: np.ndarray):
    """Colour per Gaussian seen from ``cam_center``: ``max(SH(dir) + 0.5, 0)``.

    Returns the colours and a cache for :func:`eval_colors_backward`.
    """
    degree = int(round(np.sqrt(sh.shape[1]))) - 1
    v = positions - cam_center
    norm = np.linalg.norm(v, axis=1, keepdims=True)
    dirs = v / np.maximum(norm, 1e-12)
    b, db = basis(dirs, degree, with_grad=True) if degree > 0 else (basis(dirs, 0), None)
    raw = np.einsum("nk,nkc->nc", b, sh) + 0.5
    colors = np.maximum(raw, 0.0)
    return colors, (b, db, dirs, norm, raw > 0, sh)


def eval_colors_backward(grad_colors: np.ndarray, cache):
    """Gradients w.r.t. SH coefficients and Gaussian positions."""
    b, db, dirs, norm, live, sh = cache
    gc = grad_colors * live
    g_sh = b[:, :, None] * gc[:, None, :]
    if db is None:
        return g_sh, np.zeros_like(dirs)
    # d colour_c / d dir = sum_k sh[k, c] * d b_k / d dir
    g_dir = np.einsum("nc,nkc,nkd->nd", gc, sh, db)
    # unit-vector normalisation: d dir / d v = (I - dir dir^T) / |v|
    g_pos = (g_dir - dirs * np.sum(g_dir * dirs, axis=1, keepdims=True)) / np.maximum(norm, 1e-12)
    return g_sh, g_pos
