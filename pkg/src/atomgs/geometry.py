"""Depth unprojection, normal, curvature and edge maps, with adjoints for training.

Image derivatives use central differences ``(f[k+1] - f[k-1]) / 2`` in the
interior and one-sided differences on the border (the ``np.gradient`` stencil).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene import Camera

LUMA = np.array([0.299, 0.587, 0.114])
# interior bounds of the stencil: |dN/dx|, |dN/dy| <= 1 for unit normals, |dI/dx|, |dI/dy| <= 1/2 for I in [0, 1]
CURVATURE_NORM = np.sqrt(2.0)
EDGE_NORM = np.sqrt(0.5)


def grad_axis(f: np.ndarray, axis: int) -> np.ndarray:
    f = np.moveaxis(f, axis, 0)
    g = np.empty_like(f)
    g[1:-1] = 0.5 * (f[2:] - f[:-2])
    g[0] = f[1] - f[0]
    g[-1] = f[-1] - f[-2]
    return np.moveaxis(g, 0, axis)


def grad_axis_adjoint(g: np.ndarray, axis: int) -> np.ndarray:
    g = np.moveaxis(g, axis, 0)
    f = np.zeros_like(g)
    f[2:] += 0.5 * g[1:-1]
    f[:-2] -= 0.5 * g[1:-1]
    f[1] += g[0]
    f[0] -= g[0]
    f[-1] += g[-1]
    f[-2] -= g[-1]
    return np.moveaxis(f, 0, axis)


def stencil_valid(valid: np.ndarray) -> np.ndarray:
    """Pixels whose own and gradient-stencil neighbours are all valid."""
    out = valid.copy()
    for axis in (0, 1):
        v = np.moveaxis(valid, axis, 0)
        o = np.moveaxis(out, axis, 0)
        o[1:-1] &= v[2:] & v[:-2]
        o[0] &= v[1]
        o[-1] &= v[-2]
    return out


def pixel_grid(height: int, width: int):
    """Normalised pixel coordinates in [-1, 1], corners included."""
    xn = 2.0 * np.arange(width) / (width - 1) - 1.0
    yn = 2.0 * np.arange(height) / (height - 1) - 1.0
    return np.meshgrid(xn, yn)


def unproject_depth(depth: np.ndarray, cam: Camera, return_jacobian: bool = False):
    """World positions ``(H, W, 3)`` for a camera-z depth map; zero-depth pixels are invalid.

    Follows the clip-space route: normalise pixel coordinates, map depth to
    normalised z with ``(f1 d + f2) / d``, apply the inverse of the full
    world-to-clip transform and divide by the homogeneous coordinate.
    Returns ``(positions, valid)`` and, on request, ``d positions / d depth``.
    """
    depth = np.asarray(depth, dtype=np.float64)
    H, W = depth.shape
    valid = np.isfinite(depth) & (depth != 0)
    d = np.where(valid, depth, 1.0)
    xn, yn = pixel_grid(H, W)
    s = (cam.f1 * d + cam.f2) / d
    tinv = np.linalg.inv(cam.full)
    h = (xn[..., None] * tinv[:, 0] + yn[..., None] * tinv[:, 1]
         + s[..., None] * tinv[:, 2] + tinv[:, 3])
    pos = h[..., :3] / h[..., 3:]
    pos[~valid] = 0.0
    if not return_jacobian:
        return pos, valid
    ds = -cam.f2 / d ** 2
    dpos = (tinv[:3, 2] * h[..., 3:] - h[..., :3] * tinv[3, 2]) / h[..., 3:] ** 2 * ds[..., None]
    dpos[~valid] = 0.0
    return pos, valid, dpos


def normal_map(pos: np.ndarray, valid: np.ndarray | None = None, camera_center=None, return_cache=False):
    """Unit normals from the cross product of the position map's image gradients.

    With ``camera_center`` the normals are flipped to face the camera.
    Masked pixels hold the zero vector.
    """
    if valid is None:
        valid = np.ones(pos.shape[:2], dtype=bool)
    gx = grad_axis(pos, 1)
    gy = grad_axis(pos, 0)
    c = np.cross(gx, gy)
    norm = np.linalg.norm(c, axis=-1)
    ok = stencil_valid(valid) & (norm > 1e-30)
    sign = np.ones_like(norm)
    if camera_center is not None:
        facing = np.sum(c * (pos - np.asarray(camera_center)), axis=-1)
        sign = np.where(facing > 0, -1.0, 1.0)
    n = np.where(ok[..., None], c / np.where(ok, norm, 1.0)[..., None], 0.0) * sign[..., None]
    if return_cache:
        return n, ok, (gx, gy, norm, sign)
    return n, ok


def normal_map_backward(g_n: np.ndarray, normals: np.ndarray, ok: np.ndarray, cache) -> np.ndarray:
    gx, gy, norm, sign = cache
    g_n = np.where(ok[..., None], g_n, 0.0)
    unit = normals * sign[..., None]
    g_c = (g_n - unit * np.sum(unit * g_n, axis=-1, keepdims=True)) * sign[..., None]
    g_c /= np.where(ok, norm, 1.0)[..., None]
    g_gx = np.cross(gy, g_c)
    g_gy = np.cross(g_c, gx)
    return grad_axis_adjoint(g_gx, 1) + grad_axis_adjoint(g_gy, 0)


def curvature_map(normals: np.ndarray, valid: np.ndarray | None = None, return_cache=False):
    """|grad N| normalised to [0, 1]; masked where any stencil normal is invalid."""
    if valid is None:
        valid = np.ones(normals.shape[:2], dtype=bool)
    gx = grad_axis(normals, 1)
    gy = grad_axis(normals, 0)
    mag = np.sqrt(np.sum(gx * gx + gy * gy, axis=-1))
    ok = stencil_valid(valid)
    curv = np.where(ok, np.minimum(mag / CURVATURE_NORM, 1.0), 0.0)
    if return_cache:
        return curv, ok, (gx, gy, mag)
    return curv, ok


def curvature_map_backward(g_curv: np.ndarray, ok: np.ndarray, cache) -> np.ndarray:
    gx, gy, mag = cache
    live = ok & (mag > 0) & (mag < CURVATURE_NORM)
    g_mag = np.where(live, g_curv / CURVATURE_NORM / np.where(live, mag, 1.0), 0.0)[..., None]
    return grad_axis_adjoint(g_mag * gx, 1) + grad_axis_adjoint(g_mag * gy, 0)


def edge_map(image: np.ndarray) -> np.ndarray:
    """Luminance gradient magnitude normalised to [0, 1]."""
    gray = np.asarray(image, dtype=np.float64) @ LUMA
    mag = np.hypot(grad_axis(gray, 1), grad_axis(gray, 0))
    return np.clip(mag / EDGE_NORM, 0.0, 1.0)


@dataclass
class GeometryMaps:
    positions: np.ndarray
    normals: np.ndarray
    curvature: np.ndarray
    valid: np.ndarray          # pixels where the curvature is defined
    normal_valid: np.ndarray
    depth_valid: np.ndarray
    edge: np.ndarray | None = None
    cache: tuple | None = None


def geometry_maps(depth, cam: Camera, accum=None, min_accum: float = 0.5, image=None,
                  keep_cache: bool = False) -> GeometryMaps:
    """Position, normal and curvature maps for one depth map (plus an edge map of ``image``)."""
    if keep_cache:
        pos, dvalid, dpos = unproject_depth(depth, cam, return_jacobian=True)
    else:
        pos, dvalid = unproject_depth(depth, cam)
    if accum is not None:
        dvalid = dvalid & (np.asarray(accum) >= min_accum)
    normals, nvalid, ncache = normal_map(pos, dvalid, cam.center, return_cache=True)
    curv, cvalid, ccache = curvature_map(normals, nvalid, return_cache=True)
    edge = edge_map(image) if image is not None else None
    cache = (dpos, ncache, ccache) if keep_cache else None
    return GeometryMaps(pos, normals, curv, cvalid, nvalid, dvalid, edge, cache)


def geometry_backward(maps: GeometryMaps, g_curv: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the depth map given dL/d(curvature)."""
    if maps.cache is None:
        raise RuntimeError("geometry_maps(..., keep_cache=True) is required for the backward pass")
    dpos, ncache, ccache = maps.cache
    g_n = curvature_map_backward(g_curv, maps.valid, ccache)
    g_pos = normal_map_backward(g_n, maps.normals, maps.normal_valid, ncache)
    g_pos = np.where(maps.depth_valid[..., None], g_pos, 0.0)
    return np.sum(g_pos * dpos, axis=-1)
