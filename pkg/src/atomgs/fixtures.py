"""Synthetic scenes and camera rigs used by the tests, the notebooks and the self-recovery experiment."""

from __future__ import annotations

import numpy as np

from .scene import SH_C0, Camera, GaussianSet, inverse_sigmoid

GOLDEN = np.pi * (3.0 - np.sqrt(5.0))


def fibonacci_sphere(n: int, offset: float = 0.0) -> np.ndarray:
    """``n`` near-uniform unit vectors; ``offset`` in [0, 1) shifts the lattice to a disjoint set."""
    k = np.arange(n) + 0.5 + offset
    z = 1.0 - 2.0 * (k % n) / n
    r = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    phi = GOLDEN * k
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def quat_from_z(normals: np.ndarray) -> np.ndarray:
    """(w, x, y, z) quaternions rotating the +z axis onto each unit normal."""
    n = np.asarray(normals, dtype=np.float64)
    z = np.array([0.0, 0.0, 1.0])
    axis = np.cross(z, n)
    w = 1.0 + n @ z
    q = np.concatenate([w[:, None], axis], axis=1)
    flip = w < 1e-9  # normal along -z: any half-turn about a horizontal axis
    q[flip] = [0.0, 1.0, 0.0, 0.0]
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def sphere_texture(dirs: np.ndarray) -> np.ndarray:
    """Smooth colour pattern over the sphere, in [0.1, 0.9]."""
    d = np.asarray(dirs, dtype=np.float64)
    return 0.5 + 0.4 * np.stack([np.sin(3.0 * d[:, 0] + 1.0),
                                 np.sin(3.0 * d[:, 1] + 2.0),
                                 np.sin(3.0 * d[:, 2] + 3.0)], axis=1)


def textured_sphere(n: int = 50, radius: float = 1.0, tangent_scale: float | None = None,
                    thickness: float = 0.05, opacity: float = 0.98, inset: float = 0.98,
                    sh_degree: int = 0) -> GaussianSet:
    """Flat tangent discs covering a sphere, each with its own colour.

    Disc centres sit at ``inset * radius`` so that the flat discs straddle the
    true surface. ``tangent_scale`` defaults to the spacing of ``n`` points on
    the sphere; ``thickness`` is relative to it.
    """
    dirs = fibonacci_sphere(n)
    if tangent_scale is None:
        tangent_scale = 0.55 * radius * np.sqrt(4.0 * np.pi / n)
    scales = np.tile([tangent_scale, tangent_scale, thickness * tangent_scale], (n, 1))
    sh = np.zeros((n, (sh_degree + 1) ** 2, 3))
    sh[:, 0] = (sphere_texture(dirs) - 0.5) / SH_C0
    return GaussianSet(
        positions=dirs * radius * inset,
        quaternions=quat_from_z(dirs),
        log_scales=np.log(scales),
        opacities_raw=np.full(n, float(inverse_sigmoid(opacity))),
        sh=sh,
    )


def orbit_cameras(n: int, distance: float = 3.5, width: int = 64, height: int = 64,
                  fov_x: float = np.radians(45.0), offset: float = 0.0, target=(0.0, 0.0, 0.0)) -> list[Camera]:
    """``n`` cameras on a sphere of radius ``distance`` looking at ``target``."""
    target = np.asarray(target, dtype=np.float64)
    return [Camera.look_at(target + distance * d, target, width, height, fov_x)
            for d in fibonacci_sphere(n, offset)]


def sphere_rig(n_train: int = 16, n_test: int = 4, **kw) -> tuple[list[Camera], list[Camera]]:
    """Training and held-out cameras on interleaved lattices."""
    return orbit_cameras(n_train, **kw), orbit_cameras(n_test, offset=0.37, **kw)


def sphere_depth(cam: Camera, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Analytic camera-z depth of a sphere; 0 where the pixel ray misses it."""
    jj, ii = np.meshgrid(np.arange(cam.width), np.arange(cam.height))
    rays_cam = np.stack([(jj - cam.cx) / cam.fx, (ii - cam.cy) / cam.fy, np.ones_like(jj, float)], axis=-1)
    rays = rays_cam @ cam.rotation  # world directions with unit camera-z component
    oc = cam.center - np.asarray(center, dtype=np.float64)
    a = np.sum(rays * rays, axis=-1)
    b = 2.0 * rays @ oc
    c = oc @ oc - radius ** 2
    disc = b * b - 4 * a * c
    t = (-b - np.sqrt(np.maximum(disc, 0.0))) / (2 * a)
    return np.where((disc > 0) & (t > 0), t, 0.0)


def sphere_points(n: int = 4000, radius: float = 1.0) -> np.ndarray:
    return fibonacci_sphere(n) * radius


def random_scene(rng: np.random.Generator, n: int = 5, sh_degree: int = 1, spread: float = 0.6,
                 depth: float = 4.0, scale_range=(0.15, 0.5), opacity_range=(0.3, 0.9)) -> GaussianSet:
    """Gaussians scattered in front of a camera at the origin looking down +z."""
    pos = rng.uniform(-spread, spread, (n, 3)) + [0.0, 0.0, depth]
    q = rng.normal(size=(n, 4))
    s = rng.uniform(*scale_range, (n, 3))
    op = rng.uniform(*opacity_range, n)
    sh = rng.normal(scale=0.3, size=(n, (sh_degree + 1) ** 2, 3))
    return GaussianSet(pos, q / np.linalg.norm(q, axis=1, keepdims=True), np.log(s),
                       inverse_sigmoid(op), sh)


def front_camera(width: int = 32, height: int = 32, fov_x: float = np.radians(40.0)) -> Camera:
    """Identity-pose camera at the origin looking down +z."""
    fx = 0.5 * width / np.tan(0.5 * fov_x)
    return Camera(np.eye(4), width, height, fx, fx)
