"""Gaussian primitives, cameras, SfM input and initialisation quantities."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .plyio import PlyError, read_ply

SH_C0 = 0.28209479177387814


class InitializationError(ValueError):
    """Raised when the SfM input cannot seed a Gaussian set."""


class CameraError(ValueError):
    """Raised for invalid camera matrices or camera files."""


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def inverse_sigmoid(y):
    y = np.asarray(y, dtype=np.float64)
    return np.log(y / (1.0 - y))


@dataclass
class GaussianSet:
    """Structure-of-arrays store for N Gaussians.

    Scales are kept as logs and opacities pre-sigmoid so the optimiser works on
    unconstrained values. ``sh`` has shape ``(N, (L+1)**2, 3)``.
    """

    positions: np.ndarray
    quaternions: np.ndarray
    log_scales: np.ndarray
    opacities_raw: np.ndarray
    sh: np.ndarray
    is_atom: np.ndarray = None
    grad_accum: np.ndarray = None
    grad_count: np.ndarray = None

    def __post_init__(self):
        n = len(self.positions)
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(n, 3)
        self.quaternions = np.asarray(self.quaternions, dtype=np.float64).reshape(n, 4)
        self.log_scales = np.asarray(self.log_scales, dtype=np.float64).reshape(n, 3)
        self.opacities_raw = np.asarray(self.opacities_raw, dtype=np.float64).reshape(n)
        self.sh = np.asarray(self.sh, dtype=np.float64)
        self.sh = self.sh.reshape(n, self.sh.shape[1] if self.sh.ndim == 3 else -1, 3)
        if self.is_atom is None:
            self.is_atom = np.zeros(n, dtype=bool)
        if self.grad_accum is None:
            self.grad_accum = np.zeros(n)
        if self.grad_count is None:
            self.grad_count = np.zeros(n)
        self.is_atom = np.asarray(self.is_atom, dtype=bool).reshape(n)
        self.grad_accum = np.asarray(self.grad_accum, dtype=np.float64).reshape(n)
        self.grad_count = np.asarray(self.grad_count, dtype=np.float64).reshape(n)
        k = self.sh.shape[1]
        if int(round(math.sqrt(k))) ** 2 != k:
            raise ValueError(f"SH block has {k} coefficients, not a square number")

    @property
    def count(self) -> int:
        return len(self.positions)

    @property
    def sh_degree(self) -> int:
        return int(round(math.sqrt(self.sh.shape[1]))) - 1

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    @property
    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacities_raw)

    @property
    def grad_mean(self) -> np.ndarray:
        """Mean view-space positional gradient norm since the last reset."""
        return self.grad_accum / np.maximum(self.grad_count, 1.0)

    def copy(self) -> "GaussianSet":
        return GaussianSet(**{f: getattr(self, f).copy() for f in _FIELDS})

    def select(self, idx) -> "GaussianSet":
        return GaussianSet(**{f: getattr(self, f)[idx].copy() for f in _FIELDS})

    def params(self) -> dict[str, np.ndarray]:
        """The optimisable arrays, keyed by parameter-group name."""
        return {
            "positions": self.positions,
            "quaternions": self.quaternions,
            "log_scales": self.log_scales,
            "opacities_raw": self.opacities_raw,
            "sh": self.sh,
        }

    def check(self, atom_scale: float | None = None) -> None:
        """Assert the structural invariants; used by tests and debug runs."""
        n = self.count
        for f in _FIELDS:
            assert len(getattr(self, f)) == n, f
        assert np.all(np.isfinite(self.positions))
        if atom_scale is not None and self.is_atom.any():
            s = self.scales[self.is_atom]
            assert np.all(s == s[:, :1]), "atom Gaussians must be isotropic"
            assert np.all(s == np.exp(np.log(atom_scale))), "atom scale out of sync"


_FIELDS = ("positions", "quaternions", "log_scales", "opacities_raw", "sh",
           "is_atom", "grad_accum", "grad_count")


def concat(a: GaussianSet, b: GaussianSet) -> GaussianSet:
    return GaussianSet(**{f: np.concatenate([getattr(a, f), getattr(b, f)]) for f in _FIELDS})


@dataclass
class Camera:
    """Pinhole camera.

    Camera space is x right, y down, z forward. Pixel ``(row i, col j)`` has its
    centre at image coordinates ``(u, v) = (j, i)``, and the clip transform maps
    pixel centres 0 and W-1 to normalised -1 and +1 so that the depth
    unprojection formula ``x_norm = 2j/(W-1) - 1`` inverts it exactly.
    """

    view: np.ndarray
    width: int
    height: int
    fx: float
    fy: float
    cx: float | None = None
    cy: float | None = None
    near: float = 0.01
    far: float = 100.0
    image_path: str | None = None
    proj: np.ndarray = field(init=False, repr=False)
    full: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.view = np.asarray(self.view, dtype=np.float64)
        if self.view.shape != (4, 4):
            raise CameraError(f"view transform must be 4x4, got {self.view.shape}")
        if self.width < 2 or self.height < 2:
            raise CameraError("image must be at least 2x2 pixels")
        if self.cx is None:
            self.cx = (self.width - 1) / 2.0
        if self.cy is None:
            self.cy = (self.height - 1) / 2.0
        rot = self.view[:3, :3]
        if not np.allclose(rot @ rot.T, np.eye(3), rtol=0, atol=1e-8):
            raise CameraError("rotation block of the view transform is not orthonormal")
        if not np.allclose(self.view[3], [0, 0, 0, 1]):
            raise CameraError("view transform must be affine (last row 0 0 0 1)")
        if not 0 < self.near < self.far:
            raise CameraError("need 0 < near < far")
        w1, h1 = self.width - 1, self.height - 1
        f1 = (self.far + self.near) / (self.far - self.near)
        f2 = -2.0 * self.far * self.near / (self.far - self.near)
        self.proj = np.array([
            [2 * self.fx / w1, 0, 2 * self.cx / w1 - 1, 0],
            [0, 2 * self.fy / h1, 2 * self.cy / h1 - 1, 0],
            [0, 0, f1, f2],
            [0, 0, 1, 0],
        ])
        self.full = self.proj @ self.view
        ref = np.einsum("ij,jk->ik", self.proj, self.view)
        if not np.allclose(self.full, ref, rtol=1e-10, atol=0):
            raise CameraError("full transform does not equal projection @ view")

    @property
    def f1(self) -> float:
        return float(self.proj[2, 2])

    @property
    def f2(self) -> float:
        return float(self.proj[2, 3])

    @property
    def rotation(self) -> np.ndarray:
        return self.view[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.view[:3, 3]

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    @classmethod
    def look_at(cls, eye, target, width, height, fov_x, up=(0.0, 0.0, 1.0), **kw) -> "Camera":
        """Camera at ``eye`` looking toward ``target`` with image-up roughly along ``up``."""
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        fwd /= np.linalg.norm(fwd)
        up = np.asarray(up, dtype=np.float64)
        right = np.cross(fwd, up)
        if np.linalg.norm(right) < 1e-9:
            right = np.cross(fwd, [1.0, 0.0, 0.0])
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        rot = np.stack([right, down, fwd])
        view = np.eye(4)
        view[:3, :3] = rot
        view[:3, 3] = -rot @ eye
        fx = 0.5 * width / math.tan(0.5 * fov_x)
        return cls(view, width, height, fx, fx, **kw)


# OpenGL/Blender camera axes (y up, looking down -z) to the internal x-right/y-down/z-forward frame.
_GL_TO_CV = np.diag([1.0, -1.0, -1.0, 1.0])


def _orthonormalize(c2w: np.ndarray) -> np.ndarray:
    u, s, vt = np.linalg.svd(c2w[:3, :3])
    if np.any(np.abs(s - 1.0) > 1e-3) or np.linalg.det(u @ vt) < 0:
        raise CameraError("camera-to-world rotation is not a proper rotation")
    out = c2w.copy()
    out[:3, :3] = u @ vt
    return out


def camera_from_c2w(c2w, width, height, fx, fy=None, cx=None, cy=None,
                    convention: str = "opengl", near=0.01, far=100.0, image_path=None) -> Camera:
    c2w = np.asarray(c2w, dtype=np.float64)
    if c2w.shape == (3, 4):
        c2w = np.vstack([c2w, [0, 0, 0, 1]])
    if c2w.shape != (4, 4) or not np.all(np.isfinite(c2w)):
        raise CameraError(f"camera-to-world matrix must be a finite 4x4, got shape {c2w.shape}")
    if abs(np.linalg.det(c2w)) < 1e-12:
        raise CameraError("camera-to-world matrix is not invertible")
    if convention == "opengl":
        c2w = c2w @ _GL_TO_CV
    elif convention != "opencv":
        raise CameraError(f"unknown axis convention {convention!r}")
    c2w = _orthonormalize(c2w)
    view = np.eye(4)
    view[:3, :3] = c2w[:3, :3].T
    view[:3, 3] = -c2w[:3, :3].T @ c2w[:3, 3]
    return Camera(view, int(width), int(height), fx, fx if fy is None else fy, cx, cy,
                  near=near, far=far, image_path=image_path)


def load_cameras(path: str | Path, convention: str = "opengl", width: int | None = None,
                 height: int | None = None, near: float = 0.01, far: float = 100.0) -> list[Camera]:
    """Read a transforms-style camera file (``camera_angle_x`` + per-frame ``transform_matrix``)."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CameraError(f"{path}: invalid JSON ({exc})") from exc
    frames = doc.get("frames")
    if not frames:
        raise CameraError(f"{path}: no 'frames' listed")
    width = int(doc.get("w", width or 0))
    height = int(doc.get("h", height or 0))
    if width < 2 or height < 2:
        raise CameraError(f"{path}: image size unknown; set 'w' and 'h'")
    if "fl_x" in doc:
        fx = float(doc["fl_x"])
    elif "camera_angle_x" in doc:
        fx = 0.5 * width / math.tan(0.5 * float(doc["camera_angle_x"]))
    else:
        raise CameraError(f"{path}: need 'camera_angle_x' or 'fl_x'")
    fy = float(doc.get("fl_y", fx))
    convention = doc.get("convention", convention)
    cams = []
    for k, fr in enumerate(frames):
        img = fr.get("file_path")
        if img is not None:
            img = str((path.parent / img).resolve())
            if not Path(img).suffix:
                img += ".png"
        try:
            cams.append(camera_from_c2w(fr["transform_matrix"], width, height, fx, fy,
                                        doc.get("cx"), doc.get("cy"), convention, near, far, img))
        except CameraError as exc:
            raise CameraError(f"{path}: frame {k}: {exc}") from exc
        except KeyError as exc:
            raise CameraError(f"{path}: frame {k} lacks 'transform_matrix'") from exc
    return cams


def save_cameras(path: str | Path, cameras: list[Camera], image_paths: list[str] | None = None) -> None:
    """Write cameras in the transforms layout with the internal (opencv) axis convention."""
    cam0 = cameras[0]
    frames = []
    for k, cam in enumerate(cameras):
        c2w = np.linalg.inv(cam.view)
        fr = {"transform_matrix": c2w.tolist()}
        if image_paths is not None:
            fr["file_path"] = image_paths[k]
        frames.append(fr)
    doc = {"w": cam0.width, "h": cam0.height, "fl_x": cam0.fx, "fl_y": cam0.fy,
           "convention": "opencv", "frames": frames}
    Path(path).write_text(json.dumps(doc, indent=1))


@dataclass
class SfMPointCloud:
    points: np.ndarray
    colors: np.ndarray
    camera_centers: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
        self.camera_centers = np.asarray(self.camera_centers, dtype=np.float64).reshape(-1, 3)
        if len(self.points) != len(self.colors):
            raise ValueError("points and colors differ in length")


def load_points(path: str | Path) -> SfMPointCloud:
    v = read_ply(path)
    for axis in "xyz":
        if axis not in v:
            raise PlyError(f"{path}: vertex element has no '{axis}' property")
    pts = np.stack([v["x"], v["y"], v["z"]], axis=1).astype(np.float64)
    if all(c in v for c in ("red", "green", "blue")):
        rgb = np.stack([v["red"], v["green"], v["blue"]], axis=1).astype(np.float64)
        if v["red"].dtype.kind in "iu":
            rgb /= 255.0
    else:
        rgb = np.full_like(pts, 0.5)
    return SfMPointCloud(pts, rgb)


def load_scene(points_path, cameras_path, convention: str = "opengl") -> tuple[SfMPointCloud, list[Camera]]:
    cams = load_cameras(cameras_path, convention=convention)
    cloud = load_points(points_path)
    cloud.camera_centers = np.array([c.center for c in cams])
    return cloud, cams


def nearest3_mean_distances(cloud) -> np.ndarray:
    """Mean distance from each point to its three nearest neighbours."""
    pts = cloud.points if isinstance(cloud, SfMPointCloud) else np.asarray(cloud, dtype=np.float64)
    if len(pts) < 4:
        raise InitializationError(f"need at least 4 points to initialise, got {len(pts)}")
    dist, _ = cKDTree(pts).query(pts, k=4)
    # column 0 is the point itself (or an exact duplicate, which has the same distance 0)
    return dist[:, 1:].mean(axis=1)


def atom_scale(d, percentile: float) -> float:
    """Nearest-rank percentile of the distance vector."""
    d = np.sort(np.asarray(d, dtype=np.float64).ravel())
    if d.size == 0:
        raise ValueError("atom_scale of an empty distance vector")
    if not 0 < percentile <= 100:
        raise ValueError(f"percentile must lie in (0, 100], got {percentile}")
    rank = math.ceil(percentile / 100.0 * d.size)
    return float(d[max(rank, 1) - 1])


def scene_radius(centers) -> float:
    c = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    if len(c) == 0:
        raise ValueError("scene_radius needs at least one camera centre")
    return float(np.linalg.norm(c - c.mean(axis=0), axis=1).max())


def init_gaussians(cloud: SfMPointCloud, d=None, sh_degree: int = 3, init_opacity: float = 0.1,
                   floor_scale: float | None = None) -> GaussianSet:
    """One isotropic Gaussian per SfM point, scale = mean distance to 3 neighbours.

    Zero distances (duplicate points) fall back to ``floor_scale``, which defaults
    to ``1e-7 * scene_radius`` of the cloud's cameras (or of the points if none).
    """
    if d is None:
        d = nearest3_mean_distances(cloud)
    n = len(cloud.points)
    if len(d) != n:
        raise InitializationError("distance vector does not match the cloud")
    if floor_scale is None:
        ref = cloud.camera_centers if len(cloud.camera_centers) > 1 else cloud.points
        floor_scale = 1e-7 * max(scene_radius(ref), 1.0)
    s = np.where(d > 0, d, floor_scale)
    k = (sh_degree + 1) ** 2
    sh = np.zeros((n, k, 3))
    sh[:, 0, :] = (cloud.colors - 0.5) / SH_C0
    quats = np.zeros((n, 4))
    quats[:, 0] = 1.0
    return GaussianSet(
        positions=cloud.points.copy(),
        quaternions=quats,
        log_scales=np.repeat(np.log(s)[:, None], 3, axis=1),
        opacities_raw=np.full(n, float(inverse_sigmoid(init_opacity))),
        sh=sh,
    )


__all__ = [
    "SH_C0", "InitializationError", "CameraError", "GaussianSet", "Camera", "SfMPointCloud",
    "camera_from_c2w", "load_cameras", "save_cameras", "load_points", "load_scene",
    "nearest3_mean_distances", "atom_scale", "scene_radius", "init_gaussians", "concat",
    "sigmoid", "inverse_sigmoid",
]
