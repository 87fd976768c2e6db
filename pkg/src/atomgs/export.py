"""Oriented point-cloud fusion, PLY export of clouds and Gaussian sets, and evaluation metrics."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .geometry import normal_map, unproject_depth
from .plyio import PlyError, read_ply, write_ply
from .rasterizer import RenderSettings, render
from .scene import Camera, GaussianSet

PSNR_CAP = 100.0


@dataclass
class OrientedPointCloud:
    positions: np.ndarray
    normals: np.ndarray
    colors: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
        self.colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
        if not len(self.positions) == len(self.normals) == len(self.colors):
            raise ValueError("positions, normals and colors differ in length")

    def __len__(self):
        return len(self.positions)


class EmptyCloudError(ValueError):
    """No pixel of any view passed the fusion validity test."""


def view_points(scene: GaussianSet, cam: Camera, settings: RenderSettings | None = None,
                min_accum: float = 0.5) -> OrientedPointCloud:
    """Unprojected median-depth points of one view with camera-facing normals and rendered colours."""
    out = render(scene, cam, settings)
    pos, valid = unproject_depth(out.median_depth, cam)
    valid &= out.accum >= min_accum
    normals, ok = normal_map(pos, valid, cam.center)
    keep = valid & ok
    return OrientedPointCloud(pos[keep], normals[keep], np.clip(out.rgb[keep], 0.0, 1.0))


def voxel_decimate(cloud: OrientedPointCloud, cell: float) -> OrientedPointCloud:
    """Average the points falling into each cubic cell; normals are renormalised."""
    if cell <= 0:
        raise ValueError("voxel cell size must be positive")
    if len(cloud) == 0:
        return cloud
    keys = np.floor(cloud.positions / cell).astype(np.int64)
    _, inv, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inv = inv.ravel()

    def mean(a):
        out = np.zeros((len(counts), 3))
        np.add.at(out, inv, a)
        return out / counts[:, None]

    n = mean(cloud.normals)
    norm = np.linalg.norm(n, axis=1)
    ok = norm > 1e-12  # opposite normals can cancel; drop those cells
    return OrientedPointCloud(mean(cloud.positions)[ok], n[ok] / norm[ok, None], mean(cloud.colors)[ok])


def fuse_views(scene: GaussianSet, cameras: list[Camera], settings: RenderSettings | None = None,
               min_accum: float = 0.5, voxel_size: float | None = None) -> OrientedPointCloud:
    """Concatenate the per-view oriented clouds, optionally voxel-decimated."""
    parts = [view_points(scene, cam, settings, min_accum) for cam in cameras]
    cloud = OrientedPointCloud(
        np.concatenate([p.positions for p in parts]) if parts else np.zeros((0, 3)),
        np.concatenate([p.normals for p in parts]) if parts else np.zeros((0, 3)),
        np.concatenate([p.colors for p in parts]) if parts else np.zeros((0, 3)),
    )
    if len(cloud) == 0:
        raise EmptyCloudError("no pixel in any view has a valid depth and normal")
    if voxel_size:
        cloud = voxel_decimate(cloud, voxel_size)
    return cloud


def _splat_props(scene: GaussianSet) -> dict[str, np.ndarray]:
    f4 = np.float32
    props = {k: scene.positions[:, i].astype(f4) for i, k in enumerate("xyz")}
    for k in ("nx", "ny", "nz"):
        props[k] = np.zeros(scene.count, f4)
    for c in range(3):
        props[f"f_dc_{c}"] = scene.sh[:, 0, c].astype(f4)
    # higher-order coefficients are stored channel-major, as splat viewers expect
    rest = scene.sh[:, 1:, :].transpose(0, 2, 1).reshape(scene.count, 3 * (scene.sh.shape[1] - 1))
    for j in range(rest.shape[1]):
        props[f"f_rest_{j}"] = rest[:, j].astype(f4)
    props["opacity"] = scene.opacities_raw.astype(f4)
    for j in range(3):
        props[f"scale_{j}"] = scene.log_scales[:, j].astype(f4)
    for j in range(4):
        props[f"rot_{j}"] = scene.quaternions[:, j].astype(f4)
    return props


def export_ply(obj, path: str | Path) -> None:
    """Binary PLY of an :class:`OrientedPointCloud` or a :class:`GaussianSet` (splat layout)."""
    if isinstance(obj, GaussianSet):
        write_ply(path, _splat_props(obj))
        return
    f4 = np.float32
    rgb = np.round(np.clip(obj.colors, 0.0, 1.0) * 255.0).astype(np.uint8)
    props = {k: obj.positions[:, i].astype(f4) for i, k in enumerate("xyz")}
    props.update({k: obj.normals[:, i].astype(f4) for i, k in enumerate(("nx", "ny", "nz"))})
    props.update({k: rgb[:, i] for i, k in enumerate(("red", "green", "blue"))})
    write_ply(path, props)


def load_gaussians_ply(path: str | Path) -> GaussianSet:
    """Inverse of ``export_ply`` for Gaussian sets."""
    v = read_ply(path)
    need = ["x", "y", "z", "f_dc_0", "opacity", "scale_0", "rot_0"]
    missing = [k for k in need if k not in v]
    if missing:
        raise PlyError(f"{path}: not a splat PLY, missing {missing}")
    n = len(v["x"])
    n_rest = sum(1 for k in v if k.startswith("f_rest_"))
    if n_rest % 3:
        raise PlyError(f"{path}: {n_rest} f_rest properties is not a multiple of 3")
    sh = np.zeros((n, 1 + n_rest // 3, 3))
    sh[:, 0] = np.stack([v[f"f_dc_{c}"] for c in range(3)], axis=1)
    if n_rest:
        rest = np.stack([v[f"f_rest_{j}"] for j in range(n_rest)], axis=1)
        sh[:, 1:] = rest.reshape(n, 3, n_rest // 3).transpose(0, 2, 1)
    return GaussianSet(
        positions=np.stack([v["x"], v["y"], v["z"]], axis=1),
        quaternions=np.stack([v[f"rot_{j}"] for j in range(4)], axis=1),
        log_scales=np.stack([v[f"scale_{j}"] for j in range(3)], axis=1),
        opacities_raw=v["opacity"],
        sh=sh,
    )


def save_checkpoint(path: str | Path, scene: GaussianSet, state: dict | None = None) -> Path:
    """Splat PLY plus a JSON sidecar (same stem) holding atom flags and trainer state."""
    path = Path(path)
    export_ply(scene, path)
    side = {"is_atom": scene.is_atom.astype(int).tolist(), **(state or {})}
    sidecar = path.with_suffix(".json")
    sidecar.write_text(json.dumps(side, sort_keys=True))
    return sidecar


def load_checkpoint(path: str | Path) -> tuple[GaussianSet, dict]:
    path = Path(path)
    scene = load_gaussians_ply(path)
    sidecar = path.with_suffix(".json")
    state = {}
    if sidecar.exists():
        state = json.loads(sidecar.read_text())
        flags = state.pop("is_atom", None)
        if flags is not None:
            if len(flags) != scene.count:
                raise ValueError(f"{sidecar}: {len(flags)} atom flags for {scene.count} Gaussians")
            scene.is_atom = np.asarray(flags, dtype=bool)
    return scene, state


def load_point_cloud(path: str | Path) -> np.ndarray:
    v = read_ply(path)
    try:
        return np.stack([v["x"], v["y"], v["z"]], axis=1).astype(np.float64)
    except KeyError as exc:
        raise PlyError(f"{path}: vertex element lacks {exc}") from None


def psnr(a, b) -> float:
    """10 log10(1 / MSE) for images in [0, 1]; identical images give +inf."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    return float("inf") if mse == 0 else float(10.0 * np.log10(1.0 / mse))


def capped_psnr(a, b) -> float:
    return min(psnr(a, b), PSNR_CAP)


def chamfer_distance(a, b) -> float:
    """Symmetric mean nearest-neighbour distance between two point sets."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 3)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("chamfer distance of an empty point set")
    _, ia = cKDTree(b).query(a)
    _, ib = cKDTree(a).query(b)
    # distances recomputed from the matched pairs so they agree with a direct evaluation
    da = np.sqrt(np.sum((a - b[ia]) ** 2, axis=1))
    db = np.sqrt(np.sum((b - a[ib]) ** 2, axis=1))
    return float(0.5 * (da.mean() + db.mean()))
