"""Tile-based alpha compositing of projected Gaussians and its analytic backward pass.

Every contributor list is a slice of one global ``(depth, index)`` sort, so the
output does not depend on storage order or on how tiles are scheduled.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import sh as shmod
from ._kernels import backward_tile, forward_tile
from .projection import DILATION, NEAR_PLANE, build_covariance, covariance_backward, project, project_backward
from .scene import Camera, GaussianSet, sigmoid

TILE = 16
T_MIN = 1e-4
ALPHA_MAX = 0.999


class UsageError(RuntimeError):
    """Raised when the backward pass is called without a forward cache."""


@dataclass
class RenderSettings:
    background: tuple = (0.0, 0.0, 0.0)
    background_depth: float = 0.0
    tile: int = TILE
    terminate: float = T_MIN   # set to 0 to composite every contributor
    alpha_max: float = ALPHA_MAX
    near: float = NEAR_PLANE
    dilation: float = DILATION
    normalize_depth: bool = False
    num_threads: int = 1


@dataclass
class RenderOutput:
    rgb: np.ndarray           # (H, W, 3)
    accum: np.ndarray         # (H, W)
    mean_depth: np.ndarray    # (H, W)
    median_depth: np.ndarray  # (H, W)
    tile_lists: list = field(repr=False, default_factory=list)
    cache: object = field(repr=False, default=None)

    @property
    def shape(self):
        return self.accum.shape


@dataclass
class Gradients:
    positions: np.ndarray
    quaternions: np.ndarray
    log_scales: np.ndarray
    opacities_raw: np.ndarray
    sh: np.ndarray
    means2d: np.ndarray
    viewspace: np.ndarray  # norm of the positional gradient in normalised screen units
    touched: np.ndarray    # Gaussians that overlapped this view

    def as_dict(self) -> dict[str, np.ndarray]:
        return {"positions": self.positions, "quaternions": self.quaternions,
                "log_scales": self.log_scales, "opacities_raw": self.opacities_raw, "sh": self.sh}


def evaluate_gaussian_2d(x, mean2d, conic) -> np.ndarray:
    """exp(-1/2 (x - mu)^T Sigma'^-1 (x - mu)) with the conic given as (a, b, c)."""
    x = np.asarray(x, dtype=np.float64)
    d = x - np.asarray(mean2d, dtype=np.float64)
    a, b, c = np.asarray(conic, dtype=np.float64).T
    dx, dy = d[..., 0], d[..., 1]
    return np.exp(-0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy)


@dataclass
class _Tile:
    rows: slice
    cols: slice
    ids: np.ndarray       # global Gaussian indices in compositing order
    px: np.ndarray
    py: np.ndarray
    t_final: np.ndarray = None   # transmittance left after the last composited contributor
    used: np.ndarray = None      # contributors composited per pixel before early termination


def composite(alpha: np.ndarray, features: np.ndarray, depth: np.ndarray, terminate: float = T_MIN):
    """Front-to-back compositing of per-pixel contributor opacities ``alpha`` (P, n).

    ``features`` is (n, C); ``depth`` is (n,). Returns weights, transmittance
    before each contributor, the active mask, final transmittance, feature sum,
    and the index of the median-depth contributor (-1 where never crossed).
    """
    one_m = 1.0 - alpha
    t_incl = np.cumprod(one_m, axis=1)
    T = np.empty_like(alpha)
    T[:, :1] = 1.0
    T[:, 1:] = t_incl[:, :-1]
    active = T >= terminate
    w = alpha * T * active
    t_final = np.where(active, one_m, 1.0).prod(axis=1) if alpha.shape[1] else np.ones(len(alpha))
    crossed = active & (t_incl <= 0.5)
    first = np.argmax(crossed, axis=1) if alpha.shape[1] else np.zeros(len(alpha), dtype=np.int64)
    med = np.where(crossed.any(axis=1), first, -1)
    return w, T, active, t_final, w @ features, med


def composite_pixel(alphas, colors, depths, background=(0.0, 0.0, 0.0), background_depth=0.0,
                    terminate: float = T_MIN):
    """Composite one pixel's depth-sorted contributors; ``alphas`` are the alpha*G products.

    Returns ``(rgb, A, D_mean, D_median, weights)``.
    """
    alphas = np.asarray(alphas, dtype=np.float64)[None, :]
    colors = np.asarray(colors, dtype=np.float64).reshape(-1, 3)
    depths = np.asarray(depths, dtype=np.float64)
    feats = np.concatenate([colors, np.ones((len(depths), 1)), depths[:, None]], axis=1)
    w, _, _, t_final, acc, med = composite(alphas, feats, depths, terminate)
    rgb = acc[0, :3] + t_final[0] * np.asarray(background, dtype=np.float64)
    median = depths[med[0]] if med[0] >= 0 else background_depth
    return rgb, acc[0, 3], acc[0, 4], median, w[0]


def _bin(means2d, radius, order, width, height, tile):
    """Per-tile contributor lists, each a subsequence of the global ``order``."""
    u, v, r = means2d[order, 0], means2d[order, 1], radius[order]
    ntx = -(-width // tile)
    nty = -(-height // tile)
    x0 = np.floor((u - r) / tile).astype(np.int64)
    x1 = np.floor((u + r) / tile).astype(np.int64)
    y0 = np.floor((v - r) / tile).astype(np.int64)
    y1 = np.floor((v + r) / tile).astype(np.int64)
    tiles = []
    for ty in range(nty):
        ys = ty * tile
        rows = slice(ys, min(ys + tile, height))
        ymask = (y0 <= ty) & (y1 >= ty)
        for tx in range(ntx):
            xs = tx * tile
            cols = slice(xs, min(xs + tile, width))
            ids = order[ymask & (x0 <= tx) & (x1 >= tx)]
            gy, gx = np.mgrid[rows, cols]
            tiles.append(_Tile(rows, cols, ids, gx.ravel().astype(np.float64), gy.ravel().astype(np.float64)))
    return tiles


def render(scene: GaussianSet, cam: Camera, settings: RenderSettings | None = None, **overrides) -> RenderOutput:
    """Render RGB, accumulation, mean-depth and median-depth maps."""
    st = settings or RenderSettings()
    if overrides:
        st = RenderSettings(**{**st.__dict__, **overrides})
    H, W = cam.height, cam.width
    bg = np.asarray(st.background, dtype=np.float64)

    n = scene.count
    if n:
        cov3d = build_covariance(scene.quaternions, scene.scales).reshape(n, 3, 3)
        proj = project(scene.positions, cov3d, cam, near=st.near, dilation=st.dilation)
        colors, color_cache = shmod.eval_colors(scene.sh, scene.positions, cam.center)
    else:
        proj = project(np.zeros((0, 3)), np.zeros((0, 3, 3)), cam)
        colors, color_cache = np.zeros((0, 3)), None
    opac = sigmoid(scene.opacities_raw)
    u, v, r = proj.means2d[:, 0], proj.means2d[:, 1], proj.radius
    onscreen = proj.visible & (u + r >= 0) & (u - r <= W - 1) & (v + r >= 0) & (v - r <= H - 1)
    idx = np.nonzero(onscreen)[0]
    order = idx[np.lexsort((idx, proj.depth[idx]))]
    tiles = _bin(proj.means2d, proj.radius, order, W, H, st.tile)

    rgb = np.empty((H, W, 3))
    accum = np.empty((H, W))
    mean_d = np.empty((H, W))
    median_d = np.empty((H, W))
    depth = proj.depth
    feats = np.concatenate([colors, np.ones((n, 1)), depth[:, None]], axis=1)

    def run(tile: _Tile):
        ids = tile.ids
        acc, t_final, med, used = forward_tile(tile.px, tile.py, ids, proj.means2d, proj.conic, opac, feats,
                                               st.alpha_max, st.terminate)
        tile.t_final, tile.used = t_final, used
        shape = (tile.rows.stop - tile.rows.start, tile.cols.stop - tile.cols.start)
        rgb[tile.rows, tile.cols] = (acc[:, :3] + t_final[:, None] * bg).reshape(*shape, 3)
        accum[tile.rows, tile.cols] = acc[:, 3].reshape(shape)
        md = acc[:, 4]
        if st.normalize_depth:
            md = np.where(acc[:, 3] > 0, md / np.where(acc[:, 3] > 0, acc[:, 3], 1.0), 0.0)
        mean_d[tile.rows, tile.cols] = md.reshape(shape)
        zmed = depth[ids][np.maximum(med, 0)] if len(ids) else np.zeros(len(med))
        median_d[tile.rows, tile.cols] = np.where(med >= 0, zmed, st.background_depth).reshape(shape)

    _for_tiles(run, tiles, st.num_threads)
    cache = dict(scene=scene, cam=cam, settings=st, proj=proj, colors=colors,
                 color_cache=color_cache, opac=opac, accum=accum, mean_depth=mean_d)
    return RenderOutput(rgb, accum, mean_d, median_d, tiles, cache)


def _for_tiles(fn, tiles, num_threads):
    if num_threads > 1 and len(tiles) > 1:
        with ThreadPoolExecutor(num_threads) as pool:
            return list(pool.map(fn, tiles))
    return [fn(t) for t in tiles]


def render_backward(out: RenderOutput, grad_rgb=None, grad_accum=None, grad_mean_depth=None) -> Gradients:
    """Per-Gaussian parameter gradients from pixel-space gradient maps.

    The median-depth map is a discrete selection and receives no gradient.
    """
    if out.cache is None:
        raise UsageError("render_backward needs the cache of a forward render()")
    cc = out.cache
    scene, cam, st, proj = cc["scene"], cc["cam"], cc["settings"], cc["proj"]
    H, W = out.accum.shape
    n = scene.count
    gC = np.zeros((H, W, 3)) if grad_rgb is None else np.asarray(grad_rgb, dtype=np.float64)
    gA = np.zeros((H, W)) if grad_accum is None else np.asarray(grad_accum, dtype=np.float64)
    gD = np.zeros((H, W)) if grad_mean_depth is None else np.asarray(grad_mean_depth, dtype=np.float64)
    bg = np.asarray(st.background, dtype=np.float64)
    colors, opac, depth = cc["colors"], cc["opac"], proj.depth
    if st.normalize_depth:
        A = cc["accum"]
        safe = np.where(A > 0, A, 1.0)
        gDn = np.where(A > 0, gD / safe, 0.0)
        # D = sum w z / A  =>  dD/dw_i = (z_i - D) / A
        gA = gA - gDn * cc["mean_depth"]
        gD = gDn

    def run(tile: _Tile):
        ids = tile.ids
        if len(ids) == 0:
            return None
        gm, gq, go, gcol, gz = backward_tile(
            tile.px, tile.py, ids, proj.means2d, proj.conic, opac, colors, depth, st.alpha_max,
            np.ascontiguousarray(gC[tile.rows, tile.cols].reshape(-1, 3)),
            gA[tile.rows, tile.cols].ravel(), gD[tile.rows, tile.cols].ravel(), bg, tile.t_final, tile.used)
        return ids, gm, gq, go, gcol, gz

    g_mean2d = np.zeros((n, 2))
    g_conic = np.zeros((n, 3))
    g_opac = np.zeros(n)
    g_col = np.zeros((n, 3))
    g_z = np.zeros(n)
    # fixed-order reduction of per-tile partials keeps the sums deterministic
    for part in _for_tiles(run, out.tile_lists, st.num_threads):
        if part is None:
            continue
        ids, gm, gq, go, gcol, gz = part
        g_mean2d[ids] += gm
        g_conic[ids] += gq
        g_opac[ids] += go
        g_col[ids] += gcol
        g_z[ids] += gz

    touched = np.zeros(n, dtype=bool)
    for t in out.tile_lists:
        touched[t.ids] = True
    if n == 0:
        z0 = np.zeros((0,))
        return Gradients(np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)), z0,
                         np.zeros_like(scene.sh), np.zeros((0, 2)), z0, touched)

    g_pos, g_cov3d = project_backward(proj, cam, g_means2d=g_mean2d, g_conic=g_conic, g_depth=g_z)
    g_quat, g_logs = covariance_backward(scene.quaternions, scene.log_scales, g_cov3d)
    g_sh, g_pos_sh = shmod.eval_colors_backward(g_col, cc["color_cache"])
    ndc = np.array([(W - 1) / 2.0, (H - 1) / 2.0])
    return Gradients(
        positions=g_pos + g_pos_sh,
        quaternions=g_quat,
        log_scales=g_logs,
        opacities_raw=g_opac * opac * (1.0 - opac),
        sh=g_sh,
        means2d=g_mean2d,
        viewspace=np.linalg.norm(g_mean2d * ndc, axis=1),
        touched=touched,
    )
