"""Photometric and geometric objectives with analytic gradients w.r.t. the rendered maps."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

from .geometry import GeometryMaps, edge_map, geometry_backward, geometry_maps

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
WIN = 11
SIGMA = 1.5
C1 = 0.01 ** 2
C2 = 0.03 ** 2


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def l1_loss(rendered, target):
    """Mean absolute error and its (sub)gradient."""
    x, y = _check_pair(rendered, target)
    diff = x - y
    return float(np.abs(diff).mean()), np.sign(diff) / diff.size


def _window() -> np.ndarray:
    k = np.arange(WIN) - WIN // 2
    w = np.exp(-(k ** 2) / (2 * SIGMA ** 2))
    return w / w.sum()


_W = _window()


def _filt(x):
    """Separable Gaussian filter, 'valid' region only; x is (H, W, C)."""
    h = WIN // 2
    x = correlate1d(x, _W, axis=0, mode="constant")[h:-h]
    return correlate1d(x, _W, axis=1, mode="constant")[:, h:-h]


def _filt_adjoint(g):
    h = WIN // 2
    g = correlate1d(np.pad(g, ((0, 0), (h, h), (0, 0))), _W[::-1], axis=1, mode="constant")
    return correlate1d(np.pad(g, ((h, h), (0, 0), (0, 0))), _W[::-1], axis=0, mode="constant")


def _as3(img):
    img = np.asarray(img, dtype=np.float64)
    return img[..., None] if img.ndim == 2 else img


class _SSIMTerms:
    """Per-pixel SSIM and contrast-structure maps for one scale, with their adjoint."""

    def __init__(self, x, y):
        if min(x.shape[:2]) < WIN:
            raise ValueError(f"image {x.shape[:2]} is smaller than the {WIN}x{WIN} window")
        self.x, self.y = x, y
        mx, my = _filt(x), _filt(y)
        sxx = _filt(x * x) - mx * mx
        syy = _filt(y * y) - my * my
        sxy = _filt(x * y) - mx * my
        self.a1 = mx * mx + my * my + C1
        self.b1 = sxx + syy + C2
        self.lum = (2 * mx * my + C1) / self.a1
        self.cs = (2 * sxy + C2) / self.b1
        self.mx, self.my = mx, my
        self.npix = mx.shape[0] * mx.shape[1]

    def ssim(self):
        return (self.lum * self.cs).mean(axis=(0, 1))

    def cs_mean(self):
        return self.cs.mean(axis=(0, 1))

    def backward(self, g_ssim=0.0, g_cs=0.0):
        """Gradient w.r.t. x from per-channel gradients of the mean SSIM / mean CS."""
        g_s = np.broadcast_to(np.asarray(g_ssim, dtype=np.float64), self.cs.shape[2:]) / self.npix
        g_c = np.broadcast_to(np.asarray(g_cs, dtype=np.float64), self.cs.shape[2:]) / self.npix
        g_lum = g_s * self.cs
        g_csm = g_s * self.lum + g_c
        g_mx = g_lum * (2 * self.my - 2 * self.mx * self.lum) / self.a1
        g_sxx = -g_csm * self.cs / self.b1
        g_sxy = g_csm * 2 / self.b1
        g_fx = g_mx - 2 * self.mx * g_sxx - self.my * g_sxy
        return _filt_adjoint(g_fx) + 2 * self.x * _filt_adjoint(g_sxx) + self.y * _filt_adjoint(g_sxy)


def ssim(rendered, target):
    """Mean SSIM (11x11 Gaussian window, sigma 1.5) averaged over channels, and its gradient."""
    x, y = _check_pair(rendered, target)
    terms = _SSIMTerms(_as3(x), _as3(y))
    per_ch = terms.ssim()
    grad = terms.backward(g_ssim=np.full(per_ch.shape, 1.0 / per_ch.size))
    return float(per_ch.mean()), grad.reshape(x.shape)


def dssim_loss(rendered, target):
    value, grad = ssim(rendered, target)
    return (1.0 - value) / 2.0, -grad / 2.0


def _pool(x):
    h, w = x.shape[0] // 2 * 2, x.shape[1] // 2 * 2
    x = x[:h, :w]
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])


def _pool_adjoint(g, shape):
    out = np.zeros(shape)
    q = 0.25 * g
    h, w = g.shape[0] * 2, g.shape[1] * 2
    for di in (0, 1):
        for dj in (0, 1):
            out[di:h:2, dj:w:2] = q
    return out


def ms_ssim_scales(height: int, width: int, max_scales: int = len(MS_SSIM_WEIGHTS)) -> int:
    """Number of scales whose coarsest level still fits the SSIM window."""
    m, h, w = 0, height, width
    while m < max_scales and min(h, w) >= WIN:
        m += 1
        h, w = h // 2, w // 2
    if m == 0:
        raise ValueError(f"image {height}x{width} is smaller than the {WIN}x{WIN} window")
    return m


def ms_ssim(rendered, target):
    """Multi-scale SSIM and its gradient; scales that would drop below the window are skipped
    and the remaining weights renormalised to sum to one."""
    x, y = _check_pair(rendered, target)
    shape = x.shape
    x, y = _as3(x), _as3(y)
    m = ms_ssim_scales(*x.shape[:2])
    weights = np.array(MS_SSIM_WEIGHTS[:m])
    weights /= weights.sum()
    levels, shapes = [], []
    for j in range(m):
        levels.append(_SSIMTerms(x, y))
        shapes.append(x.shape)
        if j < m - 1:
            x, y = _pool(x), _pool(y)
    vals = [lv.cs_mean() for lv in levels[:-1]] + [levels[-1].ssim()]
    vals = [np.maximum(v, 0.0) for v in vals]
    per_ch = np.prod([v ** wt for v, wt in zip(vals, weights)], axis=0)
    value = float(per_ch.mean())

    nch = per_ch.size
    grad = None
    for j in reversed(range(m)):
        with np.errstate(divide="ignore", invalid="ignore"):
            g_v = np.where(vals[j] > 0, per_ch * weights[j] / vals[j], 0.0) / nch
        if j == m - 1:
            g = levels[j].backward(g_ssim=g_v)
        else:
            g = levels[j].backward(g_cs=g_v)
        if grad is not None:
            g = g + _pool_adjoint(grad, shapes[j])
        grad = g
    return value, grad.reshape(shape)


def ms_ssim_loss(rendered, target):
    value, grad = ms_ssim(rendered, target)
    return 1.0 - value, -grad


def omega(edge, q_tol: int = 2):
    """Edge weight (x - 1)^q: 1 on flat image regions, 0 on the strongest edges."""
    return (np.asarray(edge, dtype=np.float64) - 1.0) ** q_tol


def edge_aware_normal_loss(curvature, edge, q_tol: int = 2, valid=None):
    """Mean over valid pixels of curvature * omega(edge); gradient is w.r.t. the curvature map."""
    curv, edge = _check_pair(curvature, edge)
    _check_q(q_tol)
    if valid is None:
        valid = np.ones(curv.shape, dtype=bool)
    count = int(valid.sum())
    if count == 0:
        return 0.0, np.zeros_like(curv)
    wmap = np.where(valid, omega(edge, q_tol), 0.0)
    return float((curv * wmap).sum() / count), wmap / count


def _check_q(q_tol):
    if int(q_tol) != q_tol or q_tol < 2 or q_tol % 2:
        raise ValueError(f"q_tol must be a positive even integer, got {q_tol}")


@dataclass
class LossWeights:
    lambda_ms_ssim: float = 0.1
    lambda_normal: float = 0.1
    q_tol: int = 2
    use_ms_ssim: bool = True   # False selects the single-scale D-SSIM term
    min_accum: float = 0.5     # geometry validity cut on the accumulation map

    def __post_init__(self):
        _check_q(self.q_tol)
        if not 0.0 <= self.lambda_ms_ssim <= 1.0:
            raise ValueError("lambda_ms_ssim must lie in [0, 1]")
        if self.lambda_normal < 0:
            raise ValueError("lambda_normal must be non-negative")


@dataclass
class LossResult:
    total: float
    parts: dict
    grad_rgb: np.ndarray
    grad_mean_depth: np.ndarray
    geometry: GeometryMaps | None = field(default=None, repr=False)


def composite_loss(out, target, cam, weights: LossWeights | None = None, edge=None) -> LossResult:
    """(1 - l_ms) L1 + l_ms L_ms-ssim + l_n L_normal, with gradients for the RGB and mean-depth maps.

    ``out`` is a :class:`~atomgs.rasterizer.RenderOutput`; ``edge`` may carry a
    precomputed edge map of ``target``.
    """
    wts = weights or LossWeights()
    target = np.asarray(target, dtype=np.float64)
    l1, g_l1 = l1_loss(out.rgb, target)
    if wts.use_ms_ssim:
        ls, g_ls = ms_ssim_loss(out.rgb, target)
        sname = "ms_ssim"
    else:
        ls, g_ls = dssim_loss(out.rgb, target)
        sname = "dssim"
    lam = wts.lambda_ms_ssim
    total = (1 - lam) * l1 + lam * ls
    grad_rgb = (1 - lam) * g_l1 + lam * g_ls
    parts = {"l1": l1, sname: ls}
    grad_depth = np.zeros_like(out.mean_depth)
    geo = None
    if wts.lambda_normal > 0:
        geo = geometry_maps(out.mean_depth, cam, accum=out.accum, min_accum=wts.min_accum, keep_cache=True)
        if edge is None:
            edge = edge_map(target)
        ln, g_curv = edge_aware_normal_loss(geo.curvature, edge, wts.q_tol, geo.valid)
        total += wts.lambda_normal * ln
        parts["normal"] = ln
        grad_depth = geometry_backward(geo, wts.lambda_normal * g_curv)
    else:
        parts["normal"] = 0.0
    return LossResult(float(total), parts, grad_rgb, grad_depth, geo)
