"""Compiled per-tile compositing loops (forward and backward).

Each call handles one tile: ``ids`` is the tile's contributor list in
compositing order and every per-Gaussian array is indexed globally.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# exp(POWER_FLOOR) ~ 1e-15: fainter contributions are treated as exactly zero
POWER_FLOOR = -34.5


@njit(cache=True, nogil=True)
def forward_tile(px, py, ids, means2d, conic, opac, feats, alpha_max, terminate):
    P = px.shape[0]
    n = ids.shape[0]
    C = feats.shape[1]
    acc = np.zeros((P, C))
    t_final = np.ones(P)
    med = np.full(P, -1, np.int64)
    used = np.zeros(P, np.int64)
    for p in range(P):
        T = 1.0
        k = 0
        while k < n:
            if T < terminate:
                break
            g = ids[k]
            dx = px[p] - means2d[g, 0]
            dy = py[p] - means2d[g, 1]
            power = -0.5 * (conic[g, 0] * dx * dx + conic[g, 2] * dy * dy) - conic[g, 1] * dx * dy
            k += 1
            if power < POWER_FLOOR:
                continue
            alpha = min(opac[g] * np.exp(power), alpha_max)
            w = alpha * T
            for c in range(C):
                acc[p, c] += w * feats[g, c]
            T = T * (1.0 - alpha)
            if med[p] < 0 and T <= 0.5:
                med[p] = k - 1
        t_final[p] = T
        used[p] = k
    return acc, t_final, med, used


@njit(cache=True, nogil=True)
def backward_tile(px, py, ids, means2d, conic, opac, colors, depth, alpha_max,
                  gc, ga, gd, bg, t_final, used):
    """Per-contributor partial gradients, indexed by position in ``ids``."""
    P = px.shape[0]
    n = ids.shape[0]
    g_mean = np.zeros((n, 2))
    g_conic = np.zeros((n, 3))
    g_opac = np.zeros(n)
    g_col = np.zeros((n, 3))
    g_z = np.zeros(n)
    Ts = np.empty(n)
    alphas = np.empty(n)
    Gs = np.empty(n)
    for p in range(P):
        m = used[p]
        if m == 0:
            continue
        # replay the forward pass to recover transmittance before each contributor
        T = 1.0
        for k in range(m):
            g = ids[k]
            dx = px[p] - means2d[g, 0]
            dy = py[p] - means2d[g, 1]
            power = -0.5 * (conic[g, 0] * dx * dx + conic[g, 2] * dy * dy) - conic[g, 1] * dx * dy
            G = np.exp(power) if power >= POWER_FLOOR else 0.0
            alpha = min(opac[g] * G, alpha_max)
            Ts[k] = T
            alphas[k] = alpha
            Gs[k] = G
            T = T * (1.0 - alpha)
        suffix = t_final[p] * (gc[p, 0] * bg[0] + gc[p, 1] * bg[1] + gc[p, 2] * bg[2])
        for k in range(m - 1, -1, -1):
            G = Gs[k]
            if G == 0.0:
                continue
            g = ids[k]
            alpha = alphas[k]
            w = alpha * Ts[k]
            gf = gc[p, 0] * colors[g, 0] + gc[p, 1] * colors[g, 1] + gc[p, 2] * colors[g, 2] + ga[p] + gd[p] * depth[g]
            g_alpha = Ts[k] * gf - suffix / (1.0 - alpha)
            suffix += w * gf
            for c in range(3):
                g_col[k, c] += w * gc[p, c]
            g_z[k] += w * gd[p]
            if opac[g] * G >= alpha_max:
                continue
            g_opac[k] += g_alpha * G
            g_power = g_alpha * opac[g] * G
            dx = px[p] - means2d[g, 0]
            dy = py[p] - means2d[g, 1]
            a = conic[g, 0]
            b = conic[g, 1]
            c_ = conic[g, 2]
            g_mean[k, 0] += g_power * (a * dx + b * dy)
            g_mean[k, 1] += g_power * (b * dx + c_ * dy)
            g_conic[k, 0] += -0.5 * g_power * dx * dx
            g_conic[k, 1] += -g_power * dx * dy
            g_conic[k, 2] += -0.5 * g_power * dy * dy
    return g_mean, g_conic, g_opac, g_col, g_z
