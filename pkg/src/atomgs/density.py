"""Atomized Proliferation: prune, clone, split with a warm-up ramp, and atomisation."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .projection import build_covariance
from .scene import GaussianSet, concat, inverse_sigmoid, sigmoid

SPLIT_DIVISOR = 1.6
RESET_CEILING = 0.01


@dataclass
class DensityConfig:
    clone_grad_threshold: float = 0.002      # tau_c
    split_grad_threshold: float = 0.002      # tau_s (gradient threshold, not a scale)
    prune_opacity_threshold: float = 0.005   # epsilon
    atom_percentile: float = 1.0
    atomize_until: int = 7000                # t_a
    warmup_until: int = 7000                 # t_w
    final_proportion: float = 0.5            # p
    scale_cap: float = 0.1                   # prune when max scale > scale_cap * scene radius
    densify_interval: int = 100
    densify_from: int = 0
    densify_until: int = 15000
    opacity_reset_interval: int = 2000
    size_prune_from: int | None = None       # None: once the first opacity reset has happened

    def __post_init__(self):
        for name in ("clone_grad_threshold", "split_grad_threshold", "scale_cap"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.prune_opacity_threshold < 0:
            raise ValueError("prune_opacity_threshold must be non-negative")
        if self.atomize_until < 1 or self.warmup_until < 1:
            raise ValueError("atomize_until and warmup_until must be >= 1")
        if not 0 < self.final_proportion <= 1:
            raise ValueError("final_proportion must lie in (0, 1]")


@dataclass
class DensityReport:
    iteration: int
    count: int
    pruned: int = 0
    cloned: int = 0
    split: int = 0
    atomized: int = 0


def atom_scale_at(iteration: int, s0: float, cfg: DensityConfig) -> float:
    """Geometric decay from ``s0`` to ``p * s0`` over ``atomize_until`` iterations, constant after."""
    frac = min(max(iteration, 0), cfg.atomize_until) / cfg.atomize_until
    return float(s0 * cfg.final_proportion ** frac)


def split_threshold(iteration: int, cfg: DensityConfig) -> float:
    return min(iteration / cfg.warmup_until * cfg.split_grad_threshold, cfg.split_grad_threshold)


def size_prune_active(iteration: int, cfg: DensityConfig) -> bool:
    start = cfg.opacity_reset_interval if cfg.size_prune_from is None else cfg.size_prune_from
    return iteration > start


def should_prune(opacity_raw, scales, cfg: DensityConfig, scene_radius: float, check_size: bool = True):
    """Low opacity, or (when ``check_size``) wider than ``scale_cap * scene_radius`` in world units."""
    alpha = sigmoid(np.asarray(opacity_raw, dtype=np.float64))
    prune = alpha < cfg.prune_opacity_threshold
    if check_size:
        prune |= np.max(np.asarray(scales), axis=-1) > cfg.scale_cap * scene_radius
    return prune


def should_clone(grad, cfg: DensityConfig):
    """Size-unconditional: any Gaussian with a large enough mean positional gradient is cloned."""
    return np.asarray(grad) >= cfg.clone_grad_threshold


def should_split(grad, scales, iteration: int, atom_scale: float, cfg: DensityConfig):
    big = np.max(np.asarray(scales), axis=-1) > atom_scale
    return (np.asarray(grad) >= split_threshold(iteration, cfg)) & big


def should_atomize(scales, iteration: int, atom_scale: float, cfg: DensityConfig):
    return (np.min(np.asarray(scales), axis=-1) <= atom_scale) & (iteration < cfg.atomize_until)


def split(scene: GaussianSet, idx, rng: np.random.Generator) -> GaussianSet:
    """Two children per selected Gaussian, positions drawn from the parent density, scales / 1.6."""
    idx = np.asarray(idx, dtype=np.int64)
    parents = scene.select(np.repeat(idx, 2))
    if len(idx) == 0:
        return parents
    cov = build_covariance(parents.quaternions, parents.scales).reshape(-1, 3, 3)
    chol = np.linalg.cholesky(cov + 1e-30 * np.eye(3))
    parents.positions = parents.positions + np.einsum("nij,nj->ni", chol, rng.standard_normal((len(cov), 3)))
    parents.log_scales = parents.log_scales - np.log(SPLIT_DIVISOR)
    parents.is_atom[:] = False
    parents.grad_accum[:] = 0.0
    parents.grad_count[:] = 0.0
    return parents


def atomize(scene: GaussianSet, idx, atom_scale: float) -> None:
    """Mark Gaussians as atoms and make them isotropic with scale ``atom_scale``."""
    scene.is_atom[idx] = True
    scene.log_scales[idx] = np.log(atom_scale)


def sync_atom_scales(scene: GaussianSet, atom_scale: float) -> None:
    """Atoms follow the scale schedule rather than the optimiser."""
    if scene.is_atom.any():
        scene.log_scales[scene.is_atom] = np.log(atom_scale)


def reset_opacity(scene: GaussianSet, ceiling: float = RESET_CEILING) -> None:
    scene.opacities_raw[:] = np.minimum(scene.opacities_raw, float(inverse_sigmoid(ceiling)))


def add_grad_stats(scene: GaussianSet, viewspace: np.ndarray, touched: np.ndarray) -> None:
    scene.grad_accum[touched] += viewspace[touched]
    scene.grad_count[touched] += 1.0


@dataclass
class StepResult:
    scene: GaussianSet
    report: DensityReport
    origin: np.ndarray   # index in the old set for each Gaussian in the new one
    fresh: np.ndarray    # True for Gaussians created in this step


def density_step(scene: GaussianSet, iteration: int, atom_scale: float, cfg: DensityConfig,
                 scene_radius: float, rng: np.random.Generator, atomization: bool = True) -> StepResult:
    """One pass of prune -> clone -> split -> atomise over a snapshot of the population.

    Children and clones created here are not examined until the next step. A
    pruned Gaussian takes no further action; a Gaussian that is split is
    replaced by its two children (a clone of it, if any, survives alongside).
    """
    n = scene.count
    grad = scene.grad_mean
    scales = scene.scales
    prune = should_prune(scene.opacities_raw, scales, cfg, scene_radius, size_prune_active(iteration, cfg))
    alive = ~prune
    clone = should_clone(grad, cfg) & alive
    # atoms sit exactly at S, so they never pass the strict size test; exp(log S) may round above S
    split_mask = should_split(grad, scales, iteration, atom_scale, cfg) & alive & ~scene.is_atom
    atom_mask = np.zeros(n, dtype=bool)
    if atomization:
        atom_mask = should_atomize(scales, iteration, atom_scale, cfg) & alive & ~split_mask & ~scene.is_atom

    clone_idx = np.nonzero(clone)[0]
    split_idx = np.nonzero(split_mask)[0]
    keep_idx = np.nonzero(alive & ~split_mask)[0]
    # clones copy the Gaussian as it was before this step's atomisation
    clones = scene.select(clone_idx)
    atomize(scene, np.nonzero(atom_mask)[0], atom_scale)
    children = split(scene, split_idx, rng)
    new = concat(concat(scene.select(keep_idx), clones), children)
    new.grad_accum[:] = 0.0
    new.grad_count[:] = 0.0
    origin = np.concatenate([keep_idx, clone_idx, np.repeat(split_idx, 2)])
    fresh = np.concatenate([np.zeros(len(keep_idx), bool), np.ones(len(clone_idx) + 2 * len(split_idx), bool)])
    report = DensityReport(iteration, new.count, int(prune.sum()), len(clone_idx), len(split_idx),
                           int(atom_mask.sum()))
    return StepResult(new, report, origin, fresh)


def write_proliferation_log(path: str | Path, reports: list[DensityReport]) -> None:
    """CSV of (iteration, count, pruned, cloned, split, atomized) per density step."""
    fields = ["iteration", "count", "pruned", "cloned", "split", "atomized"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for r in reports:
            w.writerow(asdict(r))
