"""Optimisation loop: Adam per parameter group, density control, logging and checkpoints."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from .density import (DensityConfig, DensityReport, add_grad_stats, atom_scale_at, density_step,
                      reset_opacity, sync_atom_scales, write_proliferation_log)
from .export import capped_psnr, save_checkpoint
from .geometry import edge_map
from .losses import LossWeights, composite_loss
from .rasterizer import RenderSettings, render, render_backward
from .scene import Camera, GaussianSet, SfMPointCloud, atom_scale, init_gaussians, nearest3_mean_distances, scene_radius

log = logging.getLogger(__name__)

GROUPS = ("positions", "quaternions", "log_scales", "opacities_raw", "sh")
ABLATIONS = ("atomization", "normal", "ms-ssim")


@dataclass
class TrainConfig:
    iterations: int = 3000
    lr_position: float = 1.6e-4
    lr_position_final: float = 1.6e-6   # reached log-linearly at the last iteration
    position_lr_scale: bool = True      # multiply position rates by the scene radius
    lr_quaternion: float = 1e-3
    lr_scale: float = 5e-3
    lr_opacity: float = 5e-2
    lr_sh: float = 2.5e-3
    sh_rest_factor: float = 1.0 / 20.0  # higher SH orders learn at lr_sh * factor
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-15
    seed: int = 0
    sh_degree: int = 3
    init_opacity: float = 0.1
    background: tuple = (0.0, 0.0, 0.0)
    num_threads: int = 1
    log_interval: int = 100
    checkpoint_interval: int = 0        # 0 disables periodic checkpoints
    disable_atomization: bool = False
    disable_normal_loss: bool = False
    disable_ms_ssim: bool = False
    debug: bool = False
    loss: LossWeights = field(default_factory=LossWeights)
    density: DensityConfig = field(default_factory=DensityConfig)

    def __post_init__(self):
        if isinstance(self.loss, dict):
            self.loss = LossWeights(**self.loss)
        if isinstance(self.density, dict):
            self.density = DensityConfig(**self.density)
        self.background = tuple(float(c) for c in self.background)
        for f in fields(self):
            if f.name.startswith("lr_") and getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be non-negative")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.log_interval < 1:
            raise ValueError("log_interval must be >= 1")

    def ablate(self, what: str) -> "TrainConfig":
        """Switch off one mechanism by its ablation name."""
        if what not in ABLATIONS:
            raise ValueError(f"unknown ablation {what!r}; choose from {ABLATIONS}")
        name = {"atomization": "disable_atomization", "normal": "disable_normal_loss",
                "ms-ssim": "disable_ms_ssim"}[what]
        setattr(self, name, True)
        return self

    def effective_loss(self) -> LossWeights:
        w = asdict(self.loss)
        if self.disable_normal_loss:
            w["lambda_normal"] = 0.0
        if self.disable_ms_ssim:
            w["use_ms_ssim"] = False
        return LossWeights(**w)

    def to_dict(self) -> dict:
        return asdict(self)


def config_from_dict(doc: dict) -> TrainConfig:
    """Build a TrainConfig from a parsed TOML-style mapping; unknown keys are rejected."""
    known = {f.name for f in fields(TrainConfig)}
    doc = dict(doc)
    for key in doc:
        if key not in known:
            raise ValueError(f"unknown config key {key!r}")
    return TrainConfig(**doc)


def read_toml(path: str | Path) -> dict:
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def load_config(path: str | Path) -> TrainConfig:
    """TrainConfig from a TOML file; a ``[data]`` table, if present, is ignored here."""
    doc = read_toml(path)
    doc.pop("data", None)
    return config_from_dict(doc)


def dump_config(cfg: TrainConfig) -> str:
    """TOML text for ``cfg`` (top-level scalars, then [loss] and [density] tables)."""

    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, (tuple, list)):
            return "[" + ", ".join(fmt(x) for x in v) + "]"
        return repr(v)

    top, tables = [], []
    for k, v in asdict(cfg).items():
        if isinstance(v, dict):
            tables.append(f"\n[{k}]\n" + "\n".join(f"{kk} = {fmt(vv)}" for kk, vv in v.items()))
        else:
            top.append(f"{k} = {fmt(v)}")
    return "\n".join(top) + "\n" + "\n".join(tables) + "\n"


class Adam:
    """Adam over named arrays with per-group learning rates; rows can be masked out of an update."""

    def __init__(self, params: dict[str, np.ndarray], beta1=0.9, beta2=0.999, eps=1e-15):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lrs: dict[str, float],
             frozen: dict[str, np.ndarray] | None = None) -> None:
        """In-place update; rows flagged in ``frozen[name]`` keep both their value and moments."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1 - b1 ** self.t, 1 - b2 ** self.t
        for k, p in params.items():
            g = grads[k]
            m = b1 * self.m[k] + (1 - b1) * g
            v = b2 * self.v[k] + (1 - b2) * g * g
            upd = lrs[k] * (m / c1) / (np.sqrt(v / c2) + self.eps)
            mask = None if frozen is None else frozen.get(k)
            if mask is not None and mask.any():
                m[mask], v[mask], upd[mask] = self.m[k][mask], self.v[k][mask], 0.0
            self.m[k], self.v[k] = m, v
            p -= upd

    def remap(self, origin: np.ndarray, fresh: np.ndarray) -> None:
        """Carry moments through a density step: survivors keep theirs, new Gaussians start at zero."""
        for store in (self.m, self.v):
            for k, a in store.items():
                b = a[origin].copy()
                b[fresh] = 0.0
                store[k] = b

    def state(self) -> dict:
        return {"t": self.t, "m": {k: v.tolist() for k, v in self.m.items()},
                "v": {k: v.tolist() for k, v in self.v.items()}}


def position_lr(it: int, cfg: TrainConfig, radius: float) -> float:
    scale = radius if cfg.position_lr_scale else 1.0
    lo, hi = cfg.lr_position_final * scale, cfg.lr_position * scale
    if cfg.iterations <= 1 or hi == 0 or lo == 0:
        return hi
    frac = min(max(it - 1, 0) / (cfg.iterations - 1), 1.0)
    return float(np.exp((1 - frac) * np.log(hi) + frac * np.log(lo)))


def _param_lrs(it: int, cfg: TrainConfig, radius: float, n_sh: int) -> dict:
    sh_lr = np.full((1, n_sh, 1), cfg.lr_sh * cfg.sh_rest_factor)
    sh_lr[:, 0] = cfg.lr_sh
    return {"positions": position_lr(it, cfg, radius), "quaternions": cfg.lr_quaternion,
            "log_scales": cfg.lr_scale, "opacities_raw": cfg.lr_opacity, "sh": sh_lr}


def _stats(scene: GaussianSet) -> str:
    rows = []
    for k, a in scene.params().items():
        fin = np.isfinite(a)
        good = a[fin]
        rng = f"[{good.min():.4g}, {good.max():.4g}]" if good.size else "[]"
        rows.append(f"  {k}: shape={a.shape} non-finite={int((~fin).sum())} range={rng}")
    return "\n".join(rows)


@dataclass
class TrainResult:
    scene: GaussianSet
    metrics: list[dict]
    density: list[DensityReport]
    atom_scale0: float
    scene_radius: float
    atom_scale: float

    def write_metrics(self, path: str | Path) -> None:
        write_metrics_csv(path, self.metrics)

    def write_proliferation(self, path: str | Path) -> None:
        write_proliferation_log(path, self.density)


METRIC_FIELDS = ["iteration", "view", "loss", "l1", "ssim_term", "normal", "psnr", "count", "atoms", "atom_scale"]


def write_metrics_csv(path: str | Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_FIELDS)
        w.writeheader()
        w.writerows(rows)


def prepare(cloud: SfMPointCloud, cameras: list[Camera], cfg: TrainConfig):
    """Initial Gaussians, starting atom scale S0 and scene radius for an SfM reconstruction."""
    d = nearest3_mean_distances(cloud)
    radius = scene_radius([c.center for c in cameras])
    if len(cloud.camera_centers) == 0:
        cloud.camera_centers = np.array([c.center for c in cameras])
    scene = init_gaussians(cloud, d, sh_degree=cfg.sh_degree, init_opacity=cfg.init_opacity)
    return scene, atom_scale(d, cfg.density.atom_percentile), radius


def train(scene: GaussianSet, cameras: list[Camera], images: list[np.ndarray], cfg: TrainConfig,
          s0: float, radius: float, out_dir: str | Path | None = None,
          callback: Callable[[int, GaussianSet], None] | None = None) -> TrainResult:
    """Optimise ``scene`` against the posed ``images``; the input set is not modified.

    ``s0`` is the starting atom scale and ``radius`` the scene radius used by the
    size-based pruning rule and the position learning rate. ``callback(it, scene)``
    runs after every iteration (tests use it to watch invariants).
    """
    if len(cameras) == 0 or len(cameras) != len(images):
        raise ValueError("need at least one camera and exactly one image per camera")
    scene = scene.copy()
    dcfg = cfg.density
    weights = cfg.effective_loss()
    atomization = not cfg.disable_atomization
    settings = RenderSettings(background=cfg.background, num_threads=cfg.num_threads)
    rng = np.random.default_rng(cfg.seed)
    images = [np.asarray(im, dtype=np.float64) for im in images]
    edges = [edge_map(im) for im in images] if weights.lambda_normal > 0 else [None] * len(images)
    opt = Adam(scene.params(), cfg.beta1, cfg.beta2, cfg.eps)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    metrics: list[dict] = []
    reports: list[DensityReport] = []
    order: list[int] = []
    S = atom_scale_at(0, s0, dcfg)
    for it in range(1, cfg.iterations + 1):
        if not order:
            order = list(rng.permutation(len(cameras)))
        view = int(order.pop())
        cam = cameras[view]
        out = render(scene, cam, settings)
        res = composite_loss(out, images[view], cam, weights, edge=edges[view])
        if not np.isfinite(res.total):
            raise FloatingPointError(
                f"non-finite loss {res.total} at iteration {it}, view {view} "
                f"(parts {res.parts}, {scene.count} Gaussians)\n{_stats(scene)}")
        grads = render_backward(out, res.grad_rgb, None, res.grad_mean_depth)
        if it < dcfg.densify_until:
            add_grad_stats(scene, grads.viewspace, grads.touched)

        frozen = {"log_scales": scene.is_atom[:, None] & np.ones((1, 3), bool)}
        before = scene.log_scales[scene.is_atom].copy() if cfg.debug else None
        opt.step(scene.params(), grads.as_dict(), _param_lrs(it, cfg, radius, scene.sh.shape[1]), frozen)
        if cfg.debug:
            assert np.array_equal(before, scene.log_scales[scene.is_atom]), "optimiser moved an atom scale"

        S = atom_scale_at(it, s0, dcfg)
        sync_atom_scales(scene, S)
        if dcfg.densify_from < it < dcfg.densify_until and it % dcfg.densify_interval == 0:
            step = density_step(scene, it, S, dcfg, radius, rng, atomization=atomization)
            scene = step.scene
            opt.remap(step.origin, step.fresh)
            reports.append(step.report)
        if dcfg.opacity_reset_interval and it < dcfg.densify_until and it % dcfg.opacity_reset_interval == 0:
            reset_opacity(scene)
        if cfg.debug:
            scene.check(S)

        if it % cfg.log_interval == 0 or it == cfg.iterations:
            row = {"iteration": it, "view": view, "loss": res.total, "l1": res.parts["l1"],
                   "ssim_term": res.parts.get("ms_ssim", res.parts.get("dssim")),
                   "normal": res.parts["normal"], "psnr": capped_psnr(np.clip(out.rgb, 0, 1), images[view]),
                   "count": scene.count, "atoms": int(scene.is_atom.sum()), "atom_scale": S}
            metrics.append(row)
            log.info("it %d loss %.5f psnr %.2f count %d atoms %d", it, row["loss"], row["psnr"],
                     row["count"], row["atoms"])
        if out_dir is not None and cfg.checkpoint_interval and it % cfg.checkpoint_interval == 0:
            save_checkpoint(out_dir / f"checkpoint_{it:06d}.ply", scene,
                            _trainer_state(it, s0, radius, S, opt))
        if callback is not None:
            callback(it, scene)

    result = TrainResult(scene, metrics, reports, s0, radius, S)
    if out_dir is not None:
        save_checkpoint(out_dir / "final.ply", scene, _trainer_state(cfg.iterations, s0, radius, S, opt))
        result.write_metrics(out_dir / "metrics.csv")
        result.write_proliferation(out_dir / "proliferation.csv")
    return result


def _trainer_state(it, s0, radius, S, opt: Adam) -> dict:
    return {"iteration": it, "atom_scale0": s0, "atom_scale": S, "scene_radius": radius, "adam": opt.state()}

