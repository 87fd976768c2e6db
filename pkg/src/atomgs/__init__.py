"""Gaussian splatting with atomized proliferation and edge-aware geometric regularisation, in NumPy."""

from .density import DensityConfig, density_step
from .export import OrientedPointCloud, chamfer_distance, export_ply, fuse_views, psnr
from .losses import LossWeights, composite_loss, ms_ssim, ssim
from .rasterizer import RenderSettings, render, render_backward
from .scene import Camera, GaussianSet, SfMPointCloud, init_gaussians, load_cameras, load_points
from .trainer import TrainConfig, train

__all__ = [
    "Camera", "DensityConfig", "GaussianSet", "LossWeights", "OrientedPointCloud", "RenderSettings",
    "SfMPointCloud", "TrainConfig", "chamfer_distance", "composite_loss", "density_step", "export_ply",
    "fuse_views", "init_gaussians", "load_cameras", "load_points", "ms_ssim", "psnr", "render",
    "render_backward", "ssim", "train",
]
