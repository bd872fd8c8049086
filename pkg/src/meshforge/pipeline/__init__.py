"""Coarse-to-fine reconstruction runs, metrics, synthetic scenes and the CLI."""

from .config import OptimConfig, StageConfig, load_config, parse_config
from .metrics import chamfer, psnr
from .optimize import RunArtifacts, evaluate, initialize, optimize, render_view
from .synthetic import make_synthetic_scene

__all__ = [
    "OptimConfig",
    "RunArtifacts",
    "StageConfig",
    "chamfer",
    "evaluate",
    "initialize",
    "load_config",
    "make_synthetic_scene",
    "optimize",
    "parse_config",
    "psnr",
    "render_view",
]
