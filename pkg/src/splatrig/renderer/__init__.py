"""Differentiable splat rendering: projection, SH color, tiled compositing and a
brute-force reference."""
from .camera import Camera
from .projection import Projected2D, ProjectedGrads, project, project_vjp
from .raster import RenderOutput, rasterize_backward, rasterize_forward, render, render_backward
from .reference import render_reference
from .settings import TILE, RenderSettings
from .sh import eval_sh, eval_sh_vjp, sh_basis

__all__ = [
    "Camera", "Projected2D", "ProjectedGrads", "RenderOutput", "RenderSettings", "TILE",
    "eval_sh", "eval_sh_vjp", "project", "project_vjp", "rasterize_backward",
    "rasterize_forward", "render", "render_backward", "render_reference", "sh_basis",
]
