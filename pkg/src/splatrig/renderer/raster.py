"""Tile-based alpha compositing of projected splats, forward and backward."""
from __future__ import annotations

import os
from dataclasses import dataclass

import numba
import numpy as np

from ..errors import StateMissing
from ..splats import GlobalGaussians
from . import _kernels
from .camera import Camera
from .projection import Projected2D, ProjectedGrads, project, project_vjp
from .settings import TILE, RenderSettings

THREADS_ENV = "SPLATRIG_NUM_THREADS"
# contributors remembered per pixel for the backward pass; deeper pixels re-walk their tile
RECORD_DEPTH = 32


def configure_threads():
    # the bundled TBB is too old for numba; OpenMP is always present
    if "NUMBA_THREADING_LAYER" not in os.environ:
        numba.config.THREADING_LAYER = "omp"
    n = os.environ.get(THREADS_ENV)
    if n:
        numba.set_num_threads(min(int(n), numba.config.NUMBA_NUM_THREADS))


configure_threads()


@dataclass
class RasterState:
    proj: Projected2D
    tile_ranges: np.ndarray
    inst_splat: np.ndarray
    last: np.ndarray
    final_t64: np.ndarray
    tiles_x: int
    n_contrib: np.ndarray
    record: np.ndarray


@dataclass
class RenderOutput:
    image: np.ndarray             # (H, W, 3)
    final_transmittance: np.ndarray  # (H, W)
    n_contrib: np.ndarray         # (H, W) splats blended per pixel
    visible: np.ndarray           # (N,) contributed to at least one pixel
    camera: Camera
    settings: RenderSettings
    glob: GlobalGaussians | None = None
    state: RasterState | None = None
    # filled by the backward pass: per-splat d loss / d mean2d in pixels
    mean2d_grad: np.ndarray | None = None

    def release(self):
        """Drop the buffers the backward pass needs."""
        self.state = None


def bin_tiles(proj: Projected2D, cam: Camera):
    """Instance list sorted by (tile, depth) and each tile's [start, end) slice."""
    tiles_x = (cam.width + TILE - 1) // TILE
    tiles_y = (cam.height + TILE - 1) // TILE
    m = proj.mean2d.astype(np.float64)
    e = proj.box()
    x0 = np.clip(np.floor((m[:, 0] - e[:, 0]) / TILE).astype(np.int64), 0, tiles_x)
    x1 = np.clip(np.floor((m[:, 0] + e[:, 0]) / TILE).astype(np.int64) + 1, 0, tiles_x)
    y0 = np.clip(np.floor((m[:, 1] - e[:, 1]) / TILE).astype(np.int64), 0, tiles_y)
    y1 = np.clip(np.floor((m[:, 1] + e[:, 1]) / TILE).astype(np.int64) + 1, 0, tiles_y)
    wx = np.maximum(x1 - x0, 0)
    counts = wx * np.maximum(y1 - y0, 0)
    total = int(counts.sum())
    splat = np.repeat(np.arange(len(proj), dtype=np.int64), counts)
    k = np.arange(total, dtype=np.int64) - np.repeat(np.cumsum(counts) - counts, counts)
    wxs = np.repeat(wx, counts)
    tile_id = (np.repeat(y0, counts) + k // np.maximum(wxs, 1)) * tiles_x + np.repeat(x0, counts) + k % np.maximum(wxs, 1)
    order = np.lexsort((proj.depth[splat], tile_id))
    splat = splat[order]
    tile_id = tile_id[order]
    n_tiles = tiles_x * tiles_y
    bounds = np.searchsorted(tile_id, np.arange(n_tiles + 1))
    ranges = np.stack([bounds[:-1], bounds[1:]], axis=1).astype(np.int64)
    return ranges, splat, tiles_x


def _reject_power(proj, settings):
    # log(skip / alpha) with a small margin; -inf when skipping is disabled
    if settings.skip_alpha <= 0 or len(proj) == 0:
        return np.full(len(proj), -np.inf)
    with np.errstate(divide="ignore"):
        return np.log(settings.skip_alpha / np.asarray(proj.alpha, dtype=np.float64)) - 1e-4


def rasterize_forward(proj: Projected2D, cam: Camera, settings: RenderSettings = RenderSettings(),
                      glob: GlobalGaussians | None = None) -> RenderOutput:
    H, W = cam.height, cam.width
    dt = proj.mean2d.dtype if len(proj) else np.float32
    ranges, inst_splat, tiles_x = bin_tiles(proj, cam)
    image = np.zeros((H, W, 3), dtype=dt)
    final_t = np.ones((H, W), dtype=np.float64)
    n_contrib = np.zeros((H, W), dtype=np.int32)
    last = np.full((H, W), -1, dtype=np.int64)
    inst_hit = np.zeros(len(inst_splat), dtype=np.bool_)
    record = np.empty((H, W, RECORD_DEPTH), dtype=np.int32)
    if len(inst_splat):
        _kernels.forward(ranges, inst_splat, proj.mean2d, proj.conic, proj.color, proj.alpha,
                         _reject_power(proj, settings), proj.box(),
                         W, H, tiles_x, TILE, float(settings.skip_alpha),
                         float(settings.stop_transmittance), float(settings.alpha_cap),
                         image, final_t, n_contrib, last, inst_hit, record)
    visible = np.zeros(proj.n_total, dtype=bool)
    visible[proj.ids[inst_splat[inst_hit]]] = True
    state = RasterState(proj, ranges, inst_splat, last, final_t, tiles_x, n_contrib, record)
    return RenderOutput(image, final_t.astype(dt), n_contrib, visible, cam, settings, glob, state)


def render(glob: GlobalGaussians, cam: Camera, settings: RenderSettings = RenderSettings()) -> RenderOutput:
    """Project and rasterize world-space splats."""
    return rasterize_forward(project(glob, cam, settings), cam, settings, glob)


def rasterize_backward(out: RenderOutput, grad_image) -> ProjectedGrads:
    """Gradients on the projected fields for an upstream image gradient."""
    st = out.state
    if st is None:
        raise StateMissing("forward buffers were released; re-render before backward")
    proj = st.proj
    grad_image = np.ascontiguousarray(grad_image, dtype=np.float64)
    m = len(proj)
    settings = out.settings
    args = (st.tile_ranges, st.inst_splat, proj.mean2d, proj.conic, proj.color, proj.alpha,
            _reject_power(proj, settings), proj.box(),
            out.camera.width, out.camera.height, st.tiles_x, TILE, float(settings.skip_alpha),
            float(settings.alpha_cap), st.final_t64, st.last, st.n_contrib, st.record, grad_image)
    if m == 0 or len(st.inst_splat) == 0:
        acc = np.zeros((m, _kernels.NGRAD))
    elif settings.deterministic:
        buf = np.zeros((len(st.inst_splat), _kernels.NGRAD))
        _kernels.backward_instances(*args, buf)
        acc = _kernels.reduce_instances(st.inst_splat, buf, m)
    else:
        buf = np.zeros((numba.get_num_threads(), m, _kernels.NGRAD))
        _kernels.backward_threads(*args, buf)
        acc = buf.sum(axis=0)
    return ProjectedGrads(mean2d=acc[:, 0:2], conic=acc[:, 2:5], color=acc[:, 5:8], alpha=acc[:, 8])


def render_backward(out: RenderOutput, grad_image) -> GlobalGaussians:
    """Full backward from image gradient to world-space splat gradients.

    Also records the per-splat screen-space mean gradient on ``out.mean2d_grad``.
    """
    pg = rasterize_backward(out, grad_image)
    proj = out.state.proj
    mean2d_grad = np.zeros((proj.n_total, 2))
    mean2d_grad[proj.ids] = pg.mean2d
    out.mean2d_grad = mean2d_grad
    return project_vjp(out.glob, out.camera, proj, pg, out.settings)
