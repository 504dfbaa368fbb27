"""Numba kernels for the tiled rasterizer.

Each tile owns a contiguous slice of the (tile, depth)-sorted instance list.
Pixels traverse that slice front to back and record their first few
contributors; the backward pass replays those in reverse (or, for pixels
with more, walks the slice back from the last contributor), recovering
transmittance by division.
Gradient buffer layout per splat/instance: mean x, mean y, conic a, b, c,
color r, g, b, alpha.  ``reject`` holds, per splat, an exponent below which
alpha' is certainly under the skip threshold, so most misses avoid ``exp``.
"""
import math

import numba
import numpy as np
from numba import njit, prange

NGRAD = 9
NLOC = 10


@njit(cache=True)
def _row_lists(start, end, inst_splat, means, conic, color, alpha, reject, extent, x0, y0, tile,
               width, height):
    """Per pixel row of a tile, the tile's instances whose footprint box meets it.

    Lists hold local indices ``i - start`` in depth order.  Outside the box
    alpha' is below the contribution floor, so skipping those instances never
    changes a pixel.  ``loc`` gathers the fields the pixel loops read into one
    contiguous float64 block: mean x, y, conic a, b, c, color r, g, b, alpha,
    reject.
    """
    n = end - start
    m = max(n, 1)
    rows = np.empty((tile, m), dtype=np.int64)
    count = np.zeros(tile, dtype=np.int64)
    xlo = np.empty(m, dtype=np.int64)
    xhi = np.empty(m, dtype=np.int64)
    loc = np.empty((m, NLOC))
    for j in range(n):
        s = inst_splat[start + j]
        loc[j, 0] = means[s, 0]
        loc[j, 1] = means[s, 1]
        loc[j, 2] = conic[s, 0]
        loc[j, 3] = conic[s, 1]
        loc[j, 4] = conic[s, 2]
        loc[j, 5] = color[s, 0]
        loc[j, 6] = color[s, 1]
        loc[j, 7] = color[s, 2]
        loc[j, 8] = alpha[s]
        loc[j, 9] = reject[s]
        rx = extent[s, 0]
        ry = extent[s, 1]
        xlo[j] = max(x0, int(math.floor(means[s, 0] - rx)) - 1)
        xhi[j] = min(x0 + tile - 1, width - 1, int(math.ceil(means[s, 0] + rx)))
        lo = max(y0, int(math.floor(means[s, 1] - ry)) - 1)
        hi = min(y0 + tile - 1, height - 1, int(math.ceil(means[s, 1] + ry)))
        for py in range(lo, hi + 1):
            rows[py - y0, count[py - y0]] = j
            count[py - y0] += 1
    return rows, count, xlo, xhi, loc


@njit(parallel=True, cache=True)
def forward(tile_ranges, inst_splat, means, conic, color, alpha, reject, extent, width, height,
            tiles_x, tile, skip, stop_t, cap, image, final_t, n_contrib, last, inst_hit, record):
    for t in prange(tile_ranges.shape[0]):
        start = tile_ranges[t, 0]
        end = tile_ranges[t, 1]
        y0 = (t // tiles_x) * tile
        x0 = (t % tiles_x) * tile
        rows, count, xlo, xhi, loc = _row_lists(start, end, inst_splat, means, conic, color, alpha,
                                                reject, extent, x0, y0, tile, width, height)
        for py in range(y0, min(y0 + tile, height)):
            row = rows[py - y0]
            nrow = count[py - y0]
            for px in range(x0, min(x0 + tile, width)):
                fx = px + 0.5
                fy = py + 0.5
                T = 1.0
                r = 0.0
                g = 0.0
                b = 0.0
                n = 0
                lst = start - 1
                for jj in range(nrow):
                    j = row[jj]
                    if px < xlo[j] or px > xhi[j]:
                        continue
                    dx = fx - loc[j, 0]
                    dy = fy - loc[j, 1]
                    power = -0.5 * (loc[j, 2] * dx * dx + loc[j, 4] * dy * dy) - loc[j, 3] * dx * dy
                    if power < loc[j, 9]:
                        continue
                    a = loc[j, 8] * math.exp(power)
                    if a > cap:
                        a = cap
                    if a < skip:
                        continue
                    w = a * T
                    r += loc[j, 5] * w
                    g += loc[j, 6] * w
                    b += loc[j, 7] * w
                    T *= 1.0 - a
                    if n < record.shape[2]:
                        record[py, px, n] = j
                    n += 1
                    lst = start + j
                    inst_hit[start + j] = True
                    if T < stop_t:
                        break
                image[py, px, 0] = r
                image[py, px, 1] = g
                image[py, px, 2] = b
                final_t[py, px] = T
                n_contrib[py, px] = n
                last[py, px] = lst


@njit(inline="always")
def _contribution_backward(j, px, py, start, T, gr, gg, gb, br, bg, bb, loc, inst_splat, skip, cap,
                           buf, use_inst):
    """Accumulate one term into ``buf`` and step back past it.

    ``T`` on entry is the transmittance behind the term and ``br, bg, bb`` the
    color composited behind it; both are returned updated.  Terms that did
    not contribute in the forward pass leave everything unchanged.
    """
    dx = px + 0.5 - loc[j, 0]
    dy = py + 0.5 - loc[j, 1]
    ca = loc[j, 2]
    cb = loc[j, 3]
    cc = loc[j, 4]
    power = -0.5 * (ca * dx * dx + cc * dy * dy) - cb * dx * dy
    if power < loc[j, 9]:
        return T, br, bg, bb
    G = math.exp(power)
    raw = loc[j, 8] * G
    a = raw if raw < cap else cap
    if a < skip:
        return T, br, bg, bb
    T = T / (1.0 - a)
    w = a * T
    k = start + j if use_inst else inst_splat[start + j]
    cr = loc[j, 5]
    cg = loc[j, 6]
    cbl = loc[j, 7]
    buf[k, 5] += gr * w
    buf[k, 6] += gg * w
    buf[k, 7] += gb * w
    inv = 1.0 / (1.0 - a)
    d_a = gr * (cr * T - br * inv) + gg * (cg * T - bg * inv) + gb * (cbl * T - bb * inv)
    br += cr * w
    bg += cg * w
    bb += cbl * w
    if raw < cap:
        buf[k, 8] += d_a * G
        d_p = d_a * raw
        buf[k, 0] += d_p * (ca * dx + cb * dy)
        buf[k, 1] += d_p * (cb * dx + cc * dy)
        buf[k, 2] += -0.5 * d_p * dx * dx
        buf[k, 3] += -d_p * dx * dy
        buf[k, 4] += -0.5 * d_p * dy * dy
    return T, br, bg, bb


@njit(inline="always")
def _pixel_backward(px, py, start, lst, n, T, gr, gg, gb, row, nrow, xlo, xhi, loc, record,
                    inst_splat, skip, cap, buf, use_inst):
    br = 0.0
    bg = 0.0
    bb = 0.0
    if n <= record.shape[2]:
        # the forward pass kept this pixel's contributors
        for q in range(n - 1, -1, -1):
            T, br, bg, bb = _contribution_backward(record[py, px, q], px, py, start, T, gr, gg,
                                                      gb, br, bg, bb, loc, inst_splat, skip, cap,
                                                      buf, use_inst)
        return
    top = np.searchsorted(row[:nrow], lst - start, side="right")
    for jj in range(top - 1, -1, -1):
        j = row[jj]
        if px < xlo[j] or px > xhi[j]:
            continue
        T, br, bg, bb = _contribution_backward(j, px, py, start, T, gr, gg, gb, br, bg, bb, loc,
                                                  inst_splat, skip, cap, buf, use_inst)


@njit(parallel=True, cache=True)
def backward_instances(tile_ranges, inst_splat, means, conic, color, alpha, reject, extent, width, height,
                       tiles_x, tile, skip, cap, final_t, last, n_contrib, record, grad_image, inst_buf):
    """Deterministic mode: every instance owns its gradient row."""
    for t in prange(tile_ranges.shape[0]):
        start = tile_ranges[t, 0]
        y0 = (t // tiles_x) * tile
        x0 = (t % tiles_x) * tile
        rows, count, xlo, xhi, loc = _row_lists(start, tile_ranges[t, 1], inst_splat, means, conic,
                                                color, alpha, reject, extent, x0, y0, tile, width,
                                                height)
        for py in range(y0, min(y0 + tile, height)):
            for px in range(x0, min(x0 + tile, width)):
                _pixel_backward(px, py, start, last[py, px], n_contrib[py, px], float(final_t[py, px]),
                                grad_image[py, px, 0], grad_image[py, px, 1], grad_image[py, px, 2],
                                rows[py - y0], count[py - y0], xlo, xhi, loc, record, inst_splat,
                                skip, cap, inst_buf, True)


@njit(parallel=True, cache=True)
def backward_threads(tile_ranges, inst_splat, means, conic, color, alpha, reject, extent, width, height,
                     tiles_x, tile, skip, cap, final_t, last, n_contrib, record, grad_image, thread_buf):
    """Fast mode: one splat-indexed buffer per worker thread, summed afterwards."""
    for t in prange(tile_ranges.shape[0]):
        buf = thread_buf[numba.get_thread_id()]
        start = tile_ranges[t, 0]
        y0 = (t // tiles_x) * tile
        x0 = (t % tiles_x) * tile
        rows, count, xlo, xhi, loc = _row_lists(start, tile_ranges[t, 1], inst_splat, means, conic,
                                                color, alpha, reject, extent, x0, y0, tile, width,
                                                height)
        for py in range(y0, min(y0 + tile, height)):
            for px in range(x0, min(x0 + tile, width)):
                _pixel_backward(px, py, start, last[py, px], n_contrib[py, px], float(final_t[py, px]),
                                grad_image[py, px, 0], grad_image[py, px, 1], grad_image[py, px, 2],
                                rows[py - y0], count[py - y0], xlo, xhi, loc, record, inst_splat,
                                skip, cap, buf, False)


def reduce_instances(inst_splat, inst_buf, n_splats):
    """Sum instance rows into splats in instance order (float64)."""
    out = np.empty((n_splats, NGRAD))
    for c in range(NGRAD):
        out[:, c] = np.bincount(inst_splat, weights=inst_buf[:, c], minlength=n_splats)
    return out
