"""Adam with bias correction, operating in place on numpy arrays."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import ShapeMismatch


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros_like(cls, p):
        return cls(np.zeros_like(p), np.zeros_like(p), 0)

    def take(self, idx, fresh=None):
        """Reindex rows (after densify/prune); ``fresh`` rows restart from zero moments."""
        m = self.m[idx]
        v = self.v[idx]
        if fresh is not None:
            m[fresh] = 0
            v[fresh] = 0
        return AdamState(m, v, self.step)


def adam_step(param, grad, state: AdamState, lr, betas=(0.9, 0.999), eps=1e-15):
    """One bias-corrected Adam update of ``param`` in place; returns ``param``."""
    if param.shape != grad.shape or state.m.shape != param.shape:
        raise ShapeMismatch(f"param {param.shape}, grad {grad.shape}, state {state.m.shape}")
    b1, b2 = betas
    state.step += 1
    c1 = 1 - b1 ** state.step
    c2 = 1 - b2 ** state.step
    if param.size == 0:
        return param
    flat = [a if a.flags.c_contiguous else np.ascontiguousarray(a) for a in (param, state.m, state.v)]
    _adam_kernel(flat[0].reshape(-1), np.ascontiguousarray(grad).reshape(-1),
                 flat[1].reshape(-1), flat[2].reshape(-1), lr, b1, b2, c1, c2, eps)
    # strided views were updated through a copy
    for dst, src in zip((param, state.m, state.v), flat):
        if dst is not src:
            dst[...] = src
    return param


@njit(cache=True)
def _adam_kernel(p, g, m, v, lr, b1, b2, c1, c2, eps):
    # elementwise, so the result does not depend on scheduling
    for i in range(p.size):
        gi = m.dtype.type(g[i])
        m[i] = b1 * m[i] + (1 - b1) * gi
        v[i] = b2 * v[i] + (1 - b2) * gi * gi
        p[i] -= lr * (m[i] / c1) / (np.sqrt(v[i] / c2) + eps)
