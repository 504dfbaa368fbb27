"""Shared-topology meshes and a linear blendshape rig with one rigid transform.

The rig stands in for a parametric face model: posing maps
(translation, rotation, blend weights, optional offsets) to vertex positions,
and ``pose_vjp`` carries vertex gradients back to those parameters so they can
be fine-tuned per time step.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, SchemaError
from .geometry import TriangleFrame, quat_to_matrix, quat_to_matrix_vjp, triangle_frame


@dataclass
class Topology:
    vertex_count: int
    triangles: np.ndarray
    groups: dict = field(default_factory=dict)

    def __post_init__(self):
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.triangles.size:
            if self.triangles.min() < 0 or self.triangles.max() >= self.vertex_count:
                raise SchemaError("triangle index out of range for "
                                  f"{self.vertex_count} vertices")
            t = self.triangles
            if np.any((t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])):
                raise SchemaError("triangle repeats a vertex index")

    @property
    def triangle_count(self):
        return len(self.triangles)

    def hash(self):
        import hashlib

        h = hashlib.sha256()
        h.update(np.int64(self.vertex_count).tobytes())
        h.update(self.triangles.astype("<i8").tobytes())
        return h.hexdigest()


@dataclass
class RigParams:
    translation: np.ndarray
    rotation: np.ndarray
    blend_weights: np.ndarray
    offsets: np.ndarray | None = None

    def __post_init__(self):
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        self.blend_weights = np.asarray(self.blend_weights, dtype=np.float64).reshape(-1)
        if self.offsets is not None:
            self.offsets = np.asarray(self.offsets, dtype=np.float64).reshape(-1, 3)

    @classmethod
    def identity(cls, n_blend):
        return cls(np.zeros(3), np.array([1.0, 0, 0, 0]), np.zeros(n_blend))

    def copy(self):
        return RigParams(self.translation.copy(), self.rotation.copy(), self.blend_weights.copy(),
                         None if self.offsets is None else self.offsets.copy())

    def to_dict(self):
        d = {"translation": self.translation.tolist(), "rotation": self.rotation.tolist(),
             "blend_weights": self.blend_weights.tolist()}
        if self.offsets is not None:
            d["offsets"] = self.offsets.tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(d["translation"], d["rotation"], d["blend_weights"], d.get("offsets"))
        except KeyError as exc:
            raise SchemaError(f"rig params missing field {exc.args[0]!r}") from None


@dataclass
class BlendshapeRig:
    neutral: np.ndarray  # (V, 3)
    basis: np.ndarray    # (B, V, 3)

    def __post_init__(self):
        self.neutral = np.asarray(self.neutral, dtype=np.float64)
        self.basis = np.asarray(self.basis, dtype=np.float64).reshape(-1, *self.neutral.shape)
        if not np.all(np.isfinite(self.basis)) or not np.all(np.isfinite(self.neutral)):
            raise SchemaError("rig contains non-finite values")

    @property
    def n_blend(self):
        return self.basis.shape[0]

    @property
    def vertex_count(self):
        return self.neutral.shape[0]


@dataclass
class FrameSequence:
    """Per-time-step rig parameters or raw posed vertices over one topology."""

    topology: Topology
    params: list | None = None
    vertices: list | None = None

    def __len__(self):
        return len(self.params) if self.params is not None else len(self.vertices)

    def posed(self, rig, t):
        if self.params is not None:
            return pose(rig, self.params[t])
        return self.vertices[t]


def _check(rig: BlendshapeRig, p: RigParams):
    if p.blend_weights.shape[0] != rig.n_blend:
        raise DimensionMismatch(f"rig has {rig.n_blend} blendshapes, "
                                f"params carry {p.blend_weights.shape[0]} weights")
    if p.offsets is not None and p.offsets.shape != rig.neutral.shape:
        raise DimensionMismatch(f"offsets shape {p.offsets.shape} != {rig.neutral.shape}")


def unposed(rig: BlendshapeRig, p: RigParams):
    _check(rig, p)
    v = rig.neutral + np.tensordot(p.blend_weights, rig.basis, axes=1)
    if p.offsets is not None:
        v = v + p.offsets
    return v


def pose(rig: BlendshapeRig, p: RigParams):
    """Vertices ``R(q) (neutral + sum_i w_i B_i + offsets) + t``."""
    local = unposed(rig, p)
    return local @ quat_to_matrix(p.rotation).T + p.translation


def pose_vjp(rig: BlendshapeRig, p: RigParams, upstream):
    """Gradient of ``sum(upstream * pose(rig, p))`` w.r.t. every RigParams field."""
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != rig.neutral.shape:
        raise DimensionMismatch(f"upstream shape {upstream.shape} != {rig.neutral.shape}")
    local = unposed(rig, p)
    R = quat_to_matrix(p.rotation)
    g_local = upstream @ R
    g_R = upstream.T @ local
    return RigParams(
        translation=upstream.sum(axis=0),
        rotation=quat_to_matrix_vjp(p.rotation, g_R),
        blend_weights=np.tensordot(rig.basis, g_local, axes=([1, 2], [0, 1])),
        offsets=g_local if p.offsets is not None else None,
    )


# the name used in the operation list
pose_jacobian_vjp = pose_vjp


def all_frames(vertices, topology: Topology) -> TriangleFrame:
    tri = topology.triangles
    v = np.asarray(vertices, dtype=np.float64)
    if v.shape != (topology.vertex_count, 3):
        raise DimensionMismatch(f"vertices shape {v.shape}, topology expects "
                                f"({topology.vertex_count}, 3)")
    return triangle_frame(v[tri[:, 0]], v[tri[:, 1]], v[tri[:, 2]])


# --------------------------------------------------------------------------
# mesh builders
# --------------------------------------------------------------------------

def grid_mesh(nx, ny, size=1.0):
    """Flat grid in the z=0 plane with ``2 * nx * ny`` congruent triangles.

    Every triangle starts on an axis-aligned edge so all frames share the
    normal and the scale; the two halves of each cell differ by a half turn.
    """
    xs = np.linspace(0.0, size * nx, nx + 1)
    ys = np.linspace(0.0, size * ny, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    verts = np.stack([X.ravel(), Y.ravel(), np.zeros(X.size)], axis=1)
    tris = []
    for j in range(ny):
        for i in range(nx):
            a = j * (nx + 1) + i
            b, c, d = a + 1, a + nx + 1, a + nx + 2
            tris += [(a, b, d), (d, c, a)]
    return verts, Topology(len(verts), np.array(tris))


def icosphere(subdivisions=2):
    """Unit icosphere with outward-facing counter-clockwise triangles."""
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
             (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
             (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return np.array(verts), Topology(len(verts), np.array(faces))
