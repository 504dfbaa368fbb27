"""On-disk formats: datasets (JSON manifest + OBJ + PNG + vertex binaries) and
PLY checkpoints.

Vertex files are ``b"SRV1"``, a little-endian u32 vertex count, then
``count * 3`` little-endian float32 values.

Checkpoints are binary little-endian PLY.  The ``vertex`` element holds one
row per splat: world-space rest-pose ``x, y, z`` (so generic viewers show a
point cloud), then the local parameters and ``parent_triangle``.  An optional
``rig_frame`` element stores per-frame rig parameters in double precision.
Optimizer moments go to a sidecar ``<name>.adam.npz``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import CountMismatch, HashMismatch, IoError, SchemaError
from .mesh_rig import BlendshapeRig, RigParams, Topology
from .renderer import Camera
from .splats import BoundGaussians, RiggedAvatar

FORMAT_VERSION = 1
VERTEX_MAGIC = b"SRV1"


# --------------------------------------------------------------------------
# small files
# --------------------------------------------------------------------------

def write_obj(path, vertices, topology: Topology):
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in np.asarray(vertices, dtype=np.float64).tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in topology.triangles.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj(path):
    """Vertices and topology from the ``v``/``f`` records of an ASCII OBJ."""
    path = Path(path)
    if not path.exists():
        raise IoError(f"missing topology file: {path}")
    verts, faces = [], []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        try:
            if parts[0] == "v":
                verts.append([float(p) for p in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
                if len(idx) != 3:
                    raise SchemaError(f"{path}:{lineno}: only triangles are supported")
                faces.append(idx)
        except ValueError:
            raise SchemaError(f"{path}:{lineno}: cannot parse {line!r}") from None
    verts = np.array(verts, dtype=np.float64).reshape(-1, 3)
    return verts, Topology(len(verts), np.array(faces, dtype=np.int64).reshape(-1, 3))


def write_vertices(path, vertices):
    v = np.ascontiguousarray(vertices, dtype="<f4").reshape(-1, 3)
    with open(path, "wb") as fh:
        fh.write(VERTEX_MAGIC)
        fh.write(np.uint32(len(v)).astype("<u4").tobytes())
        fh.write(v.tobytes())


def read_vertices(path, expected=None):
    path = Path(path)
    if not path.exists():
        raise IoError(f"missing vertex file: {path}")
    raw = path.read_bytes()
    if raw[:4] != VERTEX_MAGIC:
        raise SchemaError(f"{path}: bad magic {raw[:4]!r}")
    count = int(np.frombuffer(raw, dtype="<u4", count=1, offset=4)[0])
    if len(raw) != 8 + 12 * count:
        raise SchemaError(f"{path}: header says {count} vertices but payload is {len(raw) - 8} bytes")
    if expected is not None and count != expected:
        raise CountMismatch(f"{path}: expected {expected} vertices, found {count}",
                            expected=expected, actual=count)
    return np.frombuffer(raw, dtype="<f4", offset=8).reshape(count, 3).astype(np.float64)


def write_png(path, image):
    img = np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(img).save(path, format="PNG")


def read_png(path):
    """Float image in [0, 1]; RGBA is premultiplied against black."""
    path = Path(path)
    if not path.exists():
        raise IoError(f"missing image: {path}")
    with Image.open(path) as im:
        arr = np.asarray(im).astype(np.float32) / 255.0
    if arr.ndim == 2:
        arr = np.repeat(arr[..., None], 3, axis=2)
    if arr.shape[2] == 4:
        arr = arr[..., :3] * arr[..., 3:4]
    return arr[..., :3]


# --------------------------------------------------------------------------
# datasets
# --------------------------------------------------------------------------

@dataclass
class Frame:
    time: int
    split: str
    images: dict = field(default_factory=dict)
    params: RigParams | None = None
    vertices: np.ndarray | None = None


@dataclass
class Dataset:
    topology: Topology
    cameras: list
    frames: list
    rig: BlendshapeRig | None = None
    held_out: tuple = ()
    rest_vertices: np.ndarray | None = None
    root: Path | None = None
    ground_truth: str | None = None

    def camera(self, cam_id):
        for c in self.cameras:
            if c.id == cam_id:
                return c
        raise KeyError(cam_id)

    @property
    def train_cameras(self):
        return [c for c in self.cameras if c.id not in self.held_out]

    @property
    def held_out_cameras(self):
        return [c for c in self.cameras if c.id in self.held_out]

    def split(self, name):
        return [f for f in self.frames if f.split == name]

    def posed_vertices(self, frame: Frame, params: RigParams | None = None):
        from .mesh_rig import pose

        if self.rig is not None and (params is not None or frame.params is not None):
            return pose(self.rig, params if params is not None else frame.params)
        if frame.vertices is None:
            raise SchemaError(f"frame {frame.time} has neither rig params nor vertices")
        return frame.vertices


def _require(d, key, where):
    if key not in d:
        raise SchemaError(f"{where}: missing field {key!r}")
    return d[key]


def save_dataset(root, ds: Dataset, images_written=False):
    """Write manifest, topology, rig and per-frame files under ``root``.

    Images are expected to already be on disk when ``images_written`` is set;
    otherwise the in-memory ``frame.images`` arrays are encoded.
    """
    root = Path(root)
    (root / "vertices").mkdir(parents=True, exist_ok=True)
    (root / "images").mkdir(parents=True, exist_ok=True)
    write_obj(root / "mesh.obj", ds.rest_vertices if ds.rest_vertices is not None
              else ds.rig.neutral, ds.topology)
    manifest = {"format_version": FORMAT_VERSION, "topology": "mesh.obj",
                "cameras": [dict(c.to_dict(), held_out=c.id in ds.held_out) for c in ds.cameras],
                "frames": []}
    if ds.rig is not None:
        np.save(root / "rig_neutral.npy", ds.rig.neutral)
        np.save(root / "rig_basis.npy", ds.rig.basis)
        manifest["rig"] = {"neutral": "rig_neutral.npy", "basis": "rig_basis.npy"}
    if ds.ground_truth:
        manifest["ground_truth"] = ds.ground_truth
    for i, fr in enumerate(ds.frames):
        entry = {"time": int(fr.time), "split": fr.split, "images": {}}
        if fr.params is not None:
            entry["rig_params"] = fr.params.to_dict()
        verts = fr.vertices if fr.vertices is not None else (
            ds.posed_vertices(fr) if ds.rig is not None else None)
        if verts is not None:
            rel = f"vertices/{fr.split}_{i:04d}.bin"
            write_vertices(root / rel, verts)
            entry["vertices"] = rel
        for cam_id, img in fr.images.items():
            rel = f"images/{fr.split}_{i:04d}_{cam_id}.png"
            if not images_written:
                write_png(root / rel, img)
            entry["images"][cam_id] = rel
        manifest["frames"].append(entry)
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return root / "manifest.json"


def image_path(root, split, index, cam_id):
    return Path(root) / f"images/{split}_{index:04d}_{cam_id}.png"


def load_dataset(path, load_images=True) -> Dataset:
    """Parse a manifest (file or its directory) and validate every reference."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.exists():
        raise IoError(f"missing manifest: {path}")
    root = path.parent
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from None
    version = _require(manifest, "format_version", "manifest")
    if version != FORMAT_VERSION:
        raise SchemaError(f"manifest.format_version: unsupported version {version}")
    rest, topo = read_obj(root / _require(manifest, "topology", "manifest"))

    cameras, held = [], []
    for i, cd in enumerate(_require(manifest, "cameras", "manifest")):
        for key in ("id", "width", "height", "fx", "fy", "cx", "cy", "world_to_camera"):
            _require(cd, key, f"cameras[{i}]")
        if len(cd["world_to_camera"]) != 16:
            raise SchemaError(f"cameras[{i}].world_to_camera: expected 16 values")
        cameras.append(Camera.from_dict(cd))
        if cd.get("held_out"):
            held.append(cd["id"])
    ids = [c.id for c in cameras]
    if len(set(ids)) != len(ids):
        raise SchemaError("cameras: duplicate camera id")

    rig = None
    if "rig" in manifest:
        for key in ("neutral", "basis"):
            p = root / _require(manifest["rig"], key, "rig")
            if not p.exists():
                raise IoError(f"missing rig file: {p}")
        rig = BlendshapeRig(np.load(root / manifest["rig"]["neutral"]),
                            np.load(root / manifest["rig"]["basis"]))
        if rig.vertex_count != topo.vertex_count:
            raise CountMismatch(f"rig has {rig.vertex_count} vertices, topology {topo.vertex_count}",
                                expected=topo.vertex_count, actual=rig.vertex_count)

    frames = []
    for i, fd in enumerate(_require(manifest, "frames", "manifest")):
        where = f"frames[{i}]"
        fr = Frame(int(_require(fd, "time", where)), fd.get("split", "train"))
        if "rig_params" in fd:
            fr.params = RigParams.from_dict(fd["rig_params"])
            if rig is not None and fr.params.blend_weights.shape[0] != rig.n_blend:
                raise CountMismatch(f"{where}.rig_params: expected {rig.n_blend} blend weights, "
                                    f"found {fr.params.blend_weights.shape[0]}",
                                    expected=rig.n_blend, actual=fr.params.blend_weights.shape[0])
        if "vertices" in fd:
            fr.vertices = read_vertices(root / fd["vertices"], expected=topo.vertex_count)
        if fr.params is None and fr.vertices is None:
            raise SchemaError(f"{where}: needs rig_params or vertices")
        for cam_id, rel in _require(fd, "images", where).items():
            if cam_id not in ids:
                raise SchemaError(f"{where}.images: unknown camera {cam_id!r}")
            p = root / rel
            if not p.exists():
                raise IoError(f"missing image: {p}")
            fr.images[cam_id] = read_png(p) if load_images else p
        frames.append(fr)
    return Dataset(topo, cameras, frames, rig, tuple(held), rest, root,
                   manifest.get("ground_truth"))


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------

SPLAT_FIELDS = (
    [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    + [(f"mu_{i}", "<f4") for i in range(3)]
    + [(f"rot_{i}", "<f4") for i in range(4)]
    + [(f"log_scale_{i}", "<f4") for i in range(3)]
    + [("opacity_logit", "<f4")]
    + [(f"sh_{i}", "<f4") for i in range(48)]
    + [("parent_triangle", "<u4")]
)
PLY_TYPES = {"<f4": "float", "<f8": "double", "<u4": "uint", "<i4": "int"}
PLY_TYPES_INV = {"float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8",
                 "uint": "<u4", "uint32": "<u4", "int": "<i4", "int32": "<i4"}


def _rig_fields(n_blend):
    return ([("time", "<i4")] + [(f"t_{i}", "<f8") for i in range(3)]
            + [(f"q_{i}", "<f8") for i in range(4)] + [(f"w_{i}", "<f8") for i in range(n_blend)])


@dataclass
class CheckpointMeta:
    iteration: int = 0
    topology_hash: str = ""
    config: dict = field(default_factory=dict)
    rig_params: list | None = None
    optimizer: dict | None = None


def save_checkpoint(path, avatar: RiggedAvatar, rest_vertices, iteration=0, config=None,
                    rig_params=None, optimizer=None):
    """Write a PLY checkpoint (and ``.adam.npz`` sidecar when ``optimizer`` is given)."""
    from .pipeline import world_splats

    path = Path(path)
    sp = avatar.splats
    glob, _ = world_splats(avatar, rest_vertices, np.float64)
    rows = np.empty(len(sp), dtype=SPLAT_FIELDS)
    for i, c in enumerate("xyz"):
        rows[c] = glob.mu[:, i]
    for i in range(3):
        rows[f"mu_{i}"] = sp.mu_local[:, i]
        rows[f"log_scale_{i}"] = sp.log_scale[:, i]
    for i in range(4):
        rows[f"rot_{i}"] = sp.rot_local[:, i]
    rows["opacity_logit"] = sp.opacity_logit
    sh = sp.sh.reshape(len(sp), 48)
    for i in range(48):
        rows[f"sh_{i}"] = sh[:, i]
    rows["parent_triangle"] = sp.parent

    header = ["ply", "format binary_little_endian 1.0", f"comment splatrig checkpoint {FORMAT_VERSION}",
              f"comment topology_hash {avatar.topology.hash()}", f"comment iteration {int(iteration)}",
              "comment config " + json.dumps(config or {}, sort_keys=True, separators=(",", ":")),
              f"element vertex {len(sp)}"]
    header += [f"property {PLY_TYPES[t]} {name}" for name, t in SPLAT_FIELDS]
    rig_rows = None
    if rig_params:
        nb = len(rig_params[0].blend_weights)
        rig_rows = np.empty(len(rig_params), dtype=_rig_fields(nb))
        for j, p in enumerate(rig_params):
            rig_rows[j]["time"] = j
            for i in range(3):
                rig_rows[j][f"t_{i}"] = p.translation[i]
            for i in range(4):
                rig_rows[j][f"q_{i}"] = p.rotation[i]
            for i in range(nb):
                rig_rows[j][f"w_{i}"] = p.blend_weights[i]
        header.append(f"element rig_frame {len(rig_params)}")
        header += [f"property {PLY_TYPES[t]} {name}" for name, t in _rig_fields(nb)]
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(rows.tobytes())
        if rig_rows is not None:
            fh.write(rig_rows.tobytes())
    if optimizer is not None:
        np.savez(_sidecar(path), **optimizer)
    return path


def _sidecar(path):
    path = Path(path)
    return path.with_name(path.name + ".adam.npz")


def _parse_header(fh, path):
    if fh.readline().strip() != b"ply":
        raise SchemaError(f"{path}: not a PLY file")
    comments, elements = [], []
    while True:
        line = fh.readline()
        if not line:
            raise SchemaError(f"{path}: header has no end_header")
        parts = line.decode("ascii").split()
        if not parts:
            continue
        if parts[0] == "format":
            if parts[1] != "binary_little_endian":
                raise SchemaError(f"{path}: unsupported PLY format {parts[1]}")
        elif parts[0] == "comment":
            comments.append(line.decode("ascii")[len("comment "):].rstrip("\n"))
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if parts[1] == "list" or parts[1] not in PLY_TYPES_INV:
                raise SchemaError(f"{path}: unsupported property type {' '.join(parts[1:-1])}")
            elements[-1][2].append((parts[2], PLY_TYPES_INV[parts[1]]))
        elif parts[0] == "end_header":
            return comments, elements


def load_checkpoint(path, topology: Topology, load_optimizer=True):
    """Return ``(RiggedAvatar, CheckpointMeta)``; validates schema and topology hash."""
    path = Path(path)
    if not path.exists():
        raise IoError(f"missing checkpoint: {path}")
    with open(path, "rb") as fh:
        comments, elements = _parse_header(fh, path)
        data = {}
        for name, count, props in elements:
            data[name] = (np.frombuffer(fh.read(count * np.dtype(props).itemsize), dtype=props, count=count)
                          if count else np.empty(0, dtype=props))
    meta = CheckpointMeta()
    for c in comments:
        key, _, value = c.partition(" ")
        if key == "topology_hash":
            meta.topology_hash = value
        elif key == "iteration":
            meta.iteration = int(value)
        elif key == "config":
            meta.config = json.loads(value)
    if meta.topology_hash != topology.hash():
        raise HashMismatch(f"{path}: checkpoint topology hash {meta.topology_hash[:12]}... "
                           f"does not match {topology.hash()[:12]}...")
    if "vertex" not in data:
        raise SchemaError(f"{path}: no vertex element")
    got = [n for n in data["vertex"].dtype.names]
    want = [n for n, _ in SPLAT_FIELDS]
    if got != want:
        unknown = sorted(set(got) - set(want))
        missing = sorted(set(want) - set(got))
        raise SchemaError(f"{path}: vertex properties differ from schema "
                          f"(unknown: {unknown}, missing: {missing})")
    rows = data["vertex"]
    parent = rows["parent_triangle"].astype(np.int64)
    if parent.size and parent.max() >= topology.triangle_count:
        raise SchemaError(f"{path}: parent_triangle {int(parent.max())} >= triangle count "
                          f"{topology.triangle_count}")
    n = len(rows)
    f32 = np.float32
    splats = BoundGaussians(
        mu_local=np.stack([rows[f"mu_{i}"] for i in range(3)], 1).astype(f32),
        rot_local=np.stack([rows[f"rot_{i}"] for i in range(4)], 1).astype(f32),
        log_scale=np.stack([rows[f"log_scale_{i}"] for i in range(3)], 1).astype(f32),
        opacity_logit=rows["opacity_logit"].astype(f32),
        sh=np.stack([rows[f"sh_{i}"] for i in range(48)], 1).astype(f32).reshape(n, 16, 3),
        parent=parent,
    )
    if "rig_frame" in data:
        rr = data["rig_frame"]
        nb = len([k for k in rr.dtype.names if k.startswith("w_")])
        meta.rig_params = [RigParams([r[f"t_{i}"] for i in range(3)], [r[f"q_{i}"] for i in range(4)],
                                     [r[f"w_{i}"] for i in range(nb)]) for r in rr]
    side = _sidecar(path)
    if load_optimizer and side.exists():
        with np.load(side) as z:
            meta.optimizer = {k: z[k] for k in z.files}
    return RiggedAvatar(topology, splats), meta
