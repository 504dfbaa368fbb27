import filecmp
import json
import shutil
from pathlib import Path

import numpy as np
import pytest
from plyfile import PlyData

from splatrig.dataio import (load_checkpoint, load_dataset, read_png, save_checkpoint, save_dataset,
                             write_obj, read_obj, write_png)
from splatrig.errors import CountMismatch, HashMismatch, IoError, SchemaError
from splatrig.mesh_rig import RigParams, icosphere
from splatrig.pipeline import render_avatar, world_splats
from splatrig.synth import SynthSpec, camera_ring, synth_scene


def _tree(root):
    return sorted(p.relative_to(root) for p in Path(root).rglob("*") if p.is_file())


def test_synth_is_byte_identical(tiny_dataset, tmp_path):
    _, spec, root = tiny_dataset
    synth_scene(spec, tmp_path / "again")
    files = _tree(root)
    assert files == _tree(tmp_path / "again")
    _, mismatch, errors = filecmp.cmpfiles(root, tmp_path / "again", [str(f) for f in files], shallow=False)
    assert not mismatch and not errors


def test_camera_count():
    cams, held = camera_ring(SynthSpec(n_cameras=8, n_held_out=0))
    assert len(cams) == 8 and held == ()
    cams, held = camera_ring(SynthSpec(n_cameras=8, n_held_out=1))
    assert len(cams) == 9 and len(held) == 1


def test_manifest_contents(tiny_dataset):
    ds, spec, root = tiny_dataset
    manifest = json.loads((root / "manifest.json").read_text())
    assert len(manifest["cameras"]) == spec.n_cameras + spec.n_held_out
    assert sum(c["held_out"] for c in manifest["cameras"]) == spec.n_held_out
    assert all(len(c["world_to_camera"]) == 16 for c in manifest["cameras"])
    assert manifest["ground_truth"] == "ground_truth.ply"
    assert len(ds.split("train")) == spec.n_frames and len(ds.split("test")) == spec.n_test_frames


def test_dataset_round_trip(tiny_dataset, tmp_path):
    ds, _, root = tiny_dataset
    save_dataset(tmp_path, ds)
    for rel in ["manifest.json", "mesh.obj", "rig_neutral.npy", "rig_basis.npy"]:
        assert (tmp_path / rel).read_bytes() == (root / rel).read_bytes(), rel
    for rel in _tree(root / "vertices"):
        assert (tmp_path / "vertices" / rel).read_bytes() == (root / "vertices" / rel).read_bytes()
    for rel in _tree(root / "images"):
        np.testing.assert_array_equal(read_png(tmp_path / "images" / rel), read_png(root / "images" / rel))
    back = load_dataset(tmp_path)
    for a, b in zip(ds.frames, back.frames):
        np.testing.assert_array_equal(a.vertices, b.vertices)
        np.testing.assert_array_equal(a.params.blend_weights, b.params.blend_weights)


def test_obj_round_trip(tmp_path):
    verts, topo = icosphere(1)
    write_obj(tmp_path / "a.obj", verts, topo)
    v2, t2 = read_obj(tmp_path / "a.obj")
    np.testing.assert_array_equal(v2, verts)
    assert t2.hash() == topo.hash()
    write_obj(tmp_path / "b.obj", v2, t2)
    assert (tmp_path / "a.obj").read_bytes() == (tmp_path / "b.obj").read_bytes()


def test_png_alpha_is_premultiplied(tmp_path):
    from PIL import Image

    rgba = np.zeros((2, 2, 4), np.uint8)
    rgba[..., 0] = 255
    rgba[..., 3] = [[255, 0], [51, 102]]
    Image.fromarray(rgba).save(tmp_path / "a.png")
    img = read_png(tmp_path / "a.png")
    np.testing.assert_allclose(img[..., 0], [[1, 0], [0.2, 0.4]])
    write_png(tmp_path / "b.png", img)
    np.testing.assert_allclose(read_png(tmp_path / "b.png"), img)


def _copy(root, dst):
    shutil.copytree(root, dst)
    return json.loads((dst / "manifest.json").read_text())


def test_missing_image(tiny_dataset, tmp_path):
    _, _, root = tiny_dataset
    dst = tmp_path / "ds"
    manifest = _copy(root, dst)
    victim = dst / next(iter(manifest["frames"][0]["images"].values()))
    victim.unlink()
    with pytest.raises(IoError, match=str(victim)):
        load_dataset(dst)


def test_wrong_vertex_count(tiny_dataset, tmp_path):
    ds, _, root = tiny_dataset
    dst = tmp_path / "ds"
    manifest = _copy(root, dst)
    from splatrig.dataio import write_vertices

    write_vertices(dst / manifest["frames"][1]["vertices"], np.zeros((5, 3)))
    with pytest.raises(CountMismatch) as exc:
        load_dataset(dst)
    assert exc.value.expected == ds.topology.vertex_count and exc.value.actual == 5
    assert str(ds.topology.vertex_count) in str(exc.value) and "5" in str(exc.value)


def test_schema_errors(tiny_dataset, tmp_path):
    _, _, root = tiny_dataset
    dst = tmp_path / "ds"
    manifest = _copy(root, dst)
    manifest["format_version"] = 99
    (dst / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(SchemaError, match="format_version"):
        load_dataset(dst)
    manifest["format_version"] = 1
    del manifest["cameras"][0]["fx"]
    (dst / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(SchemaError, match=r"cameras\[0\].*fx"):
        load_dataset(dst)


def test_self_consistent_images(tiny_dataset):
    ds, _, root = tiny_dataset
    gt, _ = load_checkpoint(root / "ground_truth.ply", ds.topology)
    for fr in ds.frames[:3]:
        verts = ds.posed_vertices(fr)
        for cam in ds.cameras:
            img = render_avatar(gt, verts, cam).image
            assert np.abs(img - fr.images[cam.id]).max() <= 1 / 255 + 1e-6


def _ckpt_avatar(tiny_dataset, seed=0):
    ds, _, root = tiny_dataset
    gt, _ = load_checkpoint(root / "ground_truth.ply", ds.topology)
    rng = np.random.default_rng(seed)
    gt.splats.mu_local += rng.normal(0, 0.1, gt.splats.mu_local.shape).astype(np.float32)
    return ds, gt


def test_checkpoint_round_trip_renders_identically(tiny_dataset, tmp_path):
    ds, av = _ckpt_avatar(tiny_dataset)
    params = [f.params for f in ds.split("train")]
    opt = {"mu_local.m": np.ones((len(av.splats), 3))}
    save_checkpoint(tmp_path / "a.ply", av, ds.rest_vertices, 12, {"x": 1}, params, opt)
    back, meta = load_checkpoint(tmp_path / "a.ply", ds.topology)
    assert meta.iteration == 12 and meta.config == {"x": 1}
    np.testing.assert_array_equal(meta.optimizer["mu_local.m"], opt["mu_local.m"])
    for a, b in zip(params, meta.rig_params):
        np.testing.assert_array_equal(a.rotation, b.rotation)
        np.testing.assert_array_equal(a.blend_weights, b.blend_weights)
    verts = ds.posed_vertices(ds.frames[0])
    for cam in ds.cameras[:2]:
        np.testing.assert_array_equal(render_avatar(av, verts, cam).image,
                                      render_avatar(back, verts, cam).image)
    save_checkpoint(tmp_path / "b.ply", back, ds.rest_vertices, 12, {"x": 1}, meta.rig_params)
    assert (tmp_path / "a.ply").read_bytes() == (tmp_path / "b.ply").read_bytes()


def test_checkpoint_errors(tiny_dataset, tmp_path):
    ds, av = _ckpt_avatar(tiny_dataset)
    save_checkpoint(tmp_path / "a.ply", av, ds.rest_vertices)
    _, other = icosphere(2)
    with pytest.raises(HashMismatch):
        load_checkpoint(tmp_path / "a.ply", other)
    # patch the first row's parent_triangle (its last 4 bytes) to an invalid index
    raw = bytearray((tmp_path / "a.ply").read_bytes())
    header_end = raw.index(b"end_header\n") + len(b"end_header\n")
    row = 4 * (3 + 3 + 4 + 3 + 1 + 48 + 1)
    raw[header_end + row - 4:header_end + row] = np.uint32(ds.topology.triangle_count).tobytes()
    (tmp_path / "c.ply").write_bytes(bytes(raw))
    with pytest.raises(SchemaError, match="parent_triangle"):
        load_checkpoint(tmp_path / "c.ply", ds.topology)
    text = (tmp_path / "a.ply").read_bytes().replace(b"property float opacity_logit",
                                                     b"property float opacity_xyz")
    (tmp_path / "d.ply").write_bytes(text)
    with pytest.raises(SchemaError, match="opacity_xyz"):
        load_checkpoint(tmp_path / "d.ply", ds.topology)
    with pytest.raises(IoError):
        load_checkpoint(tmp_path / "missing.ply", ds.topology)


def test_generic_ply_parser_reads_point_cloud(tiny_dataset, tmp_path):
    ds, av = _ckpt_avatar(tiny_dataset)
    save_checkpoint(tmp_path / "a.ply", av, ds.rest_vertices, rig_params=[RigParams.identity(3)])
    ply = PlyData.read(str(tmp_path / "a.ply"))
    v = ply["vertex"]
    xyz = np.stack([v["x"], v["y"], v["z"]], axis=1)
    assert xyz.shape == (len(av.splats), 3) and np.isfinite(xyz).all()
    # positions are the world-space rest-pose centres
    glob, _ = world_splats(av, ds.rest_vertices, np.float64)
    np.testing.assert_allclose(xyz, glob.mu, rtol=1e-6, atol=1e-7)
    np.testing.assert_array_equal(v["parent_triangle"], av.splats.parent)
