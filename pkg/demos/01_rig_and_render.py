"""Bind a few splats to a blendshape-driven grid and watch them follow the mesh.

Builds a 4x4 grid, gives it one "bulge" blendshape, seeds one opaque splat per
triangle, then renders the rest pose and two deformed poses from one camera.
The PNGs land in ``demo_out/01``.
"""
from pathlib import Path

import numpy as np

from splatrig import BlendshapeRig, Camera, RigParams, init_avatar, render_avatar
from splatrig.dataio import write_png
from splatrig.geometry import axis_angle_to_quat
from splatrig.mesh_rig import all_frames, grid_mesh, pose
from splatrig.splats import logit

out = Path("demo_out/01")
out.mkdir(parents=True, exist_ok=True)

# A flat grid centred on the origin, facing the camera along +z.
verts, topo = grid_mesh(4, 4, size=0.25)
verts = verts - verts.mean(axis=0)

# One blendshape pushing the middle of the grid towards the viewer.
r2 = (verts[:, :2] ** 2).sum(axis=1)
bulge = np.zeros_like(verts)
bulge[:, 2] = -0.3 * np.exp(-r2 / 0.1)
rig = BlendshapeRig(verts, bulge[None])

avatar = init_avatar(topo, verts)
rng = np.random.default_rng(0)
s = avatar.splats
s.log_scale[:] = np.log(0.4)
s.opacity_logit[:] = logit(0.9)
s.sh[:, 0] = rng.uniform(-1.0, 1.0, (len(s), 3))
print(f"{len(s)} splats on {topo.triangle_count} triangles")

cam = Camera.look_at([0, 0, -2.5], [0, 0, 0], [0, -1, 0], 128, 128, fx=200)

poses = {
    "rest": RigParams.identity(1),
    "bulge": RigParams(np.zeros(3), [1, 0, 0, 0], [1.0]),
    "turned": RigParams([0.1, 0, 0], axis_angle_to_quat([0, 1, 0], 0.4), [1.0]),
}
for name, p in poses.items():
    posed = pose(rig, p)
    img = render_avatar(avatar, posed, cam).image
    write_png(out / f"{name}.png", img)
    # Each splat's world mean is its local mean carried by the parent frame.
    frames = all_frames(posed, topo)
    print(f"{name:7s} mean frame scale {frames.scale.mean():.3f}  "
          f"image mean {img.mean():.3f} -> {out / (name + '.png')}")
