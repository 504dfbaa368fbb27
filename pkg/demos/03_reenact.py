"""Drive a trained avatar with expressions it never saw.

Loads the checkpoint written by ``02_train_on_synthetic.py``, samples fresh
rig parameters with larger blend weights than the training range, and renders
them next to the ground truth for the same pose.
"""
from pathlib import Path

import numpy as np

from splatrig import animate
from splatrig.dataio import load_checkpoint, load_dataset, write_png
from splatrig.losses import psnr
from splatrig.synth import SynthSpec, random_params

root = Path("demo_out/02")
ds = load_dataset(root / "data", load_images=False)
avatar, _ = load_checkpoint(root / "avatar.ply", ds.topology, load_optimizer=False)
truth, _ = load_checkpoint(root / "data" / ds.ground_truth, ds.topology, load_optimizer=False)

rng = np.random.default_rng(123)
spec = SynthSpec(subdivisions=2)
sequence = [random_params(spec, rng, weight_range=2.0) for _ in range(4)]
cams = ds.held_out_cameras

ours = animate(avatar, sequence, cams, ds.rig)
ref = animate(truth, sequence, cams, ds.rig)

out = Path("demo_out/03")
out.mkdir(parents=True, exist_ok=True)
for t, (row, ref_row) in enumerate(zip(ours, ref)):
    for cam, img, gt in zip(cams, row, ref_row):
        write_png(out / f"t{t}_{cam.id}.png", np.concatenate([img, gt], axis=1))
        print(f"step {t} camera {cam.id}: {psnr(img, gt):.2f} dB against ground truth")
