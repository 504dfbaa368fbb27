"""Fit an avatar to a small synthetic scene and score it on a held-out camera.

The scene generator paints ground-truth splats onto a deforming icosphere and
renders them, so the optimum is representable. A thousand iterations take
a couple of minutes; pass an iteration count to train longer.
"""
import sys
import time
from pathlib import Path

from splatrig import OptimConfig, evaluate, init_avatar, train
from splatrig.dataio import save_checkpoint
from splatrig.density import AdcConfig
from splatrig.synth import SynthSpec, synth_scene
from splatrig.trainer import summarize

iters = int(sys.argv[1]) if len(sys.argv) > 1 else 1000
root = Path("demo_out/02")

spec = SynthSpec(subdivisions=2, image_size=96, n_frames=12, n_test_frames=3)
ds = synth_scene(spec, root / "data")
print(f"dataset: {ds.topology.triangle_count} triangles, "
      f"{len(ds.train_cameras)} training cameras, {len(ds.frames)} frames")

avatar = init_avatar(ds.topology, ds.rest_vertices)
before = summarize(evaluate(avatar, ds, "test"))

t0 = time.perf_counter()
# Density-control windows shrink with the run length, and a window of a few
# iterations is noisy; a higher gradient threshold keeps short runs compact.
adc = AdcConfig(grad_threshold=1e-3)
res = train(ds, avatar, OptimConfig(total_iters=iters, log_every=200), adc=adc, progress=print)
print(f"trained {iters} iterations in {time.perf_counter() - t0:.1f} s, "
      f"{len(avatar.splats)} splats")

# Test frames keep their stored rig parameters; only training frames were tuned.
after = summarize(evaluate(avatar, ds, "test"))
print(f"held-out PSNR {before['psnr']:.2f} -> {after['psnr']:.2f} dB, "
      f"SSIM {before['ssim']:.3f} -> {after['ssim']:.3f}")

save_checkpoint(root / "avatar.ply", avatar, ds.rest_vertices, iters)
print(f"checkpoint written to {root / 'avatar.ply'}")
