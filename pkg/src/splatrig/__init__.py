"""Mesh-rigged 3D Gaussian splat avatars.

Splats are parameterized in the local frame of a parent mesh triangle, so any
deformation of the mesh (from a blendshape rig or raw tracked vertices) moves
them along. The package provides the rig, a differentiable tile renderer with
hand-written gradients, the training loop with adaptive density control, and
dataset/checkpoint I/O behind the ``splatrig`` command line tool.
"""
from .errors import SplatRigError
from .mesh_rig import BlendshapeRig, FrameSequence, RigParams, Topology
from .pipeline import loss_and_grads, render_avatar
from .renderer import Camera, RenderSettings, render
from .splats import RiggedAvatar, init_avatar
from .trainer import OptimConfig, animate, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "BlendshapeRig", "Camera", "FrameSequence", "OptimConfig", "RenderSettings",
    "RigParams", "RiggedAvatar", "SplatRigError", "Topology", "animate", "evaluate",
    "init_avatar", "loss_and_grads", "render", "render_avatar", "train",
]
