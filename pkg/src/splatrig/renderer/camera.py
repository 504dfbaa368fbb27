"""Pinhole cameras.  Camera space is right-handed with +z forward and +y down;
pixel (0, 0) is the top-left pixel and its center sits at (0.5, 0.5)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Camera:
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    world_to_camera: np.ndarray
    near: float = 0.01
    id: str = ""

    def __post_init__(self):
        self.world_to_camera = np.asarray(self.world_to_camera, dtype=np.float64).reshape(4, 4)
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not self.near > 0:
            raise ValueError("near plane must be positive")

    @property
    def rotation(self):
        return self.world_to_camera[:3, :3]

    @property
    def translation(self):
        return self.world_to_camera[:3, 3]

    @property
    def center(self):
        return -self.rotation.T @ self.translation

    @classmethod
    def look_at(cls, eye, target, up, width, height, fx, fy=None, cx=None, cy=None,
                near=0.01, id=""):
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(up, dtype=np.float64))
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        R = np.stack([right, down, forward])
        m = np.eye(4)
        m[:3, :3] = R
        m[:3, 3] = -R @ eye
        return cls(width, height, fx, fx if fy is None else fy,
                   width / 2 if cx is None else cx, height / 2 if cy is None else cy,
                   m, near, id)

    def translated(self, offset):
        """The same camera moved by a world-space ``offset``."""
        m = self.world_to_camera.copy()
        m[:3, 3] -= self.rotation @ np.asarray(offset, dtype=np.float64)
        return Camera(self.width, self.height, self.fx, self.fy, self.cx, self.cy, m,
                      self.near, self.id)

    def to_dict(self):
        return {"id": self.id, "width": int(self.width), "height": int(self.height),
                "fx": float(self.fx), "fy": float(self.fy), "cx": float(self.cx),
                "cy": float(self.cy), "near": float(self.near),
                "world_to_camera": self.world_to_camera.reshape(-1).tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["width"]), int(d["height"]), float(d["fx"]), float(d["fy"]),
                   float(d["cx"]), float(d["cy"]), np.array(d["world_to_camera"], dtype=np.float64),
                   float(d.get("near", 0.01)), str(d.get("id", "")))
