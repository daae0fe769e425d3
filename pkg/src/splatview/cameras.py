"""Pinhole camera model: intrinsics plus a world-to-camera rigid pose."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from splatview.geom import RigidTransform, camera_position


@dataclass(frozen=True)
class CameraView:
    """Camera intrinsics and extrinsics.

    Camera frame: +x right, +y down, +z forward. Pixels follow
    ``u = fx * x / z + cx``, ``v = fy * y / z + cy``.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    pose: RigidTransform = field(default_factory=RigidTransform.identity)

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @staticmethod
    def from_fov(width: int, height: int, fov_deg: float, pose: RigidTransform | None = None) -> "CameraView":
        f = width / (2.0 * np.tan(np.radians(fov_deg) / 2.0))
        return CameraView(f, f, width / 2.0, height / 2.0, width, height,
                          pose or RigidTransform.identity())

    @property
    def position(self) -> np.ndarray:
        return camera_position(self.pose)

    def with_pose(self, pose: RigidTransform) -> "CameraView":
        return replace(self, pose=pose)

    def project(self, points_world: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Project world points; returns ((N, 2) pixels, (N,) depths).

        Points behind the camera get negative depth; callers cull on it.
        """
        p = self.pose.apply(np.atleast_2d(points_world))
        z = p[:, 2]
        safe_z = np.where(np.abs(z) < 1e-12, 1e-12, z)
        u = self.fx * p[:, 0] / safe_z + self.cx
        v = self.fy * p[:, 1] / safe_z + self.cy
        return np.stack([u, v], axis=1), z

    def backproject(self, pixels: np.ndarray, depth: np.ndarray, to_world: bool = True) -> np.ndarray:
        """Lift pixels at the given depths into camera (or world) coordinates."""
        pix = np.atleast_2d(pixels).astype(np.float64)
        z = np.asarray(depth, dtype=np.float64).reshape(-1)
        x = (pix[:, 0] - self.cx) / self.fx * z
        y = (pix[:, 1] - self.cy) / self.fy * z
        p_cam = np.stack([x, y, z], axis=1)
        return self.pose.inverse().apply(p_cam) if to_world else p_cam

    def as_dict(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height, "pose": self.pose.as_dict(),
        }

    @staticmethod
    def from_dict(d: dict) -> "CameraView":
        return CameraView(d["fx"], d["fy"], d["cx"], d["cy"], d["width"], d["height"],
                          RigidTransform.from_dict(d["pose"]))
