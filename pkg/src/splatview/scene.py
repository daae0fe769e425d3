"""Gaussian scene container and its versioned binary file format.

Arrays are stored as float32 (labels as uint32) so that save/load round-trips
are bit-exact. The file is a single-line JSON header followed by a packed
little-endian record array with fixed field order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from splatview.geom import RigidTransform, quat_to_matrix

SCENE_FORMAT_VERSION = 1
MIN_SCALE = 1e-5
MAX_SCALE = 1.0

# Reserved label for end-effector geometry rendered into the scene.
GRIPPER_LABEL = 4_000_000_000

RECORD_DTYPE = np.dtype(
    [
        ("mean", "<f4", 3),
        ("log_scales", "<f4", 3),
        ("quat", "<f4", 4),
        ("opacity_logit", "<f4"),
        ("color", "<f4", 3),
        ("label", "<u4"),
    ]
)


@dataclass(frozen=True)
class Gaussian3D:
    """A single labelled anisotropic gaussian (convenience view)."""

    mean: np.ndarray
    log_scales: np.ndarray
    quat: np.ndarray
    opacity_logit: float
    color: np.ndarray
    label: int


class GaussianScene:
    """A collection of labelled 3D gaussians with an axis-aligned bound."""

    def __init__(self, means, log_scales, quats, opacity_logits, colors, labels, version=SCENE_FORMAT_VERSION):
        self.means = np.ascontiguousarray(means, dtype=np.float32).reshape(-1, 3)
        n = self.means.shape[0]
        self.log_scales = np.clip(
            np.ascontiguousarray(log_scales, dtype=np.float32).reshape(n, 3),
            np.log(MIN_SCALE), np.log(MAX_SCALE),
        )
        quats = np.ascontiguousarray(quats, dtype=np.float64).reshape(n, 4)
        norms = np.linalg.norm(quats, axis=1, keepdims=True)
        if n and norms.min() < 1e-9:
            raise ValueError("zero-norm gaussian rotation")
        self.quats = (quats / norms).astype(np.float32)
        self.opacity_logits = np.ascontiguousarray(opacity_logits, dtype=np.float32).reshape(n)
        self.colors = np.clip(np.ascontiguousarray(colors, dtype=np.float32).reshape(n, 3), 0.0, 1.0)
        self.labels = np.ascontiguousarray(labels, dtype=np.uint32).reshape(n)
        self.version = version
        self._cov_factors = None  # lazy R @ diag(S); scenes are immutable once rendered

    def __len__(self) -> int:
        return self.means.shape[0]

    def __getitem__(self, i: int) -> Gaussian3D:
        return Gaussian3D(
            self.means[i], self.log_scales[i], self.quats[i],
            float(self.opacity_logits[i]), self.colors[i], int(self.labels[i]),
        )

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    @property
    def bbox(self) -> np.ndarray:
        """(2, 3) lower/upper bound of the means."""
        if len(self) == 0:
            return np.zeros((2, 3), dtype=np.float32)
        return np.stack([self.means.min(axis=0), self.means.max(axis=0)])

    def label_indices(self, label: int) -> np.ndarray:
        return np.nonzero(self.labels == np.uint32(label))[0]

    def subset(self, indices) -> "GaussianScene":
        return GaussianScene(
            self.means[indices], self.log_scales[indices], self.quats[indices],
            self.opacity_logits[indices], self.colors[indices], self.labels[indices],
            self.version,
        )

    def concat(self, other: "GaussianScene") -> "GaussianScene":
        return GaussianScene(
            np.vstack([self.means, other.means]),
            np.vstack([self.log_scales, other.log_scales]),
            np.vstack([self.quats, other.quats]),
            np.concatenate([self.opacity_logits, other.opacity_logits]),
            np.vstack([self.colors, other.colors]),
            np.concatenate([self.labels, other.labels]),
            self.version,
        )

    def copy(self) -> "GaussianScene":
        return self.subset(slice(None))

    def transform_label(self, label: int, delta: RigidTransform) -> "GaussianScene":
        """Rigidly move every gaussian carrying ``label`` by ``delta`` (world frame)."""
        idx = self.label_indices(label)
        if idx.size == 0:
            raise KeyError(f"label {label} not present in scene")
        out = self.copy()
        out.means[idx] = delta.apply(out.means[idx].astype(np.float64)).astype(np.float32)
        dq = delta.quat
        q = out.quats[idx].astype(np.float64)
        # Hamilton product dq * q, vectorized over rows.
        w = dq[0] * q[:, 0] - dq[1] * q[:, 1] - dq[2] * q[:, 2] - dq[3] * q[:, 3]
        x = dq[0] * q[:, 1] + dq[1] * q[:, 0] + dq[2] * q[:, 3] - dq[3] * q[:, 2]
        y = dq[0] * q[:, 2] - dq[1] * q[:, 3] + dq[2] * q[:, 0] + dq[3] * q[:, 1]
        z = dq[0] * q[:, 3] + dq[1] * q[:, 2] - dq[2] * q[:, 1] + dq[3] * q[:, 0]
        out.quats[idx] = np.stack([w, x, y, z], axis=1).astype(np.float32)
        return out

    def rotation_matrices(self) -> np.ndarray:
        """(N, 3, 3) rotation matrices from the per-gaussian quaternions."""
        q = self.quats.astype(np.float64)
        q = q / np.linalg.norm(q, axis=1, keepdims=True)
        w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
        R = np.empty((len(self), 3, 3))
        R[:, 0, 0] = 1 - 2 * (y * y + z * z)
        R[:, 0, 1] = 2 * (x * y - w * z)
        R[:, 0, 2] = 2 * (x * z + w * y)
        R[:, 1, 0] = 2 * (x * y + w * z)
        R[:, 1, 1] = 1 - 2 * (x * x + z * z)
        R[:, 1, 2] = 2 * (y * z - w * x)
        R[:, 2, 0] = 2 * (x * z - w * y)
        R[:, 2, 1] = 2 * (y * z + w * x)
        R[:, 2, 2] = 1 - 2 * (x * x + y * y)
        return R

    def covariance_factors(self) -> np.ndarray:
        """(N, 3, 3) factors R @ diag(scales); Sigma = F F^T. Cached."""
        if self._cov_factors is None:
            S = np.exp(self.log_scales.astype(np.float64))
            self._cov_factors = self.rotation_matrices() * S[:, None, :]
        return self._cov_factors

    def save(self, path: str | Path) -> None:
        path = Path(path)
        header = {
            "format": "splatview-scene",
            "version": self.version,
            "count": len(self),
            "bbox": self.bbox.tolist(),
        }
        rec = np.empty(len(self), dtype=RECORD_DTYPE)
        rec["mean"] = self.means
        rec["log_scales"] = self.log_scales
        rec["quat"] = self.quats
        rec["opacity_logit"] = self.opacity_logits
        rec["color"] = self.colors
        rec["label"] = self.labels
        with open(path, "wb") as f:
            f.write(json.dumps(header, sort_keys=True).encode("utf-8"))
            f.write(b"\n")
            f.write(rec.tobytes())

    @staticmethod
    def load(path: str | Path) -> "GaussianScene":
        with open(path, "rb") as f:
            header_line = f.readline()
            header = json.loads(header_line.decode("utf-8"))
            if header.get("format") != "splatview-scene":
                raise ValueError(f"{path}: not a scene file")
            rec = np.frombuffer(f.read(), dtype=RECORD_DTYPE)
        if rec.shape[0] != header["count"]:
            raise ValueError(f"{path}: record count mismatch")
        return GaussianScene(
            rec["mean"], rec["log_scales"], rec["quat"],
            rec["opacity_logit"], rec["color"], rec["label"],
            header["version"],
        )


def single_gaussian_scene(mean, scale: float, color=(1.0, 1.0, 1.0), opacity: float = 0.95,
                          label: int = 1, quat=(1.0, 0.0, 0.0, 0.0)) -> GaussianScene:
    """Convenience constructor used by tests and small demos."""
    logit = float(np.log(opacity / (1 - opacity)))
    return GaussianScene(
        np.asarray(mean, dtype=np.float64).reshape(1, 3),
        np.full((1, 3), np.log(scale)),
        np.asarray(quat, dtype=np.float64).reshape(1, 4),
        np.array([logit]),
        np.asarray(color, dtype=np.float64).reshape(1, 3),
        np.array([label], dtype=np.uint32),
    )


def gaussian_rotation_matrix(quat: np.ndarray) -> np.ndarray:
    return quat_to_matrix(np.asarray(quat, dtype=np.float64) / np.linalg.norm(quat))
