"""Deterministic synthetic tabletop scenes with labelled gaussian objects.

Objects are sampled as gaussian clusters on parametric surfaces. Mug-like
composites carry a handle sub-cluster sharing the object label; the handle
(or an equivalent marked patch on spheres/boxes) is the "task part" that the
demo-view oracle cares about. Occluders are first-class labelled objects.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from splatview.cameras import CameraView
from splatview.geom import CorrespondenceSet, RigidTransform, look_at
from splatview.render import gaussian_visibility
from splatview.scene import GaussianScene

TABLE_LABEL = 0
SPEC_VERSION = 1

# Handle centroid offset from the body centroid, in units of object size.
MUG_HANDLE_OFFSET = 0.55

# Thin-axis to tangential-scale ratio of surface pancake splats.
PANCAKE_RATIO = 0.15


@dataclass
class ObjectSpec:
    shape: str  # sphere | box | mug | wall | arc_wall
    pose: RigidTransform
    size: float
    color: tuple = (0.8, 0.3, 0.2)
    label: int = 1
    extents: tuple | None = None  # walls/boxes: full (x, y, z) dimensions
    arc: dict | None = None  # arc_wall: {radius, center_az_deg, span_deg, height}

    def as_dict(self) -> dict:
        return {
            "shape": self.shape,
            "pose": self.pose.as_dict(),
            "size": self.size,
            "color": list(self.color),
            "label": self.label,
            "extents": list(self.extents) if self.extents else None,
            "arc": self.arc,
        }

    @staticmethod
    def from_dict(d: dict) -> "ObjectSpec":
        return ObjectSpec(
            d["shape"], RigidTransform.from_dict(d["pose"]), d["size"],
            tuple(d.get("color", (0.8, 0.3, 0.2))), d.get("label", 1),
            tuple(d["extents"]) if d.get("extents") else None, d.get("arc"),
        )


@dataclass
class ArmWorkspace:
    """Reachability stand-in: an azimuth sector and a height band."""

    azimuth_deg: tuple = (-360.0, 360.0)
    height_m: tuple = (0.0, 2.0)

    def as_dict(self) -> dict:
        return {"azimuth_deg": list(self.azimuth_deg), "height_m": list(self.height_m)}

    @staticmethod
    def from_dict(d: dict) -> "ArmWorkspace":
        return ArmWorkspace(tuple(d["azimuth_deg"]), tuple(d["height_m"]))


@dataclass
class SceneSpec:
    seed: int = 0
    table_extent: float = 0.8
    objects: list = field(default_factory=list)
    occluders: list = field(default_factory=list)
    gaussians_per_object: int = 400
    table_gaussians: int = 900
    rig_radius: float = 0.55
    rig_height: float = 0.45
    workspaces: dict = field(default_factory=lambda: {"A": ArmWorkspace(), "B": ArmWorkspace()})
    version: int = SPEC_VERSION

    def as_dict(self) -> dict:
        return {
            "version": self.version,
            "seed": self.seed,
            "table_extent": self.table_extent,
            "objects": [o.as_dict() for o in self.objects],
            "occluders": [o.as_dict() for o in self.occluders],
            "gaussians_per_object": self.gaussians_per_object,
            "table_gaussians": self.table_gaussians,
            "rig_radius": self.rig_radius,
            "rig_height": self.rig_height,
            "workspaces": {k: w.as_dict() for k, w in self.workspaces.items()},
        }

    @staticmethod
    def from_dict(d: dict) -> "SceneSpec":
        return SceneSpec(
            seed=d.get("seed", 0),
            table_extent=d.get("table_extent", 0.8),
            objects=[ObjectSpec.from_dict(o) for o in d.get("objects", [])],
            occluders=[ObjectSpec.from_dict(o) for o in d.get("occluders", [])],
            gaussians_per_object=d.get("gaussians_per_object", 400),
            table_gaussians=d.get("table_gaussians", 900),
            rig_radius=d.get("rig_radius", 0.55),
            rig_height=d.get("rig_height", 0.45),
            workspaces={k: ArmWorkspace.from_dict(w) for k, w in d.get("workspaces", {}).items()}
            or {"A": ArmWorkspace(), "B": ArmWorkspace()},
            version=d.get("version", SPEC_VERSION),
        )


@dataclass
class GroundTruth:
    poses: dict  # label -> RigidTransform (object frame -> world)
    centers: dict  # label -> (3,) world centre of the cluster
    ownership: dict  # label -> gaussian index array
    part_indices: dict  # label -> index array of the task-part sub-cluster

    def copy(self) -> "GroundTruth":
        return GroundTruth(dict(self.poses), {k: v.copy() for k, v in self.centers.items()},
                           {k: v.copy() for k, v in self.ownership.items()},
                           {k: v.copy() for k, v in self.part_indices.items()})


def _sphere_cluster(rng, n, size):
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    pts = 0.5 * size * d
    part = np.nonzero(d[:, 0] > math.cos(math.radians(40.0)))[0]
    return pts, d.copy(), part


def _box_cluster(rng, n, size, extents=None):
    ext = np.asarray(extents if extents is not None else (size, size, size), dtype=np.float64)
    half = ext / 2.0
    areas = np.array([ext[1] * ext[2], ext[1] * ext[2], ext[0] * ext[2],
                      ext[0] * ext[2], ext[0] * ext[1], ext[0] * ext[1]])
    face = rng.choice(6, size=n, p=areas / areas.sum())
    pts = rng.uniform(-1, 1, size=(n, 3)) * half
    axis = face // 2
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    pts[np.arange(n), axis] = sign * half[axis]
    normals = np.zeros((n, 3))
    normals[np.arange(n), axis] = sign
    part = np.nonzero(face == 0)[0]  # +x face
    return pts, normals, part


def _mug_cluster(rng, n, size):
    body_r = 0.35 * size
    n_handle = max(8, n // 6)
    n_body = n - n_handle
    # Lateral surface plus a bottom disc.
    theta = rng.uniform(0, 2 * math.pi, size=n_body)
    z = rng.uniform(-0.5 * size, 0.5 * size, size=n_body)
    pts = np.stack([body_r * np.cos(theta), body_r * np.sin(theta), z], axis=1)
    normals = np.stack([np.cos(theta), np.sin(theta), np.zeros(n_body)], axis=1)
    n_disc = n_body // 6
    rr = body_r * np.sqrt(rng.uniform(0, 1, size=n_disc))
    th2 = rng.uniform(0, 2 * math.pi, size=n_disc)
    pts[:n_disc] = np.stack([rr * np.cos(th2), rr * np.sin(th2), np.full(n_disc, -0.5 * size)], axis=1)
    normals[:n_disc] = [0.0, 0.0, -1.0]

    # Handle: arc in the xz-plane on the +x side, re-centred so its centroid
    # sits exactly MUG_HANDLE_OFFSET * size from the body axis.
    ang = rng.uniform(-math.radians(80), math.radians(80), size=n_handle)
    h_r = 0.30 * size
    tube = 0.035 * size
    hx = h_r * np.cos(ang) + rng.normal(scale=tube, size=n_handle)
    hy = rng.normal(scale=tube, size=n_handle)
    hz = h_r * np.sin(ang) * 1.2 + rng.normal(scale=tube, size=n_handle)
    handle = np.stack([hx, hy, hz], axis=1)
    handle[:, 0] += MUG_HANDLE_OFFSET * size - handle[:, 0].mean()
    handle[:, 1] -= handle[:, 1].mean()
    handle[:, 2] -= handle[:, 2].mean()
    h_norm = np.stack([np.cos(ang), np.zeros(n_handle), np.sin(ang)], axis=1)

    pts = np.vstack([pts, handle])
    normals = np.vstack([normals, h_norm])
    part = np.arange(n_body, n_body + n_handle)
    return pts, normals, part


def _arc_wall_cluster(rng, n, arc):
    radius = arc["radius"]
    center_az = math.radians(arc.get("center_az_deg", 0.0))
    span = math.radians(arc["span_deg"])
    height = arc["height"]
    az = center_az + rng.uniform(-span / 2, span / 2, size=n)
    z = rng.uniform(0.0, height, size=n)
    pts = np.stack([radius * np.cos(az), radius * np.sin(az), z], axis=1)
    normals = np.stack([-np.cos(az), -np.sin(az), np.zeros(n)], axis=1)
    return pts, normals, np.array([], dtype=int)


def _normal_quats(normals: np.ndarray) -> np.ndarray:
    """Quaternions rotating local +z onto each normal (shortest arc)."""
    n = normals / np.maximum(np.linalg.norm(normals, axis=1, keepdims=True), 1e-12)
    w = 1.0 + n[:, 2]
    quats = np.stack([w, -n[:, 1], n[:, 0], np.zeros(n.shape[0])], axis=1)
    flipped = w < 1e-8  # normal points along -z: rotate pi about x
    quats[flipped] = [0.0, 1.0, 0.0, 0.0]
    return quats / np.linalg.norm(quats, axis=1, keepdims=True)


def _cluster_scale(pts: np.ndarray, n: int) -> float:
    if pts.shape[0] < 2:
        return 0.01
    extent = pts.max(axis=0) - pts.min(axis=0)
    area = 2.0 * (extent[0] * extent[1] + extent[1] * extent[2] + extent[0] * extent[2])
    return float(np.clip(0.9 * math.sqrt(max(area, 1e-8) / max(n, 1)), 2e-3, 0.05))


def _object_gaussians(rng, obj: ObjectSpec, n: int):
    if obj.shape == "sphere":
        pts, normals, part = _sphere_cluster(rng, n, obj.size)
    elif obj.shape in ("box", "wall"):
        pts, normals, part = _box_cluster(rng, n, obj.size, obj.extents)
    elif obj.shape == "mug":
        pts, normals, part = _mug_cluster(rng, n, obj.size)
    elif obj.shape == "arc_wall":
        pts, normals, part = _arc_wall_cluster(rng, n, obj.arc)
    else:
        raise ValueError(f"unknown shape {obj.shape!r}")
    world = obj.pose.apply(pts)
    # Pancake splats: thin axis (local z) aligned with the world surface normal.
    quats = _normal_quats(normals @ obj.pose.rotation_matrix.T)
    scale = _cluster_scale(pts, n)
    base = np.asarray(obj.color, dtype=np.float64)
    colors = np.clip(base + rng.uniform(-0.08, 0.08, size=(pts.shape[0], 3)), 0.02, 0.98)
    # Task-part gaussians get a darker shade so image-only matchers see them.
    colors[part] = np.clip(base * 0.45, 0.02, 0.98)
    return world, quats, colors, scale, part


def generate_scene(spec: SceneSpec) -> tuple[GaussianScene, GroundTruth]:
    """Build the labelled scene and its ground truth. Deterministic in spec.seed."""
    rng = np.random.default_rng(spec.seed)
    labels_seen = set()
    for obj in spec.objects + spec.occluders:
        if obj.label < 1:
            raise ValueError("object labels must be >= 1")
        if obj.label in labels_seen:
            raise ValueError(f"duplicate label {obj.label}")
        labels_seen.add(obj.label)
    _check_object_overlap(spec.objects)

    means, log_scales, quats, colors, labels = [], [], [], [], []
    opacity = []

    # Table: jittered grid of flat pancakes with a two-tone checker pattern.
    half = spec.table_extent / 2.0
    nt = spec.table_gaussians
    side = max(2, int(math.sqrt(nt)))
    gx, gy = np.meshgrid(np.linspace(-half, half, side), np.linspace(-half, half, side))
    txy = np.stack([gx.ravel(), gy.ravel()], axis=1)
    txy += rng.uniform(-0.3, 0.3, size=txy.shape) * (spec.table_extent / side)
    tpts = np.concatenate([txy, np.zeros((txy.shape[0], 1))], axis=1)
    checker = ((np.floor(txy[:, 0] / 0.1) + np.floor(txy[:, 1] / 0.1)) % 2).astype(bool)
    tcol = np.where(checker[:, None], [0.55, 0.52, 0.48], [0.35, 0.34, 0.33])
    tcol = np.clip(tcol + rng.uniform(-0.05, 0.05, size=tcol.shape), 0.02, 0.98)
    tscale = 1.1 * spec.table_extent / side
    means.append(tpts)
    colors.append(tcol)
    log_scales.append(np.tile(np.log([tscale, tscale, PANCAKE_RATIO * tscale]), (tpts.shape[0], 1)))
    quats.append(np.tile([1.0, 0.0, 0.0, 0.0], (tpts.shape[0], 1)))
    opacity.append(np.full(tpts.shape[0], 1.6))
    labels.append(np.zeros(tpts.shape[0], dtype=np.uint32))

    poses, centers, ownership, part_map = {}, {}, {}, {}
    offset = tpts.shape[0]
    for obj in spec.objects + spec.occluders:
        pts, q, cols, scale, part = _object_gaussians(rng, obj, spec.gaussians_per_object)
        n = pts.shape[0]
        means.append(pts)
        quats.append(q)
        colors.append(cols)
        log_scales.append(np.tile(np.log([scale, scale, PANCAKE_RATIO * scale]), (n, 1)))
        opacity.append(np.full(n, 2.2))
        labels.append(np.full(n, obj.label, dtype=np.uint32))
        poses[obj.label] = obj.pose
        centers[obj.label] = 0.5 * (pts.min(axis=0) + pts.max(axis=0))
        ownership[obj.label] = np.arange(offset, offset + n)
        part_map[obj.label] = part + offset
        offset += n

    scene = GaussianScene(
        np.vstack(means), np.vstack(log_scales), np.vstack(quats),
        np.concatenate(opacity), np.vstack(colors), np.concatenate(labels),
    )
    return scene, GroundTruth(poses, centers, ownership, part_map)


def _check_object_overlap(objects) -> None:
    boxes = []
    for obj in objects:
        if obj.extents:
            r = max(obj.extents) / 2.0
        elif obj.shape == "mug":
            r = 0.9 * obj.size  # handle sticks out past the body
        else:
            r = obj.size / 2.0
        c = obj.pose.trans
        boxes.append((c - r, c + r, obj.label))
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            lo_i, hi_i, li = boxes[i]
            lo_j, hi_j, lj = boxes[j]
            if np.all(hi_i > lo_j) and np.all(hi_j > lo_i):
                raise ValueError(f"objects {li} and {lj} have overlapping bounding boxes")


DEFAULT_IMAGE_SIZE = 96
DEFAULT_FOV_DEG = 60.0


def default_camera(pose: RigidTransform | None = None, size: int = DEFAULT_IMAGE_SIZE) -> CameraView:
    return CameraView.from_fov(size, size, DEFAULT_FOV_DEG, pose or RigidTransform.identity())


def exploration_rig(center, radius: float, height: float, views_per_arm: int = 3,
                    camera: CameraView | None = None) -> list[CameraView]:
    """Evenly spaced ring of exploration views around ``center``.

    2 * views_per_arm cameras; the default 3 per arm gives the 60-degree
    spacing of the dual-arm sweep. The first half belongs to arm A, the
    second half to arm B.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    template = camera or default_camera()
    center = np.asarray(center, dtype=np.float64)
    n = 2 * views_per_arm
    views = []
    for i in range(n):
        az = 2.0 * math.pi * i / n
        eye = center + np.array([radius * math.cos(az), radius * math.sin(az), height])
        views.append(template.with_pose(look_at(eye, center, up=(0, 0, 1))))
    return views


def rig_arm(index: int, views_per_arm: int = 3) -> str:
    return "A" if index < views_per_arm else "B"


def apply_object_transform(scene: GaussianScene, gt: GroundTruth, label: int,
                           delta: RigidTransform) -> tuple[GaussianScene, GroundTruth]:
    """Rigidly move one labelled object (world-frame delta); updates ground truth."""
    if label not in gt.ownership:
        raise KeyError(f"unknown label {label}")
    moved = scene.transform_label(label, delta)
    gt2 = gt.copy()
    gt2.poses[label] = delta @ gt.poses[label]
    gt2.centers[label] = delta.apply(gt.centers[label])
    return moved, gt2


def oracle_correspondences(
    scene: GaussianScene,
    gt: GroundTruth,
    cam_a: CameraView,
    cam_b: CameraView,
    label: int,
    n: int = 256,
    noise_px: float = 0.0,
    seed: int = 0,
    scene_b: GaussianScene | None = None,
    depth_noise_m: float = 0.0,
) -> CorrespondenceSet:
    """Ground-truth matches for one object between two views.

    ``scene_b`` lets the second view observe a different scene state (the
    moved test scene) while gaussian identities still pair up; by default
    both views see ``scene``. Points are depth-lifted from the (optionally
    noisy) pixels, expressed in each view's camera frame.
    """
    if label not in gt.ownership:
        raise KeyError(f"unknown label {label}")
    scene_b = scene_b if scene_b is not None else scene
    idx = gt.ownership[label]
    vis_a = gaussian_visibility(scene, cam_a, idx)
    vis_b = gaussian_visibility(scene_b, cam_b, idx)
    both = (vis_a > 0.5) & (vis_b > 0.5)
    cand = np.nonzero(both)[0]
    rng = np.random.default_rng(seed)
    if cand.size > n:
        cand = np.sort(rng.choice(cand, size=n, replace=False))
    sel = idx[cand]
    if sel.size == 0:
        empty = np.zeros((0, 3))
        return CorrespondenceSet(empty, empty, np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0))

    pix_a, z_a = cam_a.project(scene.means[sel].astype(np.float64))
    pix_b, z_b = cam_b.project(scene_b.means[sel].astype(np.float64))
    if noise_px > 0:
        pix_a = pix_a + rng.normal(scale=noise_px, size=pix_a.shape)
        pix_b = pix_b + rng.normal(scale=noise_px, size=pix_b.shape)
    if depth_noise_m > 0:
        z_a = z_a + rng.normal(scale=depth_noise_m, size=z_a.shape)
        z_b = z_b + rng.normal(scale=depth_noise_m, size=z_b.shape)
    pts_a = cam_a.backproject(pix_a, z_a, to_world=False)
    pts_b = cam_b.backproject(pix_b, z_b, to_world=False)
    conf = np.clip(vis_a[cand] * vis_b[cand], 0.0, 1.0)
    return CorrespondenceSet(pts_a, pts_b, pix_a, pix_b, conf, source="oracle")


_GRIPPER_CACHE: dict = {}


def gripper_proxy(cam: CameraView, area_fraction: float = 0.08, feather_px: float = 4.0) -> np.ndarray:
    """Fixed wrist-gripper silhouette: a feathered bottom-centre trapezoid.

    Identical for every camera of the same resolution; only the image size
    matters, mirroring a gripper rigidly attached in front of the lens.
    """
    key = (cam.height, cam.width, round(area_fraction, 6), round(feather_px, 3))
    if key in _GRIPPER_CACHE:
        return _GRIPPER_CACHE[key]
    height, width = cam.height, cam.width
    wb = 0.42 * width
    wt = 0.55 * wb
    h = area_fraction * height * width / (0.5 * (wb + wt))
    ys, xs = np.mgrid[0:height, 0:width]
    frac = np.clip((height - 1 - ys) / max(h, 1e-9), 0.0, 1.0)  # 1 at bottom edge
    half_w = 0.5 * (wb * frac + wt * (1 - frac))
    inside = (np.abs(xs - (width - 1) / 2.0) <= half_w) & ((height - 1 - ys) <= h)
    d_in = ndimage.distance_transform_edt(inside)
    mask = np.clip(d_in / max(feather_px, 1e-9), 0.0, 1.0).astype(np.float32)
    _GRIPPER_CACHE[key] = mask
    return mask
