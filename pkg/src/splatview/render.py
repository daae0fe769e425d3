"""Forward splat rendering, camera-pose gradients and depth-based helpers.

Rendering follows the usual EWA recipe: project each gaussian to an image
ellipse, sort globally by depth, then alpha-composite front to back. The
global sort (rather than exact per-pixel ordering) is locked in by golden
images.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from splatview._raster import composite_forward, transmittance_at
from splatview.cameras import CameraView
from splatview.geom import RigidTransform, TangentVector6, compose, exp
from splatview.scene import GaussianScene

NEAR_PLANE = 0.02
COV2D_REG = 0.3  # px^2 added to the diagonal so footprints never degenerate


@dataclass
class RenderOutput:
    color: np.ndarray  # (H, W, 3) in [0, 1]
    alpha: np.ndarray  # (H, W) in [0, 1]
    depth: np.ndarray  # (H, W) m, alpha-weighted expected depth
    label_masks: dict  # label -> (H, W) soft mask

    def object_mask(self, label: int | None = None) -> np.ndarray:
        if label is None:
            if len(self.label_masks) != 1:
                raise ValueError("label must be given when several masks were rendered")
            return next(iter(self.label_masks.values()))
        return self.label_masks[label]


@dataclass
class Projection:
    """Per-gaussian screen-space quantities for the visible subset, depth sorted."""

    index: np.ndarray  # indices into the scene arrays
    u: np.ndarray
    v: np.ndarray
    cov_a: np.ndarray
    cov_b: np.ndarray
    cov_c: np.ndarray
    depth: np.ndarray
    radius: np.ndarray
    bmat: np.ndarray  # (M, 2, 3) J W R S, feeds scale gradients


def _project_arrays(scene: GaussianScene, cam: CameraView, cull_offscreen: bool = True) -> Projection:
    n = len(scene)
    R_wc = cam.pose.rotation_matrix
    p_cam = scene.means.astype(np.float64) @ R_wc.T + cam.pose.trans
    z = p_cam[:, 2]
    valid = z > NEAR_PLANE

    zs = np.where(valid, z, 1.0)
    u = cam.fx * p_cam[:, 0] / zs + cam.cx
    v = cam.fy * p_cam[:, 1] / zs + cam.cy

    A = scene.covariance_factors()

    J = np.zeros((n, 2, 3))
    J[:, 0, 0] = cam.fx / zs
    J[:, 1, 1] = cam.fy / zs
    J[:, 0, 2] = -cam.fx * p_cam[:, 0] / zs**2
    J[:, 1, 2] = -cam.fy * p_cam[:, 1] / zs**2
    M = J @ R_wc
    B = np.einsum("nij,njk->nik", M, A)
    cov = np.einsum("nik,njk->nij", B, B)
    cov_a = cov[:, 0, 0] + COV2D_REG
    cov_b = cov[:, 0, 1]
    cov_c = cov[:, 1, 1] + COV2D_REG

    mid = 0.5 * (cov_a + cov_c)
    lam = mid + np.sqrt(np.maximum(mid**2 - (cov_a * cov_c - cov_b**2), 0.0))
    radius = 3.0 * np.sqrt(lam)

    if cull_offscreen:
        valid &= (u + radius >= -0.5) & (u - radius <= cam.width - 0.5)
        valid &= (v + radius >= -0.5) & (v - radius <= cam.height - 0.5)

    idx = np.nonzero(valid)[0]
    order = idx[np.argsort(z[idx], kind="stable")]
    return Projection(
        index=order,
        u=u[order], v=v[order],
        cov_a=cov_a[order], cov_b=cov_b[order], cov_c=cov_c[order],
        depth=z[order], radius=radius[order],
        bmat=B[order],
    )


def project_gaussian(scene: GaussianScene, i: int, cam: CameraView):
    """Screen-space footprint of one gaussian: (mean2d, cov2d, depth), or None if culled."""
    proj = _project_arrays(scene.subset([i]), cam)
    if proj.index.size == 0:
        return None
    cov = np.array([[proj.cov_a[0], proj.cov_b[0]], [proj.cov_b[0], proj.cov_c[0]]])
    return np.array([proj.u[0], proj.v[0]]), cov, float(proj.depth[0])


def render(scene: GaussianScene, cam: CameraView, labels: Sequence[int] = ()) -> RenderOutput:
    """Render the scene; ``labels`` selects which soft masks to produce."""
    if len(scene) == 0:
        raise ValueError("cannot render an empty scene")
    proj = _project_arrays(scene, cam)
    label_list = list(labels)
    label_ch = np.full(proj.index.size, -1, dtype=np.int64)
    scene_labels = scene.labels[proj.index]
    for ch, lab in enumerate(label_list):
        label_ch[scene_labels == np.uint32(lab)] = ch

    opac = 1.0 / (1.0 + np.exp(-scene.opacity_logits[proj.index].astype(np.float64)))
    rgb = scene.colors[proj.index].astype(np.float64)

    img, depth_acc, trans, masks = composite_forward(
        proj.u, proj.v, proj.cov_a, proj.cov_b, proj.cov_c,
        proj.depth, opac, rgb, label_ch, len(label_list),
        cam.height, cam.width,
    )
    alpha = 1.0 - trans
    with np.errstate(invalid="ignore", divide="ignore"):
        depth = np.where(alpha > 1e-8, depth_acc / np.maximum(alpha, 1e-12), 0.0)
    return RenderOutput(
        color=img.astype(np.float32),
        alpha=alpha.astype(np.float32),
        depth=depth.astype(np.float32),
        label_masks={lab: masks[ch].astype(np.float32) for ch, lab in enumerate(label_list)},
    )


def perturb_pose(pose: RigidTransform, tangent: np.ndarray) -> RigidTransform:
    """Left-multiplied (camera-local) perturbation of a world-to-camera pose."""
    return compose(exp(TangentVector6.from_array(tangent)), pose)


def tangent_central_difference(f: Callable[[RigidTransform], float], pose: RigidTransform,
                               eps: float = 1e-4) -> TangentVector6:
    """Central differences of a scalar pose function over the 6 tangent axes."""
    g = np.zeros(6)
    for k in range(6):
        step = np.zeros(6)
        step[k] = eps
        hi = f(perturb_pose(pose, step))
        lo = f(perturb_pose(pose, -step))
        g[k] = (hi - lo) / (2.0 * eps)
    return TangentVector6(g[:3], g[3:])


def pose_gradient(scene: GaussianScene, cam: CameraView, loss: Callable[[RenderOutput], float],
                  labels: Sequence[int] = (), eps: float = 1e-4) -> TangentVector6:
    """Gradient of a render-based loss w.r.t. the camera pose tangent.

    Computed by central differences over the 6 tangent directions
    (12 renders); ``eps`` is the tangent step.
    """
    def f(pose: RigidTransform) -> float:
        return float(loss(render(scene, cam.with_pose(pose), labels)))

    return tangent_central_difference(f, cam.pose, eps)


def gaussian_visibility(scene: GaussianScene, cam: CameraView, indices: np.ndarray | None = None) -> np.ndarray:
    """Per-gaussian visibility: transmittance at the projected center, zero off-frustum.

    Splats closer than a margin (same-surface neighbours) do not occlude.
    """
    if indices is None:
        indices = np.arange(len(scene))
    indices = np.asarray(indices)
    proj = _project_arrays(scene, cam, cull_offscreen=False)
    opac = 1.0 / (1.0 + np.exp(-scene.opacity_logits[proj.index].astype(np.float64)))

    pix, z = cam.project(scene.means[indices].astype(np.float64))
    in_view = (
        (z > NEAR_PLANE)
        & (pix[:, 0] >= 0) & (pix[:, 0] <= cam.width - 1)
        & (pix[:, 1] >= 0) & (pix[:, 1] <= cam.height - 1)
    )
    s_iso = np.exp(scene.log_scales[indices].astype(np.float64)).mean(axis=1)
    margin = np.maximum(0.02, 4.0 * s_iso)

    vis = np.zeros(indices.size)
    if in_view.any():
        t = transmittance_at(
            proj.u, proj.v, proj.cov_a, proj.cov_b, proj.cov_c, proj.depth, opac, proj.radius,
            pix[in_view, 0], pix[in_view, 1], z[in_view], margin[in_view],
        )
        vis[in_view] = t
    return vis


def visible_fraction(scene: GaussianScene, cam: CameraView, label: int, threshold: float = 0.5) -> float:
    """Fraction of a label's gaussians whose visibility exceeds the threshold."""
    idx = scene.label_indices(label)
    if idx.size == 0:
        return 0.0
    return float((gaussian_visibility(scene, cam, idx) > threshold).mean())


def estimate_object_center(views: Sequence[tuple[CameraView, np.ndarray, np.ndarray]]) -> np.ndarray:
    """Centre of the bounding box of back-projected masked depth pixels.

    Each view is (camera, depth image, soft object mask). Per-axis 3-sigma
    outlier rejection runs before the box is taken. Raises if no view
    contributes any masked pixel.
    """
    points = []
    for cam, depth, mask in views:
        sel = (np.asarray(mask) > 0.7) & (np.asarray(depth) > 0)
        if not sel.any():
            sel = (np.asarray(mask) > 0.5) & (np.asarray(depth) > 0)
        if not sel.any():
            continue
        vy, vx = np.nonzero(sel)
        pix = np.stack([vx.astype(np.float64), vy.astype(np.float64)], axis=1)
        points.append(cam.backproject(pix, np.asarray(depth)[sel], to_world=True))
    if not points:
        raise ValueError("all object masks are empty")
    pts = np.vstack(points)
    for _ in range(2):
        mu = pts.mean(axis=0)
        sd = pts.std(axis=0)
        keep = np.all(np.abs(pts - mu) <= 3.0 * np.maximum(sd, 1e-9), axis=1)
        if keep.all() or not keep.any():
            break
        pts = pts[keep]
    return 0.5 * (pts.min(axis=0) + pts.max(axis=0))
