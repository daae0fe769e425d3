"""Scene fitting from a handful of posed RGB-D views.

Gaussians are seeded by back-projecting a stratified subsample of each depth
map (positions and orientations stay fixed), then colors, opacities and
scales are optimized against the input images with an L1 + D-SSIM loss.
The rasterizer backward pass is hand-rolled (see ``_raster``); torch supplies
the image-space loss gradient and the Adam updates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from splatview._raster import composite_backward, composite_forward
from splatview.cameras import CameraView
from splatview.render import NEAR_PLANE, COV2D_REG
from splatview.scene import MAX_SCALE, MIN_SCALE, GaussianScene


class FitView(NamedTuple):
    camera: CameraView
    image: np.ndarray   # (H, W, 3) float in [0, 1]
    depth: np.ndarray   # (H, W) m, 0 where empty
    labels: np.ndarray  # (H, W) uint32


@dataclass
class FitConfig:
    max_gaussians: int = 20_000
    steps: int = 150
    lr_color: float = 0.05
    lr_opacity: float = 0.05
    lr_scale: float = 0.01
    dssim_weight: float = 0.2
    init_opacity: float = 0.8
    scale_factor: float = 0.7  # times the back-projected neighbour spacing


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> torch.Tensor:
    xs = torch.arange(size, dtype=torch.float64) - size // 2
    g = torch.exp(-(xs**2) / (2 * sigma**2))
    g = g / g.sum()
    win = torch.outer(g, g)
    return win.expand(3, 1, size, size).contiguous()


_WINDOW = _gaussian_window()


def dssim_l1_loss(img: torch.Tensor, target: torch.Tensor, dssim_weight: float) -> torch.Tensor:
    """(1 - w) * L1 + w * (1 - SSIM) / 2 on (H, W, 3) tensors."""
    l1 = (img - target).abs().mean()
    x = img.permute(2, 0, 1).unsqueeze(0)
    y = target.permute(2, 0, 1).unsqueeze(0)
    pad = _WINDOW.shape[-1] // 2
    mu_x = F.conv2d(x, _WINDOW, padding=pad, groups=3)
    mu_y = F.conv2d(y, _WINDOW, padding=pad, groups=3)
    sig_x = F.conv2d(x * x, _WINDOW, padding=pad, groups=3) - mu_x**2
    sig_y = F.conv2d(y * y, _WINDOW, padding=pad, groups=3) - mu_y**2
    sig_xy = F.conv2d(x * y, _WINDOW, padding=pad, groups=3) - mu_x * mu_y
    c1, c2 = 0.01**2, 0.03**2
    ssim = ((2 * mu_x * mu_y + c1) * (2 * sig_xy + c2)) / (
        (mu_x**2 + mu_y**2 + c1) * (sig_x + sig_y + c2)
    )
    return (1.0 - dssim_weight) * l1 + dssim_weight * (1.0 - ssim.mean()) / 2.0


def _stratified_pixels(height: int, width: int, target: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic grid subsample of roughly ``target`` pixel centres."""
    stride = max(1, int(math.sqrt(height * width / max(target, 1))))
    ys = np.arange(stride // 2, height, stride)
    xs = np.arange(stride // 2, width, stride)
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    return gy.ravel(), gx.ravel(), stride


class _ViewCache:
    """Per-view screen-space quantities that stay fixed while fitting."""

    def __init__(self, view: FitView, means: np.ndarray):
        cam = view.camera
        R = cam.pose.rotation_matrix
        p_cam = means @ R.T + cam.pose.trans
        z = p_cam[:, 2]
        valid = z > NEAR_PLANE
        idx = np.nonzero(valid)[0]
        order = idx[np.argsort(z[idx], kind="stable")]
        zs = z[order]
        xs = p_cam[order, 0]
        ys = p_cam[order, 1]
        self.order = order
        self.u = cam.fx * xs / zs + cam.cx
        self.v = cam.fy * ys / zs + cam.cy
        J = np.zeros((order.size, 2, 3))
        J[:, 0, 0] = cam.fx / zs
        J[:, 1, 1] = cam.fy / zs
        J[:, 0, 2] = -cam.fx * xs / zs**2
        J[:, 1, 2] = -cam.fy * ys / zs**2
        self.M = J @ R
        self.target = torch.from_numpy(np.ascontiguousarray(view.image, dtype=np.float64))
        self.height, self.width = cam.height, cam.width


def fit_sparse_views(views: Sequence[FitView], config: FitConfig | None = None) -> GaussianScene:
    """Fit a labelled gaussian scene to posed RGB-D views.

    Raises ValueError when the depth maps contain no valid samples.
    """
    config = config or FitConfig()
    if not views:
        raise ValueError("need at least one view")

    means, colors, labels, scales = [], [], [], []
    per_view = max(1, config.max_gaussians // len(views))
    for view in views:
        depth = np.asarray(view.depth, dtype=np.float64)
        gy, gx, stride = _stratified_pixels(depth.shape[0], depth.shape[1], per_view)
        d = depth[gy, gx]
        keep = d > 0
        if not keep.any():
            continue
        gy, gx, d = gy[keep], gx[keep], d[keep]
        pix = np.stack([gx.astype(np.float64), gy.astype(np.float64)], axis=1)
        means.append(view.camera.backproject(pix, d, to_world=True))
        colors.append(np.asarray(view.image, dtype=np.float64)[gy, gx])
        labels.append(np.asarray(view.labels)[gy, gx].astype(np.uint32))
        # Neighbour spacing of the sample grid lifted to metric units.
        scales.append(config.scale_factor * stride * d / view.camera.fx)
    if not means:
        raise ValueError("depth maps contain no valid samples")

    means = np.vstack(means)
    n = means.shape[0]
    colors = np.vstack(colors)
    labels = np.concatenate(labels)
    iso = np.clip(np.concatenate(scales), MIN_SCALE, MAX_SCALE)
    log_scales = np.log(np.repeat(iso[:, None], 3, axis=1))
    opacity = np.full(n, math.log(config.init_opacity / (1 - config.init_opacity)))

    torch.set_num_threads(1)
    col_t = torch.from_numpy(colors.copy()).requires_grad_(False)
    opa_t = torch.from_numpy(opacity.copy()).requires_grad_(False)
    lsc_t = torch.from_numpy(log_scales.copy()).requires_grad_(False)
    opt = torch.optim.Adam(
        [
            {"params": [col_t], "lr": config.lr_color},
            {"params": [opa_t], "lr": config.lr_opacity},
            {"params": [lsc_t], "lr": config.lr_scale},
        ]
    )
    for p in (col_t, opa_t, lsc_t):
        p.requires_grad_(True)

    caches = [_ViewCache(view, means) for view in views]
    # Orientations are identity, so the covariance factor is just diag(S).
    eye = np.eye(3)

    for _ in range(config.steps):
        opt.zero_grad(set_to_none=False)
        col = col_t.detach().numpy()
        opa = 1.0 / (1.0 + np.exp(-opa_t.detach().numpy()))
        S = np.exp(np.clip(lsc_t.detach().numpy(), math.log(MIN_SCALE), math.log(MAX_SCALE)))
        for cache in caches:
            o = cache.order
            A = eye[None, :, :] * S[o][:, None, :]
            B = np.einsum("nij,njk->nik", cache.M, A)
            cov = np.einsum("nik,njk->nij", B, B)
            cov_a = cov[:, 0, 0] + COV2D_REG
            cov_b = cov[:, 0, 1]
            cov_c = cov[:, 1, 1] + COV2D_REG
            rgb = col[o]
            op = opa[o]
            img, _, _, _ = composite_forward(
                cache.u, cache.v, cov_a, cov_b, cov_c,
                np.zeros(o.size), op, rgb,
                np.full(o.size, -1, dtype=np.int64), 0,
                cache.height, cache.width,
            )
            img_t = torch.from_numpy(img).requires_grad_(True)
            loss = dssim_l1_loss(img_t, cache.target, config.dssim_weight)
            loss.backward()
            d_img = img_t.grad.numpy()
            d_rgb, d_opac, d_lsc = composite_backward(
                cache.u, cache.v, cov_a, cov_b, cov_c, op, rgb, B,
                img, d_img, cache.height, cache.width,
            )
            col_t.grad[o] += torch.from_numpy(d_rgb)
            opa_t.grad[o] += torch.from_numpy(d_opac)
            lsc_t.grad[o] += torch.from_numpy(d_lsc)
        opt.step()
        with torch.no_grad():
            lsc_t.clamp_(math.log(MIN_SCALE), math.log(MAX_SCALE))
            col_t.clamp_(0.0, 1.0)

    return GaussianScene(
        means,
        lsc_t.detach().numpy(),
        np.tile(np.array([1.0, 0.0, 0.0, 0.0]), (n, 1)),
        opa_t.detach().numpy(),
        col_t.detach().numpy(),
        labels,
    )
