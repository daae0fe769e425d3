"""Numba kernels for splat compositing.

All kernels run single-threaded over gaussians pre-sorted front to back, so
output is bit-identical for identical inputs. Accumulation is float64.
"""

import math

import numpy as np
from numba import njit

ALPHA_MIN = 1.0 / 255.0
ALPHA_MAX = 0.99
T_STOP = 1e-4
POWER_CUTOFF = -12.0


@njit(cache=True)
def composite_forward(u, v, cov_a, cov_b, cov_c, depth, opac, rgb, label_ch, n_labels, height, width):
    img = np.zeros((height, width, 3))
    depth_acc = np.zeros((height, width))
    trans = np.ones((height, width))
    masks = np.zeros((n_labels, height, width))

    n = u.shape[0]
    for i in range(n):
        a = cov_a[i]
        b = cov_b[i]
        c = cov_c[i]
        det = a * c - b * b
        if det <= 0.0:
            continue
        ia = c / det
        ib = -b / det
        ic = a / det
        mid = 0.5 * (a + c)
        lam = mid + math.sqrt(max(mid * mid - det, 0.0))
        radius = 3.0 * math.sqrt(lam)
        x0 = int(math.floor(u[i] - radius))
        x1 = int(math.ceil(u[i] + radius))
        y0 = int(math.floor(v[i] - radius))
        y1 = int(math.ceil(v[i] + radius))
        if x0 < 0:
            x0 = 0
        if y0 < 0:
            y0 = 0
        if x1 > width - 1:
            x1 = width - 1
        if y1 > height - 1:
            y1 = height - 1
        if x1 < x0 or y1 < y0:
            continue
        op = opac[i]
        r0 = rgb[i, 0]
        r1 = rgb[i, 1]
        r2 = rgb[i, 2]
        z = depth[i]
        ch = label_ch[i]
        for py in range(y0, y1 + 1):
            dy = py - v[i]
            for px in range(x0, x1 + 1):
                t_now = trans[py, px]
                if t_now < T_STOP:
                    continue
                dx = px - u[i]
                power = -0.5 * (ia * dx * dx + 2.0 * ib * dx * dy + ic * dy * dy)
                if power < POWER_CUTOFF:
                    continue
                alpha = op * math.exp(power)
                if alpha < ALPHA_MIN:
                    continue
                if alpha > ALPHA_MAX:
                    alpha = ALPHA_MAX
                w = t_now * alpha
                img[py, px, 0] += w * r0
                img[py, px, 1] += w * r1
                img[py, px, 2] += w * r2
                depth_acc[py, px] += w * z
                if ch >= 0:
                    masks[ch, py, px] += w
                trans[py, px] = t_now * (1.0 - alpha)
    return img, depth_acc, trans, masks


@njit(cache=True)
def composite_backward(u, v, cov_a, cov_b, cov_c, opac, rgb, bmat, final_img, d_img, height, width):
    """Backward pass for the photometric loss w.r.t. color/opacity/log-scales.

    Replays compositing in the forward order. ``bmat`` is the per-gaussian
    (2, 3) projection of the scaled rotation (J * W * R * S), so that the
    log-scale gradient of the 2D footprint is alpha * (q . b_k)^2.
    """
    n = u.shape[0]
    d_rgb = np.zeros((n, 3))
    d_opac_logit = np.zeros(n)
    d_log_scales = np.zeros((n, 3))
    trans = np.ones((height, width))
    accum = np.zeros((height, width, 3))

    for i in range(n):
        a = cov_a[i]
        b = cov_b[i]
        c = cov_c[i]
        det = a * c - b * b
        if det <= 0.0:
            continue
        ia = c / det
        ib = -b / det
        ic = a / det
        mid = 0.5 * (a + c)
        lam = mid + math.sqrt(max(mid * mid - det, 0.0))
        radius = 3.0 * math.sqrt(lam)
        x0 = int(math.floor(u[i] - radius))
        x1 = int(math.ceil(u[i] + radius))
        y0 = int(math.floor(v[i] - radius))
        y1 = int(math.ceil(v[i] + radius))
        if x0 < 0:
            x0 = 0
        if y0 < 0:
            y0 = 0
        if x1 > width - 1:
            x1 = width - 1
        if y1 > height - 1:
            y1 = height - 1
        if x1 < x0 or y1 < y0:
            continue
        op = opac[i]
        r0 = rgb[i, 0]
        r1 = rgb[i, 1]
        r2 = rgb[i, 2]
        for py in range(y0, y1 + 1):
            dy = py - v[i]
            for px in range(x0, x1 + 1):
                t_now = trans[py, px]
                if t_now < T_STOP:
                    continue
                dx = px - u[i]
                power = -0.5 * (ia * dx * dx + 2.0 * ib * dx * dy + ic * dy * dy)
                if power < POWER_CUTOFF:
                    continue
                alpha = op * math.exp(power)
                if alpha < ALPHA_MIN:
                    continue
                clamped = alpha > ALPHA_MAX
                if clamped:
                    alpha = ALPHA_MAX
                w = t_now * alpha
                g0 = d_img[py, px, 0]
                g1 = d_img[py, px, 1]
                g2 = d_img[py, px, 2]
                d_rgb[i, 0] += w * g0
                d_rgb[i, 1] += w * g1
                d_rgb[i, 2] += w * g2
                if not clamped:
                    # d(color)/d(alpha): own contribution minus what the
                    # occluded remainder loses through (1 - alpha).
                    one_m = 1.0 - alpha
                    after0 = final_img[py, px, 0] - accum[py, px, 0] - w * r0
                    after1 = final_img[py, px, 1] - accum[py, px, 1] - w * r1
                    after2 = final_img[py, px, 2] - accum[py, px, 2] - w * r2
                    d_alpha = (
                        g0 * (t_now * r0 - after0 / one_m)
                        + g1 * (t_now * r1 - after1 / one_m)
                        + g2 * (t_now * r2 - after2 / one_m)
                    )
                    d_opac_logit[i] += d_alpha * alpha * (1.0 - op)
                    qx = ia * dx + ib * dy
                    qy = ib * dx + ic * dy
                    for k in range(3):
                        qb = qx * bmat[i, 0, k] + qy * bmat[i, 1, k]
                        d_log_scales[i, k] += d_alpha * alpha * qb * qb
                accum[py, px, 0] += w * r0
                accum[py, px, 1] += w * r1
                accum[py, px, 2] += w * r2
                trans[py, px] = t_now * (1.0 - alpha)
    return d_rgb, d_opac_logit, d_log_scales


@njit(cache=True)
def transmittance_at(u, v, cov_a, cov_b, cov_c, depth, opac, radius, qu, qv, qdepth, qmargin):
    """Transmittance toward the camera at query pixels, counting only splats
    strictly in front of each query by more than its margin."""
    nq = qu.shape[0]
    n = u.shape[0]
    out = np.ones(nq)
    for j in range(nq):
        t = 1.0
        zq = qdepth[j]
        for i in range(n):
            if depth[i] >= zq - qmargin[j]:
                continue
            dx = qu[j] - u[i]
            if dx > radius[i] or dx < -radius[i]:
                continue
            dy = qv[j] - v[i]
            if dy > radius[i] or dy < -radius[i]:
                continue
            a = cov_a[i]
            b = cov_b[i]
            c = cov_c[i]
            det = a * c - b * b
            if det <= 0.0:
                continue
            power = -0.5 * ((c * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det)
            if power < POWER_CUTOFF:
                continue
            alpha = opac[i] * math.exp(power)
            if alpha < ALPHA_MIN:
                continue
            if alpha > ALPHA_MAX:
                alpha = ALPHA_MAX
            t *= 1.0 - alpha
            if t < T_STOP:
                break
        out[j] = t
    return out
