"""Patch-based inverse-search optical flow over an image pyramid.

Coarse-to-fine: at each pyramid level a grid of square patches is aligned by
inverse-compositional gradient descent (template gradients fixed, so the 2x2
normal matrix is built once per patch), displacements are densified by
residual-weighted patch aggregation, and the result seeds the next finer
level. An optional variational pass smooths the finest level; it is off by
default.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from ..grids import FlowField


@dataclass
class FlowParams:
    patch_size: int = 8
    stride: int = 4
    levels: int = 4
    finest_level: int = 1        # 0 = full resolution; 1 = half, upsampled after
    iterations: int = 10
    min_update: float = 0.01     # px; stop a patch when the step gets smaller
    ridge: float = 1e-4          # Tikhonov term on the normal matrix
    texture_floor: float = 1e-4  # min gradient energy for a patch to count
    residual_threshold: float = 0.10  # mean |I2(warp) - I1| above which a patch is invalid
    densify_eps: float = 1e-4
    refine_iterations: int = 0   # variational smoothing passes at the output level
    refine_alpha: float = 2.0


@njit(cache=True)
def _downsample2(img):
    h, w = img.shape[0] // 2, img.shape[1] // 2
    out = np.empty((h, w), np.float32)
    for j in range(h):
        for i in range(w):
            out[j, i] = 0.25 * (
                img[2 * j, 2 * i] + img[2 * j, 2 * i + 1]
                + img[2 * j + 1, 2 * i] + img[2 * j + 1, 2 * i + 1]
            )
    return out


@njit(parallel=True, cache=True)
def _gradients(img):
    H, W = img.shape
    gx = np.zeros((H, W), np.float32)
    gy = np.zeros((H, W), np.float32)
    for j in prange(H):
        for i in range(1, W - 1):
            gx[j, i] = 0.5 * (img[j, i + 1] - img[j, i - 1])
        if 0 < j < H - 1:
            for i in range(W):
                gy[j, i] = 0.5 * (img[j + 1, i] - img[j - 1, i])
    return gx, gy


@njit(cache=True)
def _bilinear(img, y, x):
    H, W = img.shape
    if y < 0.0:
        y = 0.0
    elif y > H - 1.0:
        y = H - 1.0
    if x < 0.0:
        x = 0.0
    elif x > W - 1.0:
        x = W - 1.0
    y0 = int(y)
    x0 = int(x)
    y1 = y0 + 1 if y0 + 1 < H else y0
    x1 = x0 + 1 if x0 + 1 < W else x0
    fy = y - y0
    fx = x - x0
    v00 = img[y0, x0]
    v01 = img[y0, x1]
    v10 = img[y1, x0]
    v11 = img[y1, x1]
    return (v00 + fx * (v01 - v00)) * (1.0 - fy) + (v10 + fx * (v11 - v10)) * fy


@njit(parallel=True, cache=True)
def _search_patches(i1, i2, gx, gy, init_flow, ps, stride, iters, min_update, ridge,
                    texture_floor, max_resid):
    """Align each patch; returns per-patch displacement, residual, validity."""
    H, W = i1.shape
    nyp = (H - ps) // stride + 1
    nxp = (W - ps) // stride + 1
    disp = np.zeros((nyp, nxp, 2), np.float32)
    resid = np.zeros((nyp, nxp), np.float32)
    valid = np.zeros((nyp, nxp), np.bool_)
    margin = 2.0 * ps
    for py in prange(nyp):
        y0 = py * stride
        for px in range(nxp):
            x0 = px * stride
            # Normal matrix from the template gradients (fixed per patch).
            h00 = ridge
            h01 = 0.0
            h11 = ridge
            for dy in range(ps):
                for dx in range(ps):
                    a = gx[y0 + dy, x0 + dx]
                    b = gy[y0 + dy, x0 + dx]
                    h00 += a * a
                    h01 += a * b
                    h11 += b * b
            det = h00 * h11 - h01 * h01
            if det < 1e-9 or h00 + h11 - 2.0 * ridge < texture_floor:
                continue  # textureless; stays invalid
            inv00 = h11 / det
            inv01 = -h01 / det
            inv11 = h00 / det
            cy = y0 + 0.5 * (ps - 1)
            cx = x0 + 0.5 * (ps - 1)
            u = _bilinear(init_flow[:, :, 0], cy, cx)
            v = _bilinear(init_flow[:, :, 1], cy, cx)
            ok = True
            for _ in range(iters):
                b0 = 0.0
                b1 = 0.0
                for dy in range(ps):
                    yy = y0 + dy + v
                    for dx in range(ps):
                        r = _bilinear(i2, yy, x0 + dx + u) - i1[y0 + dy, x0 + dx]
                        b0 += gx[y0 + dy, x0 + dx] * r
                        b1 += gy[y0 + dy, x0 + dx] * r
                du = inv00 * b0 + inv01 * b1
                dv = inv01 * b0 + inv11 * b1
                u -= du
                v -= dv
                if cx + u < -margin or cx + u > W - 1 + margin or cy + v < -margin or cy + v > H - 1 + margin:
                    ok = False
                    break
                if du * du + dv * dv < min_update * min_update:
                    break
            if not ok:
                continue
            s = 0.0
            for dy in range(ps):
                yy = y0 + dy + v
                for dx in range(ps):
                    r = _bilinear(i2, yy, x0 + dx + u) - i1[y0 + dy, x0 + dx]
                    s += abs(r)
            mean_resid = s / (ps * ps)
            disp[py, px, 0] = u
            disp[py, px, 1] = v
            resid[py, px] = mean_resid
            valid[py, px] = mean_resid <= max_resid
    return disp, resid, valid


@njit(parallel=True, cache=True)
def _densify(disp, resid, pvalid, H, W, ps, stride, eps):
    """Residual-weighted aggregation of patch displacements onto pixels."""
    nyp, nxp = resid.shape
    flow = np.zeros((H, W, 2), np.float32)
    valid = np.zeros((H, W), np.bool_)
    for y in prange(H):
        p0y = (y - ps + stride) // stride
        if p0y < 0:
            p0y = 0
        p1y = y // stride
        if p1y > nyp - 1:
            p1y = nyp - 1
        for x in range(W):
            p0x = (x - ps + stride) // stride
            if p0x < 0:
                p0x = 0
            p1x = x // stride
            if p1x > nxp - 1:
                p1x = nxp - 1
            wsum = 0.0
            usum = 0.0
            vsum = 0.0
            for py in range(p0y, p1y + 1):
                for px in range(p0x, p1x + 1):
                    if not pvalid[py, px]:
                        continue
                    r = resid[py, px]
                    wgt = 1.0 / (r * r + eps)
                    wsum += wgt
                    usum += wgt * disp[py, px, 0]
                    vsum += wgt * disp[py, px, 1]
            if wsum > 0.0:
                flow[y, x, 0] = usum / wsum
                flow[y, x, 1] = vsum / wsum
                valid[y, x] = True
    return flow, valid


@njit(parallel=True, cache=True)
def _resize_flow(flow, H2, W2, value_scale):
    H, W = flow.shape[0], flow.shape[1]
    out = np.empty((H2, W2, 2), np.float32)
    sy = H / H2
    sx = W / W2
    for j in prange(H2):
        y = (j + 0.5) * sy - 0.5
        for i in range(W2):
            x = (i + 0.5) * sx - 0.5
            out[j, i, 0] = _bilinear(flow[:, :, 0], y, x) * value_scale
            out[j, i, 1] = _bilinear(flow[:, :, 1], y, x) * value_scale
    return out


@njit(cache=True)
def _resize_mask(mask, H2, W2):
    H, W = mask.shape
    out = np.empty((H2, W2), np.bool_)
    for j in range(H2):
        y = int(j * H / H2)
        for i in range(W2):
            out[j, i] = mask[y, int(i * W / W2)]
    return out


@njit(cache=True)
def _variational_refine(i1, i2, flow, valid, iters, alpha):
    """Horn-Schunck style relaxation: data term linearized at the current flow."""
    H, W = i1.shape
    for _ in range(iters):
        for j in range(1, H - 1):
            for i in range(1, W - 1):
                if not valid[j, i]:
                    continue
                u = flow[j, i, 0]
                v = flow[j, i, 1]
                ub = 0.25 * (flow[j - 1, i, 0] + flow[j + 1, i, 0] + flow[j, i - 1, 0] + flow[j, i + 1, 0])
                vb = 0.25 * (flow[j - 1, i, 1] + flow[j + 1, i, 1] + flow[j, i - 1, 1] + flow[j, i + 1, 1])
                ix = 0.5 * (_bilinear(i2, j + v, i + u + 1.0) - _bilinear(i2, j + v, i + u - 1.0))
                iy = 0.5 * (_bilinear(i2, j + v + 1.0, i + u) - _bilinear(i2, j + v - 1.0, i + u))
                it = _bilinear(i2, j + v, i + u) - i1[j, i]
                denom = alpha + ix * ix + iy * iy
                common = (ix * ub + iy * vb + it - ix * u - iy * v) / denom
                flow[j, i, 0] = ub - ix * common
                flow[j, i, 1] = vb - iy * common
    return flow


def estimate_flow(pair, params: FlowParams | None = None) -> FlowField:
    """Dense displacement field (px/frame) from an exposure pair.

    The validity mask is False where every overlapping patch either lacked
    texture or kept a residual above ``residual_threshold``; a fully
    degenerate (gradient-free) pair yields an all-invalid zero field.
    """
    p = params or FlowParams()
    a = np.ascontiguousarray(pair.first, dtype=np.float32)
    b = np.ascontiguousarray(pair.second, dtype=np.float32)
    if a.shape != b.shape:
        raise ValueError("image pair dimensions differ")
    H, W = a.shape

    levels = p.levels
    while levels > 1 and min(H, W) // (1 << (levels - 1)) < 2 * p.patch_size:
        levels -= 1
    if levels < 2:
        raise ValueError("images too small for a 2-level pyramid at this patch size")
    finest = min(p.finest_level, levels - 1)

    pyr1 = [a]
    pyr2 = [b]
    for _ in range(levels - 1):
        pyr1.append(_downsample2(pyr1[-1]))
        pyr2.append(_downsample2(pyr2[-1]))

    lvl = levels - 1
    flow = np.zeros(pyr1[lvl].shape + (2,), np.float32)
    valid = np.zeros(pyr1[lvl].shape, np.bool_)
    while lvl >= finest:
        i1 = pyr1[lvl]
        i2 = pyr2[lvl]
        gx, gy = _gradients(i1)
        disp, resid, pvalid = _search_patches(
            i1, i2, gx, gy, flow,
            p.patch_size, p.stride, p.iterations, p.min_update, p.ridge,
            p.texture_floor, p.residual_threshold,
        )
        flow, valid = _densify(
            disp, resid, pvalid, i1.shape[0], i1.shape[1], p.patch_size, p.stride, p.densify_eps
        )
        if lvl > finest:
            nh, nw = pyr1[lvl - 1].shape
            flow = _resize_flow(flow, nh, nw, 2.0)
        lvl -= 1

    if finest > 0:
        scale = float(1 << finest)
        flow = _resize_flow(flow, H, W, scale)
        valid = _resize_mask(valid, H, W)
    if p.refine_iterations > 0:
        flow = _variational_refine(a, b, flow, valid, p.refine_iterations, p.refine_alpha)
    vectors = flow.astype(np.float64)
    vectors[~valid] = 0.0
    return FlowField(vectors, "px/frame", valid)
