"""Geometric substrate: bilinear sampling, backward warping, flow composition,
image pyramids and flow upsampling.

Flow convention (fixed for the whole package): a flow estimated from
(source, target) is anchored on the TARGET grid and stored as (dy, dx) in
pixel units; the correspondence of target pixel x lies at source location
x + flow(x), so ``warp(source, flow)`` reconstructs the target. Coordinates
outside the image are clamped to the border before interpolation.
"""

import numpy as np

from .validation import check_flow, check_image, check_mask, check_same_shape


def _clamped_corners(h, w, yy, xx):
    """Clamp sample coords and return corner indices plus fractional offsets."""
    yy = np.clip(yy, 0.0, h - 1.0)
    xx = np.clip(xx, 0.0, w - 1.0)
    y0 = np.clip(np.floor(yy).astype(np.intp), 0, max(h - 2, 0))
    x0 = np.clip(np.floor(xx).astype(np.intp), 0, max(w - 2, 0))
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = yy - y0
    fx = xx - x0
    return yy, xx, y0, x0, y1, x1, fy, fx


def bilinear_sample(img, y, x):
    """Bilinearly sample ``img`` at (y, x); scalars or arrays of coordinates.

    Out-of-range coordinates are clamped to the border before interpolation.
    """
    img = np.asarray(img)
    h, w = img.shape[:2]
    yy = np.asarray(y, dtype=np.float64)
    xx = np.asarray(x, dtype=np.float64)
    scalar = yy.ndim == 0 and xx.ndim == 0
    yy, xx = np.broadcast_arrays(yy, xx)
    _, _, y0, x0, y1, x1, fy, fx = _clamped_corners(h, w, yy, xx)
    if img.ndim == 3:
        fy = fy[..., None]
        fx = fx[..., None]
    v00 = img[y0, x0]
    v01 = img[y0, x1]
    v10 = img[y1, x0]
    v11 = img[y1, x1]
    # two-product form: exact at fx, fy in {0, 1}, so lattice-point samples
    # reproduce pixel values bit-for-bit
    top = (1.0 - fx) * v00 + fx * v01
    bot = (1.0 - fx) * v10 + fx * v11
    out = (1.0 - fy) * top + fy * bot
    return float(out) if scalar and img.ndim == 2 else out


def _grid_coords(h, w, dtype=np.float64):
    gy, gx = np.meshgrid(np.arange(h, dtype=dtype), np.arange(w, dtype=dtype),
                         indexing="ij")
    return gy, gx


def warp(source, flow):
    """Backward-warp ``source`` by ``flow``: out(x) = source(x + flow(x))."""
    source = check_image(source, "source")
    flow = check_flow(flow)
    check_same_shape(source, flow, "source/flow")
    h, w = source.shape
    gy, gx = _grid_coords(h, w, dtype=flow.dtype)
    return bilinear_sample(source, gy + flow[..., 0], gx + flow[..., 1])


def warp_backward(source, flow, upstream, need_d_source=True):
    """Gradients of ``warp`` w.r.t. source image and flow.

    Args:
        source: (H, W) image used in the forward warp.
        flow: (H, W, 2) flow used in the forward warp.
        upstream: (H, W) gradient of the loss w.r.t. the warped output.
        need_d_source: skip the image gradient (returned as None) when the
            caller only differentiates through the flow.

    Returns:
        (d_source, d_flow) with the shapes of the inputs. Where a sample
        coordinate was clamped to the border the flow gradient is zero.
    """
    source = np.asarray(source)
    flow = np.asarray(flow)
    upstream = np.asarray(upstream)
    h, w = source.shape
    gy, gx = _grid_coords(h, w, dtype=flow.dtype)
    ys = gy + flow[..., 0]
    xs = gx + flow[..., 1]
    _, _, y0, x0, y1, x1, fy, fx = _clamped_corners(h, w, ys, xs)
    v00 = source[y0, x0]
    v01 = source[y0, x1]
    v10 = source[y1, x0]
    v11 = source[y1, x1]

    # d(out)/d(sample coordinate); zero where the coordinate was clamped.
    dy_in = (ys > 0.0) & (ys < h - 1.0)
    dx_in = (xs > 0.0) & (xs < w - 1.0)
    d_yy = (1 - fx) * (v10 - v00) + fx * (v11 - v01)
    d_xx = (1 - fy) * (v01 - v00) + fy * (v11 - v10)
    d_flow = np.empty_like(flow)
    d_flow[..., 0] = upstream * d_yy * dy_in
    d_flow[..., 1] = upstream * d_xx * dx_in
    if not need_d_source:
        return None, d_flow

    d_source = np.zeros_like(source)
    w00 = upstream * (1 - fy) * (1 - fx)
    w01 = upstream * (1 - fy) * fx
    w10 = upstream * fy * (1 - fx)
    w11 = upstream * fy * fx
    flat = d_source.ravel()
    np.add.at(flat, (y0 * w + x0).ravel(), w00.ravel())
    np.add.at(flat, (y0 * w + x1).ravel(), w01.ravel())
    np.add.at(flat, (y1 * w + x0).ravel(), w10.ravel())
    np.add.at(flat, (y1 * w + x1).ravel(), w11.ravel())
    return d_source, d_flow


def warp_mask(mask, flow):
    """Warp a label mask by nearest-neighbour sampling; labels are preserved."""
    mask = check_mask(mask)
    flow = check_flow(flow)
    check_same_shape(mask, flow, "mask/flow")
    h, w = mask.shape
    gy, gx = _grid_coords(h, w, dtype=flow.dtype)
    ys = np.clip(np.rint(gy + flow[..., 0]).astype(np.intp), 0, h - 1)
    xs = np.clip(np.rint(gx + flow[..., 1]).astype(np.intp), 0, w - 1)
    return mask[ys, xs]


def sample_flow(flow, ys, xs):
    """Bilinearly sample both flow components at coordinate arrays (ys, xs)."""
    return bilinear_sample(flow, ys, xs)


def compose_flows(inner, outer):
    """Compose two target-anchored flows into one.

    ``inner`` maps an intermediate grid onto the source (step 1), ``outer``
    maps the final grid onto the intermediate (step 2). The result satisfies
    warp(I, result) ~= warp(warp(I, inner), outer) up to interpolation error:
    result(x) = outer(x) + inner(x + outer(x)).
    """
    inner = check_flow(inner, "inner")
    outer = check_flow(outer, "outer")
    check_same_shape(inner, outer, "inner/outer")
    h, w = outer.shape[:2]
    gy, gx = _grid_coords(h, w, dtype=outer.dtype)
    inner_at = sample_flow(inner, gy + outer[..., 0], gx + outer[..., 1])
    return outer + inner_at


def pyramid_level_shape(h, w, level):
    """Shape of pyramid level ``level`` (level 0 is full resolution)."""
    return -(-h // (1 << level)), -(-w // (1 << level))


def downsample_image(img, levels):
    """Average-pooling image pyramid; level 0 is the input itself.

    Each level halves dimensions with ceiling; partial 2x2 windows at odd
    borders are averaged over the valid pixels only.
    """
    img = check_image(img)
    if levels < 1:
        raise ValueError(f"levels must be >= 1, got {levels}")
    h, w = img.shape
    if min(h, w) / 2 ** (levels - 1) < 4:
        raise ValueError(f"image {h}x{w} too small for {levels} pyramid levels")
    pyr = [img]
    for _ in range(1, levels):
        cur = pyr[-1]
        ch, cw = cur.shape
        ry = np.arange(0, ch, 2)
        rx = np.arange(0, cw, 2)
        sums = np.add.reduceat(np.add.reduceat(cur, ry, axis=0), rx, axis=1)
        ny = np.minimum(ry + 2, ch) - ry
        nx = np.minimum(rx + 2, cw) - rx
        pyr.append(sums / np.outer(ny, nx))
    return pyr


def resize_bilinear(arr, out_h, out_w):
    """Bilinear resize of an (H, W) or (H, W, C) array, align-corners style.

    Endpoints map exactly onto endpoints, so constant fields stay constant
    and linear ramps are reproduced exactly.
    """
    arr = np.asarray(arr)
    h, w = arr.shape[:2]
    if out_h == h and out_w == w:
        return arr.copy()
    sy = (h - 1) / (out_h - 1) if out_h > 1 else 0.0
    sx = (w - 1) / (out_w - 1) if out_w > 1 else 0.0
    ys = np.arange(out_h, dtype=arr.dtype if arr.dtype.kind == "f" else np.float64) * sy
    xs = np.arange(out_w, dtype=ys.dtype) * sx
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    return bilinear_sample(arr, gy, gx)


def upsample_flow(flow, target_h, target_w, magnitude_scale):
    """Spatially upsample a flow and rescale displacement magnitudes.

    Callers pass ``magnitude_scale = 2**level`` so that flows predicted at
    coarse pyramid levels come out in full-resolution pixel units.
    """
    flow = check_flow(flow)
    h, w = flow.shape[:2]
    if target_h < h or target_w < w:
        raise ValueError(f"target {target_h}x{target_w} smaller than source {h}x{w}")
    out = resize_bilinear(flow, target_h, target_w)
    return out * magnitude_scale
