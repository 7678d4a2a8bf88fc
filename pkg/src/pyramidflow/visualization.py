"""HSV colour coding of flow fields: hue = direction, saturation = magnitude."""

import numpy as np

from .validation import check_flow


def hsv_to_rgb(h, s, v):
    """Vectorised HSV -> RGB, all components in [0, 1]; hue in degrees."""
    h = np.asarray(h, dtype=np.float64) % 360.0
    s = np.asarray(s, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    c = v * s
    hp = h / 60.0
    x = c * (1.0 - np.abs(hp % 2.0 - 1.0))
    m = v - c
    z = np.zeros_like(c)
    sector = np.floor(hp).astype(int) % 6
    r = np.choose(sector, [c, x, z, z, x, c])
    g = np.choose(sector, [x, c, c, x, z, z])
    b = np.choose(sector, [z, z, x, c, c, x])
    return np.stack([r + m, g + m, b + m], axis=-1)


def flow_to_hsv(flow, max_magnitude):
    """Render a flow field as an (H, W, 3) uint8 RGB image.

    Hue encodes the direction atan2(dy, dx) mapped to [0, 360); saturation is
    the magnitude relative to ``max_magnitude`` (clipped at 1); value is 1, so
    zero flow renders white.
    """
    flow = check_flow(flow)
    if not max_magnitude > 0:
        raise ValueError(f"max_magnitude must be > 0, got {max_magnitude}")
    dy = flow[..., 0]
    dx = flow[..., 1]
    hue = np.degrees(np.arctan2(dy, dx)) % 360.0
    sat = np.minimum(np.hypot(dy, dx) / max_magnitude, 1.0)
    rgb = hsv_to_rgb(hue, sat, np.ones_like(sat))
    return np.clip(np.rint(rgb * 255.0), 0, 255).astype(np.uint8)
