"""Independent reference implementations used as test oracles.

Everything here is deliberately written the slow, obvious way (scalar loops,
O(n^2) scans, finite differences) and stays independent of the library code
paths it checks.
"""

import numpy as np


def scalar_bilinear(img, y, x):
    """Pure-scalar bilinear interpolation with border clamping."""
    h, w = img.shape
    y = min(max(y, 0.0), h - 1.0)
    x = min(max(x, 0.0), w - 1.0)
    y0 = min(int(np.floor(y)), h - 2) if h > 1 else 0
    x0 = min(int(np.floor(x)), w - 2) if w > 1 else 0
    y1 = min(y0 + 1, h - 1)
    x1 = min(x0 + 1, w - 1)
    fy = y - y0
    fx = x - x0
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def warp_scalar(img, flow):
    """Backward warp via the scalar interpolator, pixel by pixel."""
    h, w = img.shape
    out = np.empty_like(np.asarray(img, dtype=np.float64))
    for i in range(h):
        for j in range(w):
            out[i, j] = scalar_bilinear(img, i + flow[i, j, 0], j + flow[i, j, 1])
    return out


def brute_hausdorff(a_pts, b_pts, spacing=(1.0, 1.0)):
    a = np.asarray(a_pts, dtype=np.float64) * spacing
    b = np.asarray(b_pts, dtype=np.float64) * spacing
    d_ab = max(min(np.hypot(*(p - q)) for q in b) for p in a)
    d_ba = max(min(np.hypot(*(q - p)) for p in a) for q in b)
    return max(d_ab, d_ba)


def brute_assd(a_pts, b_pts, spacing=(1.0, 1.0)):
    a = np.asarray(a_pts, dtype=np.float64) * spacing
    b = np.asarray(b_pts, dtype=np.float64) * spacing
    s_ab = sum(min(np.hypot(*(p - q)) for q in b) for p in a)
    s_ba = sum(min(np.hypot(*(q - p)) for p in a) for q in b)
    return (s_ab + s_ba) / (len(a) + len(b))


def fd_gradient(f, x, h=1e-6):
    """Central finite-difference gradient of scalar f w.r.t. array x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        fp = f(x)
        x[idx] = orig - h
        fm = f(x)
        x[idx] = orig
        g[idx] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b, floor=1e-8):
    return abs(a - b) / max(abs(a), abs(b), floor)


def check_grad_entries(loss_fn, tensor, analytic, entries=None, h=1e-5,
                       tol=1e-3, refine_h=1e-7):
    """Compare analytic gradient entries against central differences.

    ``loss_fn()`` re-evaluates the scalar loss with the (mutated) tensor.
    Entries whose first comparison exceeds ``tol`` are re-measured at
    ``refine_h``: near leaky-rectifier or interpolation kinks the wide
    stencil straddles the non-smooth point and the FD value itself is off;
    a genuinely wrong analytic gradient fails at every step size.
    Returns the worst relative error observed after refinement.
    """
    flat = tensor.ravel()
    g = np.asarray(analytic).ravel()
    if entries is None:
        entries = range(flat.size)
    worst = 0.0
    for i in entries:
        orig = flat[i]
        flat[i] = orig + h
        fp = loss_fn()
        flat[i] = orig - h
        fm = loss_fn()
        flat[i] = orig
        fd = (fp - fm) / (2 * h)
        err = rel_err(fd, g[i])
        if err > tol:
            flat[i] = orig + refine_h
            fp = loss_fn()
            flat[i] = orig - refine_h
            fm = loss_fn()
            flat[i] = orig
            fd = (fp - fm) / (2 * refine_h)
            err = rel_err(fd, g[i])
        worst = max(worst, err)
        assert err < tol, f"gradient entry {i}: fd={fd:.6e} analytic={g[i]:.6e} rel={err:.3e}"
    return worst


def smooth_test_image(h, w, seed=0, n_blobs=4):
    """Sum of broad Gaussians: smooth, analytic, evaluable off-grid."""
    rng = np.random.default_rng(seed)
    cys = rng.uniform(0.2 * h, 0.8 * h, n_blobs)
    cxs = rng.uniform(0.2 * w, 0.8 * w, n_blobs)
    amps = rng.uniform(0.3, 1.0, n_blobs)
    sig = rng.uniform(0.12, 0.25, n_blobs) * min(h, w)

    def f(y, x):
        y = np.asarray(y, dtype=np.float64)[..., None]
        x = np.asarray(x, dtype=np.float64)[..., None]
        return np.sum(amps * np.exp(-((y - cys) ** 2 + (x - cxs) ** 2) / (2 * sig ** 2)),
                      axis=-1)

    gy, gx = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    return f(gy, gx), f


def smooth_random_flow(h, w, seed=0, amplitude=1.5):
    """Low-frequency sinusoidal flow field, analytic and smooth."""
    rng = np.random.default_rng(seed)
    gy, gx = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    flow = np.zeros((h, w, 2))
    for c in range(2):
        for _ in range(3):
            fy = rng.uniform(0.5, 1.5) / h
            fx = rng.uniform(0.5, 1.5) / w
            ph = rng.uniform(0, 2 * np.pi)
            amp = rng.uniform(0.2, 0.5) * amplitude
            flow[..., c] += amp * np.sin(2 * np.pi * (fy * gy + fx * gx) + ph)
    return flow


def random_label_mask(h, w, seed=0, labels=(0, 1, 2, 3)):
    """Blobby random mask: nearest-seed-point labelling."""
    rng = np.random.default_rng(seed)
    n_seeds = rng.integers(3, 8)
    sy = rng.uniform(0, h - 1, n_seeds)
    sx = rng.uniform(0, w - 1, n_seeds)
    lab = rng.choice(labels, n_seeds)
    gy, gx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    d = (gy[..., None] - sy) ** 2 + (gx[..., None] - sx) ** 2
    return np.asarray(lab)[np.argmin(d, axis=-1)].astype(np.int32)
