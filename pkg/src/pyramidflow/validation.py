"""Input validation helpers shared across the package.

Array conventions used everywhere:
  image: float array of shape (H, W), intensities nominally in [0, 1]
  flow:  float array of shape (H, W, 2) holding (dy, dx) displacements in
         pixel units, anchored on the target grid (backward warping)
  mask:  integer array of shape (H, W) with labels {0=BG, 1=LV, 2=MYO, 3=RV}
"""

import numpy as np

VALID_LABELS = (0, 1, 2, 3)
LABEL_NAMES = {0: "BG", 1: "LV", 2: "MYO", 3: "RV"}


def check_image(img, name="image"):
    """Validate and return an image array as float64-compatible ndarray."""
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError(f"{name} must be 2-D (H, W), got shape {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"{name} has empty dimensions {img.shape}")
    if not np.issubdtype(img.dtype, np.floating):
        img = img.astype(np.float64)
    if not np.all(np.isfinite(img)):
        raise ValueError(f"{name} contains non-finite values")
    return img


def check_flow(flow, name="flow"):
    """Validate and return a flow array of shape (H, W, 2)."""
    flow = np.asarray(flow)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ValueError(f"{name} must have shape (H, W, 2), got {flow.shape}")
    if not np.issubdtype(flow.dtype, np.floating):
        flow = flow.astype(np.float64)
    if not np.all(np.isfinite(flow)):
        raise ValueError(f"{name} contains non-finite values")
    return flow


def check_mask(mask, name="mask"):
    """Validate and return a label mask as an integer ndarray."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"{name} must be 2-D (H, W), got shape {mask.shape}")
    if not np.issubdtype(mask.dtype, np.integer):
        rounded = np.rint(np.asarray(mask, dtype=np.float64))
        if not np.allclose(mask, rounded):
            raise ValueError(f"{name} has non-integer label values")
        mask = rounded.astype(np.int32)
    if not np.isin(mask, VALID_LABELS).all():
        bad = sorted(set(np.unique(mask)) - set(VALID_LABELS))
        raise ValueError(f"{name} has labels outside {VALID_LABELS}: {bad}")
    return mask


def check_same_shape(a, b, what="inputs"):
    if a.shape[:2] != b.shape[:2]:
        raise ValueError(f"{what} have mismatched shapes {a.shape} vs {b.shape}")


def check_spacing(spacing_mm):
    """Validate (row, col) pixel spacing in millimetres."""
    spacing = tuple(float(s) for s in np.atleast_1d(spacing_mm).ravel())
    if len(spacing) == 1:
        spacing = (spacing[0], spacing[0])
    if len(spacing) != 2 or any(not np.isfinite(s) or s <= 0 for s in spacing):
        raise ValueError(f"spacing_mm must be two positive reals, got {spacing_mm}")
    return spacing


def check_pair_array(X):
    """Coerce fit/predict input into a list of (source, target) image pairs.

    Accepts an ndarray of shape (n, 2, H, W) or a sequence of 2-tuples/lists
    of equal-sized 2-D arrays.
    """
    if isinstance(X, np.ndarray):
        if X.ndim != 4 or X.shape[1] != 2:
            raise ValueError(f"pair array must have shape (n, 2, H, W), got {X.shape}")
        pairs = [(X[i, 0], X[i, 1]) for i in range(X.shape[0])]
    else:
        pairs = [(p[0], p[1]) for p in X]
    if not pairs:
        raise ValueError("empty pair list")
    out = []
    shape = None
    for i, (src, tgt) in enumerate(pairs):
        src = check_image(src, f"pair[{i}].source")
        tgt = check_image(tgt, f"pair[{i}].target")
        check_same_shape(src, tgt, f"pair[{i}]")
        if shape is None:
            shape = src.shape
        elif src.shape != shape:
            raise ValueError(f"pair[{i}] shape {src.shape} differs from {shape}")
        out.append((src, tgt))
    return out
