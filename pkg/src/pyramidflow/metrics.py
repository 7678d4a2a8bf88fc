"""Evaluation suite: Dice, Hausdorff distance, average symmetric surface
distance, endpoint error with its radial/circumferential decomposition, and
key point tracking error. Distances are reported in millimetres; anisotropic
pixel spacing is applied to coordinates and displacement components before
norms are taken.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .grid import sample_flow, warp_mask
from .validation import check_flow, check_mask, check_same_shape, check_spacing


class FlowInversionError(RuntimeError):
    """Fixed-point inversion of a flow failed to converge."""


@dataclass
class MetricsReport:
    """Aggregated evaluation numbers; distances in mm, dice in [0, 1]."""
    per_label: dict = field(default_factory=dict)  # label -> {dice, hd_mm, assd_mm}
    epe_mm: tuple = (0.0, 0.0)                     # (mean, std)
    eps_rr_mm: tuple = (0.0, 0.0)
    eps_cc_mm: tuple = (0.0, 0.0)
    kpte_mm: tuple = (0.0, 0.0)
    n_samples: int = 0

    def to_dict(self):
        return {
            "per_label": {str(k): dict(v) for k, v in sorted(self.per_label.items())},
            "epe_mm": {"mean": self.epe_mm[0], "std": self.epe_mm[1]},
            "eps_rr_mm": {"mean": self.eps_rr_mm[0], "std": self.eps_rr_mm[1]},
            "eps_cc_mm": {"mean": self.eps_cc_mm[0], "std": self.eps_cc_mm[1]},
            "kpte_mm": {"mean": self.kpte_mm[0], "std": self.kpte_mm[1]},
            "n_samples": self.n_samples,
        }


def dice(a, b, label):
    """Dice overlap of one label: 1.0 if both regions empty, 0.0 if exactly one."""
    a = check_mask(a, "mask a")
    b = check_mask(b, "mask b")
    check_same_shape(a, b, "masks")
    ra = a == label
    rb = b == label
    na, nb = int(ra.sum()), int(rb.sum())
    if na == 0 and nb == 0:
        return 1.0
    if na == 0 or nb == 0:
        return 0.0
    return 2.0 * int((ra & rb).sum()) / (na + nb)


def extract_contour(mask, label):
    """Boundary pixels of a label region: region pixels with a 4-neighbour of
    a different label, or lying on the image edge. Returns (N, 2) (y, x)."""
    mask = check_mask(mask)
    region = mask == label
    inside = np.zeros_like(region)
    inside[1:-1, 1:-1] = (region[:-2, 1:-1] & region[2:, 1:-1]
                          & region[1:-1, :-2] & region[1:-1, 2:])
    return np.argwhere(region & ~inside)


def _to_mm(points, spacing):
    return np.asarray(points, dtype=np.float64) * np.asarray(spacing)


def hausdorff(contour_a, contour_b, spacing_mm=(1.0, 1.0)):
    """Symmetric Hausdorff distance between two contours, in mm."""
    a = np.asarray(contour_a, dtype=np.float64)
    b = np.asarray(contour_b, dtype=np.float64)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("hausdorff requires two nonempty contours")
    spacing = check_spacing(spacing_mm)
    am, bm = _to_mm(a, spacing), _to_mm(b, spacing)
    d_ab = cKDTree(bm).query(am)[0]
    d_ba = cKDTree(am).query(bm)[0]
    return float(max(d_ab.max(), d_ba.max()))


def assd(contour_a, contour_b, spacing_mm=(1.0, 1.0)):
    """Average symmetric surface distance between two contours, in mm."""
    a = np.asarray(contour_a, dtype=np.float64)
    b = np.asarray(contour_b, dtype=np.float64)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("assd requires two nonempty contours")
    spacing = check_spacing(spacing_mm)
    am, bm = _to_mm(a, spacing), _to_mm(b, spacing)
    d_ab = cKDTree(bm).query(am)[0]
    d_ba = cKDTree(am).query(bm)[0]
    return float((d_ab.sum() + d_ba.sum()) / (len(a) + len(b)))


def _flow_diff_mm(est, gt, spacing):
    diff = (np.asarray(gt, dtype=np.float64) - np.asarray(est, dtype=np.float64))
    return diff * np.asarray(spacing)


def epe(est, gt, region, spacing_mm=(1.0, 1.0)):
    """Endpoint error over a boolean region: (mean, std) of per-pixel mm norms."""
    est = check_flow(est, "estimated flow")
    gt = check_flow(gt, "ground-truth flow")
    check_same_shape(est, gt, "flows")
    region = np.asarray(region, dtype=bool)
    check_same_shape(est, region, "flow/region")
    if not region.any():
        raise ValueError("empty evaluation region")
    spacing = check_spacing(spacing_mm)
    err = _flow_diff_mm(est, gt, spacing)[region]
    norms = np.hypot(err[:, 0], err[:, 1])
    return float(norms.mean()), float(norms.std())


def decompose_error_vectors(est, gt, region, spacing_mm=(1.0, 1.0)):
    """Radial/circumferential split of per-pixel error vectors (in mm).

    Directions radiate from the mm-space centroid of the region; pixels that
    coincide with the centroid are dropped. Returns (rr_vecs, cc_vecs,
    points) where rr + cc reassembles the error exactly.
    """
    region = np.asarray(region, dtype=bool)
    if not region.any():
        raise ValueError("empty evaluation region")
    spacing = check_spacing(spacing_mm)
    pts = np.argwhere(region)
    pts_mm = _to_mm(pts, spacing)
    centroid = pts_mm.mean(axis=0)
    radial = pts_mm - centroid
    rad_norm = np.hypot(radial[:, 0], radial[:, 1])
    keep = rad_norm > 0
    if not keep.any():
        raise ValueError("region degenerates to its centroid")
    pts, pts_mm, radial, rad_norm = pts[keep], pts_mm[keep], radial[keep], rad_norm[keep]
    d = radial / rad_norm[:, None]
    err = _flow_diff_mm(est, gt, spacing)[pts[:, 0], pts[:, 1]]
    rr = np.sum(err * d, axis=1)[:, None] * d
    cc = err - rr
    return rr, cc, pts


def epe_decompose(est, gt, region, spacing_mm=(1.0, 1.0)):
    """Mean/std of |radial| and |circumferential| error components in mm."""
    rr, cc, _ = decompose_error_vectors(est, gt, region, spacing_mm)
    rr_mag = np.hypot(rr[:, 0], rr[:, 1])
    cc_mag = np.hypot(cc[:, 0], cc[:, 1])
    return ((float(rr_mag.mean()), float(rr_mag.std())),
            (float(cc_mag.mean()), float(cc_mag.std())))


def kpte(pred_pts, gt_pts, spacing_mm=(1.0, 1.0)):
    """Key point tracking error: (mean, std) Euclidean distance in mm."""
    pred = np.asarray(pred_pts, dtype=np.float64)
    gt = np.asarray(gt_pts, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] != 2:
        raise ValueError(f"point lists must both be (N, 2), got {pred.shape} vs {gt.shape}")
    if len(pred) == 0:
        raise ValueError("empty point lists")
    spacing = check_spacing(spacing_mm)
    diff = (pred - gt) * np.asarray(spacing)
    norms = np.hypot(diff[:, 0], diff[:, 1])
    return float(norms.mean()), float(norms.std())


def track_keypoints(flow, points, direction="source_to_target",
                    max_iter=20, tol=1e-3):
    """Move points with a target-anchored flow.

    ``target_to_source``: a point on the target grid maps directly to
    p + flow(p). ``source_to_target`` requires the inverse map, found by
    fixed-point iteration x <- p - flow(x); raises FlowInversionError if the
    update does not fall below ``tol`` pixels within ``max_iter`` iterations.
    """
    flow = check_flow(flow)
    h, w = flow.shape[:2]
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"points must be (N, 2), got {pts.shape}")
    if (pts[:, 0].min() < 0 or pts[:, 0].max() > h - 1
            or pts[:, 1].min() < 0 or pts[:, 1].max() > w - 1):
        raise ValueError("points outside image bounds")
    if direction == "target_to_source":
        disp = sample_flow(flow, pts[:, 0], pts[:, 1])
        return pts + disp
    if direction != "source_to_target":
        raise ValueError(f"unknown direction {direction!r}")
    x = pts.copy()
    for _ in range(max_iter):
        disp = sample_flow(flow, x[:, 0], x[:, 1])
        x_new = pts - disp
        step = np.max(np.hypot(*(x_new - x).T))
        x = x_new
        if step < tol:
            return x
    raise FlowInversionError(f"flow inversion did not converge below {tol} px "
                             f"within {max_iter} iterations (last step {step:.2e})")


def evaluate_pair(est_flow, gt_flow, source_mask, target_mask,
                  kp_source=None, kp_target=None, spacing_mm=(1.0, 1.0),
                  labels=(1, 2, 3), region_label=2, warped_mask=None,
                  epe_region="source"):
    """All metrics for one pair; returns a MetricsReport with n_samples=1.

    Mask overlap metrics compare the estimated-flow-warped source mask with
    the target mask. EPE and its decomposition are restricted to the
    ``region_label`` region of the source (default) or target mask.
    """
    est_flow = check_flow(est_flow, "estimated flow")
    source_mask = check_mask(source_mask, "source mask")
    target_mask = check_mask(target_mask, "target mask")
    spacing = check_spacing(spacing_mm)
    if warped_mask is None:
        warped_mask = warp_mask(source_mask, est_flow)
    per_label = {}
    for label in labels:
        entry = {"dice": dice(warped_mask, target_mask, label)}
        ca = extract_contour(warped_mask, label)
        cb = extract_contour(target_mask, label)
        if len(ca) and len(cb):
            entry["hd_mm"] = hausdorff(ca, cb, spacing)
            entry["assd_mm"] = assd(ca, cb, spacing)
        else:
            entry["hd_mm"] = None
            entry["assd_mm"] = None
        per_label[label] = entry

    report = MetricsReport(per_label=per_label, n_samples=1)
    if gt_flow is not None:
        gt_flow = check_flow(gt_flow, "ground-truth flow")
        region_mask = source_mask if epe_region == "source" else target_mask
        region = region_mask == region_label
        report.epe_mm = epe(est_flow, gt_flow, region, spacing)
        report.eps_rr_mm, report.eps_cc_mm = epe_decompose(est_flow, gt_flow,
                                                           region, spacing)
    if kp_source is not None and kp_target is not None:
        tracked = track_keypoints(est_flow, kp_source, "source_to_target")
        report.kpte_mm = kpte(tracked, kp_target, spacing)
    return report


def aggregate_reports(reports):
    """Mean the per-pair numbers; stds become across-pair stds of the means."""
    if not reports:
        raise ValueError("no reports to aggregate")

    def stats(values):
        vals = [v for v in values if v is not None]
        if not vals:
            return None
        return float(np.mean(vals))

    labels = sorted({label for r in reports for label in r.per_label})
    per_label = {}
    for label in labels:
        per_label[label] = {
            key: stats([r.per_label[label][key] for r in reports if label in r.per_label])
            for key in ("dice", "hd_mm", "assd_mm")
        }

    def pair_stats(attr):
        means = [getattr(r, attr)[0] for r in reports]
        return float(np.mean(means)), float(np.std(means))

    return MetricsReport(per_label=per_label,
                         epe_mm=pair_stats("epe_mm"),
                         eps_rr_mm=pair_stats("eps_rr_mm"),
                         eps_cc_mm=pair_stats("eps_cc_mm"),
                         kpte_mm=pair_stats("kpte_mm"),
                         n_samples=int(sum(r.n_samples for r in reports)))
