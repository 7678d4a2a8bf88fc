"""Training objectives: photometric MSE, second-order flow smoothness, the
deep-supervised multi-scale total, and the teacher-student distillation total.
Every primitive returns its analytic gradient alongside the value.
"""

from dataclasses import dataclass, field

import numpy as np

from .validation import check_same_shape


@dataclass(frozen=True)
class LossWeights:
    """Weights of the training objectives.

    lambda_smooth scales smoothness inside the multi-scale total; mu_mse and
    gamma_smooth scale the photometric and smoothness terms of the
    distillation total.
    """
    lambda_smooth: float = 0.05
    mu_mse: float = 1.0
    gamma_smooth: float = 0.05

    def __post_init__(self):
        for name in ("lambda_smooth", "mu_mse", "gamma_smooth"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")


@dataclass
class LossReport:
    """Loss breakdown for one training step or epoch."""
    total: float
    per_level_mse: list = field(default_factory=list)
    per_level_smooth: list = field(default_factory=list)
    flow_loss: float = 0.0

    def to_dict(self):
        return {
            "total": float(self.total),
            "per_level_mse": [float(v) for v in self.per_level_mse],
            "per_level_smooth": [float(v) for v in self.per_level_smooth],
            "flow_loss": float(self.flow_loss),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(total=d["total"], per_level_mse=list(d["per_level_mse"]),
                   per_level_smooth=list(d["per_level_smooth"]),
                   flow_loss=d.get("flow_loss", 0.0))


def photometric_mse(warped, reference):
    """Mean squared intensity error and its gradient w.r.t. ``warped``."""
    warped = np.asarray(warped)
    reference = np.asarray(reference)
    check_same_shape(warped, reference, "warped/reference")
    diff = warped - reference
    n = diff.size
    value = float(np.mean(diff * diff))
    grad = (2.0 / n) * diff
    return value, grad


def smoothness_2nd(flow):
    """Mean squared second differences of a flow field and its gradient.

    Axis-aligned second differences along rows and columns of each component,
    averaged over all valid stencils (the mixed d2/dxdy term is omitted).
    """
    flow = np.asarray(flow)
    h, w = flow.shape[:2]
    if h < 3 or w < 3:
        raise ValueError(f"flow {h}x{w} too small for second differences")
    count = 2 * ((h - 2) * w + h * (w - 2))
    dyy = flow[2:, :] - 2.0 * flow[1:-1, :] + flow[:-2, :]
    dxx = flow[:, 2:] - 2.0 * flow[:, 1:-1] + flow[:, :-2]
    value = float((np.sum(dyy * dyy) + np.sum(dxx * dxx)) / count)
    grad = np.zeros_like(flow)
    s = 2.0 / count
    grad[:-2, :] += s * dyy
    grad[1:-1, :] += -2.0 * s * dyy
    grad[2:, :] += s * dyy
    grad[:, :-2] += s * dxx
    grad[:, 1:-1] += -2.0 * s * dxx
    grad[:, 2:] += s * dxx
    return value, grad


def flow_matching_loss(student_flow, teacher_flow):
    """Mean per-pixel Euclidean distance between two flows, with the gradient
    w.r.t. the student flow."""
    student_flow = np.asarray(student_flow)
    teacher_flow = np.asarray(teacher_flow)
    check_same_shape(student_flow, teacher_flow, "student/teacher flows")
    diff = student_flow - teacher_flow
    norm = np.sqrt(np.sum(diff * diff, axis=-1))
    n = norm.size
    value = float(np.mean(norm))
    safe = np.where(norm > 0, norm, 1.0)
    grad = diff / (n * safe)[..., None]
    grad[norm == 0] = 0.0
    return value, grad


def multiscale_total(warped_pyr, ref_pyr, flow_pyr, w: LossWeights):
    """Deep-supervised total: sum over levels of MSE plus weighted smoothness.

    The three sequences must share length and per-level shapes. Levels need
    not halve; the trainer passes the refined full-resolution flow as an
    extra leading level.
    """
    if not (len(warped_pyr) == len(ref_pyr) == len(flow_pyr)):
        raise ValueError("pyramids must share the level count")
    per_mse, per_smooth = [], []
    for warped, ref, flow in zip(warped_pyr, ref_pyr, flow_pyr):
        check_same_shape(warped, ref, "warped/reference level")
        check_same_shape(warped, flow, "image/flow level")
        per_mse.append(photometric_mse(warped, ref)[0])
        per_smooth.append(smoothness_2nd(flow)[0])
    total = float(sum(per_mse) + w.lambda_smooth * sum(per_smooth))
    return LossReport(total=total, per_level_mse=per_mse,
                      per_level_smooth=per_smooth, flow_loss=0.0)


def distill_total(student_flow, teacher_flow, warped, reference, w: LossWeights):
    """Distillation total: flow matching + mu * MSE + gamma * smoothness."""
    flow_loss = flow_matching_loss(student_flow, teacher_flow)[0]
    mse = photometric_mse(warped, reference)[0]
    smooth = smoothness_2nd(student_flow)[0]
    total = float(flow_loss + w.mu_mse * mse + w.gamma_smooth * smooth)
    return LossReport(total=total, per_level_mse=[mse],
                      per_level_smooth=[smooth], flow_loss=flow_loss)
