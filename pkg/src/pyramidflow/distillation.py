"""Teacher-student training and its cyclic variant.

The teacher runs two-step progressive compensation to produce supervision
flows; the student, initialised as a copy of the teacher, learns to match
them in a single pass while keeping the photometric and smoothness
self-supervision. The cyclic variant promotes the converged student to
teacher and repeats. The distiller only relies on the forward/backward
parameter contract, so any model satisfying it can be slotted in.
"""

from dataclasses import dataclass, field

import numpy as np

from .compensation import progressive_flow
from .grid import warp, warp_backward
from .losses import LossWeights, flow_matching_loss, photometric_mse, smoothness_2nd
from .network import (ModelParams, adam_step, backward, forward,
                      init_adam_state, params_digest)


@dataclass(frozen=True)
class CycleConfig:
    """Knobs of the (cyclic) teacher-student loop.

    The flow-matching gradient has constant per-pixel magnitude, so a fixed
    step size leaves an oscillation floor; ``lr_decay`` shrinks the learning
    rate multiplicatively each epoch to let the student settle onto the
    teacher's flows.
    """
    num_cycles: int = 2
    epochs_per_cycle: int = 15
    lr: float = 2e-3
    lr_decay: float = 0.8
    weights: LossWeights = field(default_factory=LossWeights)
    teacher_steps: int = 2
    convergence_threshold: float = 0.01  # relative val flow-loss improvement
    convergence_window: int = 3          # ... over this many epochs
    val_fraction: float = 0.1
    augment: bool = True                 # random flips per epoch; teacher flows
                                         # are recomputed on the fly so this is free

    def __post_init__(self):
        if self.num_cycles < 1:
            raise ValueError(f"num_cycles must be >= 1, got {self.num_cycles}")
        if self.epochs_per_cycle < 0:
            raise ValueError("epochs_per_cycle must be >= 0")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ValueError("lr_decay must be in (0, 1]")
        if self.convergence_threshold <= 0 or self.convergence_window < 1:
            raise ValueError("convergence settings must be positive")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in [0, 1)")


def _distill_step(student, teacher, src, tgt, cfg, opt_state, lr):
    """One student update against the teacher's multi-step flow."""
    teacher_flow, _ = progressive_flow(teacher, src, tgt, steps=cfg.teacher_steps)
    trace = forward(student, src, tgt)
    sflow = trace.refined_flow
    warped = warp(src, sflow)
    flow_loss, d_match = flow_matching_loss(sflow, teacher_flow)
    mse, d_mse = photometric_mse(warped, tgt)
    smooth, d_smooth = smoothness_2nd(sflow)
    _, d_warp = warp_backward(src, sflow, d_mse, need_d_source=False)
    w = cfg.weights
    d_refined = d_match + w.mu_mse * d_warp + w.gamma_smooth * d_smooth
    grads = backward(trace, student, d_refined)
    student, opt_state = adam_step(student, grads, opt_state, lr)
    total = flow_loss + w.mu_mse * mse + w.gamma_smooth * smooth
    return student, opt_state, {"total": float(total), "flow_loss": float(flow_loss),
                                "mse": float(mse), "smooth": float(smooth)}


def _val_flow_loss(student, teacher, val_pairs, teacher_steps):
    losses = []
    for src, tgt in val_pairs:
        tflow, _ = progressive_flow(teacher, src, tgt, steps=teacher_steps)
        sflow = forward(student, src, tgt).refined_flow
        losses.append(flow_matching_loss(sflow, tflow)[0])
    return float(np.mean(losses))


def distill_student(teacher: ModelParams, dataset, cfg: CycleConfig, seed=0,
                    val_pairs=None, lr_scale=1.0, progress=None):
    """Train a student initialised from (and supervised by) a frozen teacher.

    Returns (student, per-epoch log dicts). The teacher is never mutated;
    with zero epochs the student is a bit-identical copy. ``lr_scale``
    lets the cyclic driver continue its decay schedule across cycles.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    dt = teacher.dtype
    pairs = [(np.ascontiguousarray(s, dtype=dt), np.ascontiguousarray(r, dtype=dt))
             for s, r in dataset]
    student = teacher.copy()
    opt_state = init_adam_state(student)
    logs = []
    history = []
    for epoch in range(cfg.epochs_per_cycle):
        lr = cfg.lr * lr_scale * cfg.lr_decay ** epoch
        rng = np.random.default_rng([int(seed), int(epoch)])
        order = rng.permutation(len(pairs))
        flips = rng.integers(0, 4, size=len(pairs)) if cfg.augment else np.zeros(len(pairs), int)
        entries = []
        for i, flip in zip(order, flips):
            src, tgt = pairs[i]
            if flip & 1:
                src, tgt = src[::-1], tgt[::-1]
            if flip & 2:
                src, tgt = src[:, ::-1], tgt[:, ::-1]
            if flip:
                src, tgt = np.ascontiguousarray(src), np.ascontiguousarray(tgt)
            student, opt_state, entry = _distill_step(student, teacher, src, tgt,
                                                      cfg, opt_state, lr)
            entries.append(entry)
        log = {k: float(np.mean([e[k] for e in entries])) for k in entries[0]}
        log["epoch"] = epoch
        if val_pairs:
            log["val_flow_loss"] = _val_flow_loss(student, teacher, val_pairs,
                                                  cfg.teacher_steps)
            history.append(log["val_flow_loss"])
        else:
            history.append(log["flow_loss"])
        logs.append(log)
        if progress is not None:
            progress(epoch, log)
        wdw = cfg.convergence_window
        if len(history) > wdw:
            past = history[-wdw - 1]
            if past > 0 and (past - history[-1]) / past < cfg.convergence_threshold:
                break
    return student, logs


def cyclic_distill(initial: ModelParams, dataset, cfg: CycleConfig, seed=0,
                   progress=None):
    """Repeated teacher-student rounds; the student takes the teacher's role
    after each round. Returns (final student, one log dict per cycle)."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    n = len(dataset)
    n_val = int(round(cfg.val_fraction * n))
    order = np.random.default_rng([int(seed), 999983]).permutation(n)
    val_idx = set(order[:n_val].tolist())
    train_pairs = [dataset[i] for i in range(n) if i not in val_idx]
    val_pairs = [dataset[i] for i in range(n) if i in val_idx]
    current = initial
    cycle_logs = []
    epochs_done = 0
    for cycle in range(cfg.num_cycles):
        teacher = current
        teacher_digest_before = params_digest(teacher)
        cycle_seed = int(np.random.SeedSequence([int(seed), cycle]).generate_state(1)[0])
        # later cycles resume the decayed learning rate instead of re-jolting
        # the already-converged student
        student, epochs = distill_student(
            teacher, train_pairs, cfg, seed=cycle_seed, val_pairs=val_pairs,
            lr_scale=cfg.lr_decay ** epochs_done,
            progress=(lambda e, log, c=cycle: progress(c, e, log)) if progress else None)
        epochs_done += len(epochs)
        teacher_digest_after = params_digest(teacher)
        if teacher_digest_before != teacher_digest_after:
            raise RuntimeError("teacher parameters changed during distillation")
        cycle_logs.append({
            "cycle": cycle,
            "teacher_digest": teacher_digest_before,
            "teacher_frozen": True,
            "student_init_digest": teacher_digest_before,
            "epochs": epochs,
        })
        current = student
    return current, cycle_logs
