"""Trainable motion models.

Two variants share one parameter/forward/backward contract:

* ``pyramid``: a shared two-stream encoder, per-level motion heads that
  predict a pyramid of flows at native scales, a decoder that predicts an
  initial full-resolution flow from the upsampled feature pyramid, and a
  fusion block that refines the initial flow with the upsampled pyramid.
* ``single_scale``: the same encoder and decoder but fed only from the
  coarsest feature level; no motion heads, no fusion.

The reverse pass is hand-written over the closed op set in :mod:`ops` plus
the warp and loss kernels; no general autodiff tape is involved.
"""

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .fileio import read_checkpoint, write_checkpoint
from .grid import downsample_image, pyramid_level_shape, warp, warp_backward
from .losses import LossReport, LossWeights, photometric_mse, smoothness_2nd

VARIANTS = ("pyramid", "single_scale")
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class ArchConfig:
    """Architecture hyper-parameters; fully determines all tensor shapes."""
    num_levels: int = 4
    encoder_channels: tuple = (8, 16, 32, 32)
    kernel_size: int = 3
    leaky_slope: float = 0.1
    lateral_channels: int = 8
    decoder_channels: int = 16
    head_channels: int = 8
    fusion_channels: int = 16
    variant: str = "pyramid"

    def __post_init__(self):
        object.__setattr__(self, "encoder_channels", tuple(int(c) for c in self.encoder_channels))
        if self.num_levels < 2:
            raise ValueError(f"num_levels must be >= 2, got {self.num_levels}")
        if len(self.encoder_channels) != self.num_levels:
            raise ValueError("encoder_channels must list one width per level")
        for name in ("lateral_channels", "decoder_channels", "head_channels", "fusion_channels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if any(c < 1 for c in self.encoder_channels):
            raise ValueError("encoder channels must be positive")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd and positive, got {self.kernel_size}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")

    def to_dict(self):
        return {
            "num_levels": self.num_levels,
            "encoder_channels": list(self.encoder_channels),
            "kernel_size": self.kernel_size,
            "leaky_slope": self.leaky_slope,
            "lateral_channels": self.lateral_channels,
            "decoder_channels": self.decoder_channels,
            "head_channels": self.head_channels,
            "fusion_channels": self.fusion_channels,
            "variant": self.variant,
        }

    @classmethod
    def from_dict(cls, d):
        known = set(cls().to_dict())
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown architecture config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class ModelParams:
    """Named parameter tensors plus the config and init seed that shaped them."""
    config: ArchConfig
    tensors: dict
    seed: int = 0

    def copy(self):
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()}, self.seed)

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0


@dataclass
class ForwardTrace:
    """All intermediates of one forward pass needed by the reverse pass."""
    params: ModelParams
    source: np.ndarray
    target: np.ndarray
    enc_in: list        # [image][level] conv inputs
    enc_pre: list       # [image][level] pre-activations
    feats: list         # [image][level] activations
    pairs: list         # per level, channel-concatenated (source, target) features
    lat: list
    dec_in: np.ndarray
    dec_pre: np.ndarray
    dec_act: np.ndarray
    initial_flow: np.ndarray
    head_pre: list
    head_act: list
    pyramid_flows: list  # per level, native-scale (H_l, W_l, 2)
    fus_in: np.ndarray
    fus_pre: np.ndarray
    fus_act: np.ndarray
    refined_flow: np.ndarray
    cols: dict          # per conv site, the im2col matrix for the reverse pass


def _tensor_specs(cfg: ArchConfig):
    """Ordered {name: (shape, init)} with init 'uniform' or 'zero'."""
    k = cfg.kernel_size
    ch = cfg.encoder_channels
    L = cfg.num_levels
    specs = {}
    cin = 1
    for l in range(L):
        specs[f"enc{l}.w"] = ((k, k, cin, ch[l]), "uniform")
        specs[f"enc{l}.b"] = ((ch[l],), "zero")
        cin = ch[l]
    lat_levels = range(L) if cfg.variant == "pyramid" else [L - 1]
    for l in lat_levels:
        specs[f"lat{l}.w"] = ((1, 1, 2 * ch[l], cfg.lateral_channels), "uniform")
        specs[f"lat{l}.b"] = ((cfg.lateral_channels,), "zero")
    dec_in = cfg.lateral_channels * (L if cfg.variant == "pyramid" else 1)
    specs["dec.w1"] = ((k, k, dec_in, cfg.decoder_channels), "uniform")
    specs["dec.b1"] = ((cfg.decoder_channels,), "zero")
    specs["dec.w2"] = ((k, k, cfg.decoder_channels, 2), "zero")
    specs["dec.b2"] = ((2,), "zero")
    if cfg.variant == "pyramid":
        for l in range(L):
            specs[f"head{l}.w1"] = ((k, k, 2 * ch[l], cfg.head_channels), "uniform")
            specs[f"head{l}.b1"] = ((cfg.head_channels,), "zero")
            specs[f"head{l}.w2"] = ((k, k, cfg.head_channels, 2), "zero")
            specs[f"head{l}.b2"] = ((2,), "zero")
        specs["fus.w1"] = ((k, k, 2 + 2 * L, cfg.fusion_channels), "uniform")
        specs["fus.b1"] = ((cfg.fusion_channels,), "zero")
        specs["fus.w2"] = ((k, k, cfg.fusion_channels, 2), "zero")
        specs["fus.b2"] = ((2,), "zero")
    return specs


def init_model(cfg: ArchConfig, seed=0, dtype=np.float64) -> ModelParams:
    """Deterministic init: fan-in-scaled uniform weights, zero biases, and
    zero-initialised final flow convolutions so a fresh model predicts an
    exactly zero flow everywhere."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name in sorted(_tensor_specs(cfg)):
        shape, kind = _tensor_specs(cfg)[name]
        if kind == "uniform":
            fan_in = int(np.prod(shape[:-1]))
            a = np.sqrt(1.0 / fan_in)
            tensors[name] = rng.uniform(-a, a, size=shape).astype(dtype)
        else:
            tensors[name] = np.zeros(shape, dtype=dtype)
    return ModelParams(config=cfg, tensors=tensors, seed=int(seed))


def params_digest(params: ModelParams) -> str:
    """SHA-256 over config and raw tensor bytes; used for frozen-model checks."""
    h = hashlib.sha256()
    h.update(json.dumps(params.config.to_dict(), sort_keys=True).encode())
    for name in sorted(params.tensors):
        h.update(name.encode())
        arr = params.tensors[name]
        h.update(str(arr.dtype).encode())
        h.update(arr.tobytes())
    return h.hexdigest()


def forward(params: ModelParams, source, target) -> ForwardTrace:
    """Run the model on one image pair; returns the full trace."""
    cfg = params.config
    t = params.tensors
    dt = params.dtype
    source = np.ascontiguousarray(source, dtype=dt)
    target = np.ascontiguousarray(target, dtype=dt)
    if source.shape != target.shape or source.ndim != 2:
        raise ValueError(f"source/target must be equal-sized 2-D images, got "
                         f"{source.shape} vs {target.shape}")
    h, w = source.shape
    L = cfg.num_levels
    if min(pyramid_level_shape(h, w, L - 1)) < 2:
        raise ValueError(f"images {h}x{w} too small for {L} encoder levels")

    cols = {}
    enc_in, enc_pre, feats = [], [], []
    for img_idx, img in enumerate((source, target)):
        ins, pres, acts = [], [], []
        cur = img[..., None]
        for l in range(L):
            ins.append(cur)
            pre, c = ops.conv2d(cur, t[f"enc{l}.w"], t[f"enc{l}.b"],
                                stride=1 if l == 0 else 2)
            cols[f"enc{l}/{img_idx}"] = c
            act = ops.leaky_relu(pre, cfg.leaky_slope)
            pres.append(pre)
            acts.append(act)
            cur = act
        enc_in.append(ins)
        enc_pre.append(pres)
        feats.append(acts)

    pairs = [np.concatenate([feats[0][l], feats[1][l]], axis=-1) for l in range(L)]

    lat = []
    lat_levels = range(L) if cfg.variant == "pyramid" else [L - 1]
    for l in lat_levels:
        y, c = ops.conv2d(pairs[l], t[f"lat{l}.w"], t[f"lat{l}.b"])
        cols[f"lat{l}"] = c
        lat.append(y)
    if len(lat) > 1:
        dec_in = np.concatenate([ops.resize(f, h, w) for f in lat], axis=-1)
    else:
        dec_in = ops.resize(lat[0], h, w)
    dec_pre, cols["dec1"] = ops.conv2d(dec_in, t["dec.w1"], t["dec.b1"])
    dec_act = ops.leaky_relu(dec_pre, cfg.leaky_slope)
    initial_flow, cols["dec2"] = ops.conv2d(dec_act, t["dec.w2"], t["dec.b2"])

    head_pre, head_act, pyramid_flows = [], [], []
    fus_in = fus_pre = fus_act = None
    if cfg.variant == "pyramid":
        for l in range(L):
            hp, cols[f"head{l}/1"] = ops.conv2d(pairs[l], t[f"head{l}.w1"], t[f"head{l}.b1"])
            ha = ops.leaky_relu(hp, cfg.leaky_slope)
            head_pre.append(hp)
            head_act.append(ha)
            flow_l, cols[f"head{l}/2"] = ops.conv2d(ha, t[f"head{l}.w2"], t[f"head{l}.b2"])
            pyramid_flows.append(flow_l)
        up = [ops.resize(pyramid_flows[l], h, w) * (2 ** l) for l in range(L)]
        fus_in = np.concatenate([initial_flow] + up, axis=-1)
        fus_pre, cols["fus1"] = ops.conv2d(fus_in, t["fus.w1"], t["fus.b1"])
        fus_act = ops.leaky_relu(fus_pre, cfg.leaky_slope)
        residual, cols["fus2"] = ops.conv2d(fus_act, t["fus.w2"], t["fus.b2"])
        refined_flow = initial_flow + residual
    else:
        refined_flow = initial_flow

    return ForwardTrace(params=params, source=source, target=target,
                        enc_in=enc_in, enc_pre=enc_pre, feats=feats, pairs=pairs,
                        lat=lat, dec_in=dec_in, dec_pre=dec_pre, dec_act=dec_act,
                        initial_flow=initial_flow, head_pre=head_pre,
                        head_act=head_act, pyramid_flows=pyramid_flows,
                        fus_in=fus_in, fus_pre=fus_pre, fus_act=fus_act,
                        refined_flow=refined_flow, cols=cols)


def backward(trace: ForwardTrace, params: ModelParams, d_refined, d_pyramid=None):
    """Reverse pass: gradients of the scalar loss for every parameter tensor.

    ``d_refined`` is dLoss/dRefinedFlow at full resolution; ``d_pyramid`` an
    optional list of dLoss/dFlow_l at native scales (pyramid variant only).
    """
    if trace.params is not params:
        raise ValueError("trace was produced by different parameters")
    cfg = params.config
    t = params.tensors
    slope = cfg.leaky_slope
    L = cfg.num_levels
    h, w = trace.source.shape
    g = {name: np.zeros_like(arr) for name, arr in t.items()}
    d_pairs = [np.zeros_like(p) for p in trace.pairs]
    d_refined = np.asarray(d_refined, dtype=trace.refined_flow.dtype)
    cols = trace.cols

    if cfg.variant == "pyramid":
        d_init = d_refined.copy()
        # fusion block
        dx, dw, db = ops.conv2d_backward(cols["fus2"], trace.fus_act.shape,
                                         t["fus.w2"], 1, d_refined)
        g["fus.w2"] += dw
        g["fus.b2"] += db
        d_fpre = ops.leaky_relu_backward(trace.fus_pre, slope, dx)
        d_fin, dw, db = ops.conv2d_backward(cols["fus1"], trace.fus_in.shape,
                                            t["fus.w1"], 1, d_fpre)
        g["fus.w1"] += dw
        g["fus.b1"] += db
        d_init += d_fin[..., :2]
        # motion heads, fed by the fusion input and the per-level losses
        for l in range(L):
            hl, wl = trace.pyramid_flows[l].shape[:2]
            d_up = d_fin[..., 2 + 2 * l:4 + 2 * l] * (2 ** l)
            d_pf = ops.resize_backward(np.ascontiguousarray(d_up), hl, wl)
            if d_pyramid is not None:
                d_pf = d_pf + np.asarray(d_pyramid[l], dtype=d_pf.dtype)
            dx, dw, db = ops.conv2d_backward(cols[f"head{l}/2"], trace.head_act[l].shape,
                                             t[f"head{l}.w2"], 1, d_pf)
            g[f"head{l}.w2"] += dw
            g[f"head{l}.b2"] += db
            d_hpre = ops.leaky_relu_backward(trace.head_pre[l], slope, dx)
            dx, dw, db = ops.conv2d_backward(cols[f"head{l}/1"], trace.pairs[l].shape,
                                             t[f"head{l}.w1"], 1, d_hpre)
            g[f"head{l}.w1"] += dw
            g[f"head{l}.b1"] += db
            d_pairs[l] += dx
    else:
        d_init = d_refined

    # decoder
    dx, dw, db = ops.conv2d_backward(cols["dec2"], trace.dec_act.shape,
                                     t["dec.w2"], 1, d_init)
    g["dec.w2"] += dw
    g["dec.b2"] += db
    d_dpre = ops.leaky_relu_backward(trace.dec_pre, slope, dx)
    d_din, dw, db = ops.conv2d_backward(cols["dec1"], trace.dec_in.shape,
                                        t["dec.w1"], 1, d_dpre)
    g["dec.w1"] += dw
    g["dec.b1"] += db

    lat_levels = list(range(L)) if cfg.variant == "pyramid" else [L - 1]
    p = cfg.lateral_channels
    for i, l in enumerate(lat_levels):
        hl, wl = trace.lat[i].shape[:2]
        d_up = np.ascontiguousarray(d_din[..., i * p:(i + 1) * p])
        d_lat = ops.resize_backward(d_up, hl, wl)
        dx, dw, db = ops.conv2d_backward(cols[f"lat{l}"], trace.pairs[l].shape,
                                         t[f"lat{l}.w"], 1, d_lat)
        g[f"lat{l}.w"] += dw
        g[f"lat{l}.b"] += db
        d_pairs[l] += dx

    # encoder, shared weights: both image streams accumulate into the same grads
    for img in range(2):
        d_feats = [None] * L
        for l in range(L):
            c = trace.feats[img][l].shape[-1]
            half = d_pairs[l][..., img * c:(img + 1) * c]
            d_feats[l] = half.copy()
        for l in range(L - 1, -1, -1):
            d_pre = ops.leaky_relu_backward(trace.enc_pre[img][l], slope, d_feats[l])
            dx, dw, db = ops.conv2d_backward(cols[f"enc{l}/{img}"],
                                             trace.enc_in[img][l].shape,
                                             t[f"enc{l}.w"], 1 if l == 0 else 2,
                                             d_pre, need_dx=l > 0)
            g[f"enc{l}.w"] += dw
            g[f"enc{l}.b"] += db
            if l > 0:
                d_feats[l - 1] += dx
    return g


def init_adam_state(params: ModelParams) -> AdamState:
    return AdamState(m={k: np.zeros_like(v) for k, v in params.tensors.items()},
                     v={k: np.zeros_like(v) for k, v in params.tensors.items()},
                     t=0)


def adam_step(params: ModelParams, grads, state: AdamState, lr):
    """One adaptive-moment update; returns fresh (params, state)."""
    if set(grads) != set(params.tensors):
        raise ValueError("gradient names do not match parameter names")
    b1, b2 = ADAM_BETAS
    t_new = state.t + 1
    c1 = 1.0 - b1 ** t_new
    c2 = 1.0 - b2 ** t_new
    new_p, new_m, new_v = {}, {}, {}
    for name, p in params.tensors.items():
        gr = grads[name]
        if gr.shape != p.shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        m = b1 * state.m[name] + (1 - b1) * gr
        v = b2 * state.v[name] + (1 - b2) * gr * gr
        step = lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
        new_p[name] = (p - step).astype(p.dtype)
        new_m[name] = m
        new_v[name] = v
    return (ModelParams(params.config, new_p, params.seed),
            AdamState(m=new_m, v=new_v, t=t_new))


def training_loss_and_grads(params: ModelParams, source, target,
                            weights: LossWeights, pyramids=None):
    """Deep-supervised unsupervised loss for one pair plus parameter grads.

    Every predicted flow (the refined one at full resolution and, for the
    pyramid variant, each native-scale pyramid level) warps its scale of the
    source and is scored against the same scale of the target; smoothness is
    added per level with weight lambda.
    """
    cfg = params.config
    dt = params.dtype
    source = np.asarray(source, dtype=dt)
    target = np.asarray(target, dtype=dt)
    trace = forward(params, source, target)
    if cfg.variant == "pyramid":
        if pyramids is None:
            src_pyr = downsample_image(source, cfg.num_levels)
            tgt_pyr = downsample_image(target, cfg.num_levels)
        else:
            src_pyr, tgt_pyr = pyramids
        flows = [trace.refined_flow] + trace.pyramid_flows
        srcs = [source] + list(src_pyr)
        refs = [target] + list(tgt_pyr)
    else:
        flows = [trace.refined_flow]
        srcs = [source]
        refs = [target]

    per_mse, per_smooth, d_flows = [], [], []
    for s, r, f in zip(srcs, refs, flows):
        warped = warp(s, f)
        mse, d_mse = photometric_mse(warped, r)
        sm, d_sm = smoothness_2nd(f)
        _, d_flow = warp_backward(s, f, d_mse, need_d_source=False)
        per_mse.append(mse)
        per_smooth.append(sm)
        d_flows.append(d_flow + weights.lambda_smooth * d_sm)
    report = LossReport(total=float(sum(per_mse) + weights.lambda_smooth * sum(per_smooth)),
                        per_level_mse=per_mse, per_level_smooth=per_smooth)
    grads = backward(trace, params, d_flows[0],
                     d_flows[1:] if cfg.variant == "pyramid" else None)
    return report, grads


def _mean_report(reports):
    total = float(np.mean([r.total for r in reports]))
    mse = np.mean([r.per_level_mse for r in reports], axis=0).tolist()
    smooth = np.mean([r.per_level_smooth for r in reports], axis=0).tolist()
    flow = float(np.mean([r.flow_loss for r in reports]))
    return LossReport(total=total, per_level_mse=mse, per_level_smooth=smooth,
                      flow_loss=flow)


def train_unsupervised(params: ModelParams, dataset, weights: LossWeights,
                       epochs, lr, seed, opt_state=None, start_epoch=0,
                       lr_decay=0.9, lr_hold=15, progress=None):
    """Per-pair stochastic training with the deep-supervised loss.

    ``dataset`` is a sequence of (source, target) arrays of one size. The
    pair order is reshuffled per epoch, deterministically from ``seed`` and
    the epoch index, so resumed runs revisit the same order. The learning
    rate holds for ``lr_hold`` epochs, then decays by ``lr_decay`` per epoch
    (a function of the absolute epoch index, so resuming continues the
    schedule). Returns (params, opt_state, per-epoch LossReport list).
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    dt = params.dtype
    pairs = [(np.ascontiguousarray(s, dtype=dt), np.ascontiguousarray(r, dtype=dt))
             for s, r in dataset]
    shape = pairs[0][0].shape
    if any(s.shape != shape or r.shape != shape for s, r in pairs):
        raise ValueError("dataset pairs must share one image size")
    pyramids = None
    if params.config.variant == "pyramid":
        L = params.config.num_levels
        pyramids = [(downsample_image(s, L), downsample_image(r, L)) for s, r in pairs]
    state = opt_state if opt_state is not None else init_adam_state(params)
    logs = []
    for epoch in range(start_epoch, epochs):
        epoch_lr = lr * lr_decay ** max(0, epoch - lr_hold)
        order = np.random.default_rng([int(seed), int(epoch)]).permutation(len(pairs))
        reports = []
        for i in order:
            src, tgt = pairs[i]
            report, grads = training_loss_and_grads(
                params, src, tgt, weights,
                pyramids=pyramids[i] if pyramids is not None else None)
            params, state = adam_step(params, grads, state, epoch_lr)
            reports.append(report)
        logs.append(_mean_report(reports))
        if progress is not None:
            progress(epoch, logs[-1])
    return params, state, logs


def save_model(path, params: ModelParams, opt_state: AdamState = None, epoch=None):
    """Write a checkpoint; optimizer state and epoch ride along as extra tensors."""
    config = params.config.to_dict()
    config["seed"] = params.seed
    tensors = dict(params.tensors)
    if opt_state is not None:
        for name in params.tensors:
            tensors[f"adam.m/{name}"] = opt_state.m[name]
            tensors[f"adam.v/{name}"] = opt_state.v[name]
        tensors["adam.t"] = np.array(float(opt_state.t))
    if epoch is not None:
        tensors["meta.epoch"] = np.array(float(epoch))
    write_checkpoint(path, config, tensors)


def load_model(path):
    """Read a checkpoint; returns (params, opt_state or None, epoch or None)."""
    config, tensors = read_checkpoint(path)
    seed = int(config.pop("seed", 0))
    cfg = ArchConfig.from_dict(config)
    model_t, adam_m, adam_v = {}, {}, {}
    adam_t = None
    epoch = None
    for name, arr in tensors.items():
        if name.startswith("adam.m/"):
            adam_m[name[len("adam.m/"):]] = arr
        elif name.startswith("adam.v/"):
            adam_v[name[len("adam.v/"):]] = arr
        elif name == "adam.t":
            adam_t = int(arr)
        elif name == "meta.epoch":
            epoch = int(arr)
        else:
            model_t[name] = arr
    expected = set(_tensor_specs(cfg))
    if set(model_t) != expected:
        raise ValueError(f"checkpoint tensors do not match architecture: "
                         f"missing {sorted(expected - set(model_t))}, "
                         f"extra {sorted(set(model_t) - expected)}")
    params = ModelParams(cfg, model_t, seed)
    state = None
    if adam_t is not None:
        state = AdamState(m=adam_m, v=adam_v, t=adam_t)
    return params, state, epoch
