"""Synthetic short-axis phantom: a textured annulus ("myocardium" around an
"LV cavity") moved by an analytic contraction/rotation map.

Source and target frames are both rendered analytically from the same
material-coordinate intensity function, never by resampling, so the ground
truth flow and the images are constructed independently. The ground-truth
flow is target-anchored: warp(source, gt_flow) reproduces the target up to
interpolation error. The analytic map is affine, which bilinear
interpolation represents exactly.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fileio import save_image, save_mask, write_flo

N_TEXTURE_WAVES = 16


@dataclass(frozen=True)
class PhantomSpec:
    """Geometry, contrast, texture and motion of one phantom pair."""
    height: int = 64
    width: int = 64
    center: tuple = (32.0, 32.0)
    endo_radius: float = 8.0
    epi_radius: float = 19.0
    cavity_intensity: float = 0.75
    myo_intensity: float = 0.45
    background_intensity: float = 0.12
    texture_amplitude: float = 0.10
    texture_seed: int = 0
    contraction: float = 0.0          # fraction of radius, in [-0.3, 0.3]
    rotation_deg: float = 0.0         # in [-20, 20]
    keypoint_angles_deg: tuple = (120.0, 240.0)
    edge_softness: float = 1.5        # half-width of intensity transitions, px

    def __post_init__(self):
        if self.height < 8 or self.width < 8:
            raise ValueError("phantom image must be at least 8x8")
        if not 0 < self.endo_radius < self.epi_radius:
            raise ValueError("radii must satisfy 0 < endo_radius < epi_radius")
        if not self.epi_radius < min(self.height, self.width) / 2:
            raise ValueError("epi_radius must be < min(H, W)/2")
        for name in ("cavity_intensity", "myo_intensity", "background_intensity"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if not -0.3 <= self.contraction <= 0.3:
            raise ValueError(f"contraction must be in [-0.3, 0.3], got {self.contraction}")
        if not -20.0 <= self.rotation_deg <= 20.0:
            raise ValueError(f"rotation_deg must be in [-20, 20], got {self.rotation_deg}")
        if self.texture_amplitude < 0:
            raise ValueError("texture_amplitude must be >= 0")
        if len(self.keypoint_angles_deg) != 2:
            raise ValueError("exactly two keypoint angles are required")

    def to_dict(self):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["center"] = list(self.center)
        d["keypoint_angles_deg"] = list(self.keypoint_angles_deg)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["center"] = tuple(d["center"])
        d["keypoint_angles_deg"] = tuple(d["keypoint_angles_deg"])
        return cls(**d)


@dataclass
class PhantomPair:
    """One rendered pair with ground truth."""
    spec: PhantomSpec
    source: np.ndarray
    target: np.ndarray
    gt_flow: np.ndarray
    source_mask: np.ndarray
    target_mask: np.ndarray
    keypoints_source: np.ndarray  # (2, 2) as (y, x)
    keypoints_target: np.ndarray


def forward_map(spec: PhantomSpec, pts):
    """Material -> target coordinates: rotate about the center, then scale
    radii by (1 - contraction)."""
    theta = np.deg2rad(spec.rotation_deg)
    c, s = np.cos(theta), np.sin(theta)
    rel = np.asarray(pts, dtype=np.float64) - np.asarray(spec.center)
    rot = np.stack([c * rel[..., 0] - s * rel[..., 1],
                    s * rel[..., 0] + c * rel[..., 1]], axis=-1)
    return np.asarray(spec.center) + (1.0 - spec.contraction) * rot


def inverse_map(spec: PhantomSpec, pts):
    """Target -> material coordinates (exact inverse of :func:`forward_map`)."""
    theta = np.deg2rad(spec.rotation_deg)
    c, s = np.cos(theta), np.sin(theta)
    rel = (np.asarray(pts, dtype=np.float64) - np.asarray(spec.center)) / (1.0 - spec.contraction)
    rot = np.stack([c * rel[..., 0] + s * rel[..., 1],
                    -s * rel[..., 0] + c * rel[..., 1]], axis=-1)
    return np.asarray(spec.center) + rot


def _smoothstep(u):
    u = np.clip(u, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


def _texture_waves(spec: PhantomSpec):
    rng = np.random.default_rng(spec.texture_seed)
    wavelength = rng.uniform(4.0, 12.0, size=N_TEXTURE_WAVES)
    direction = rng.uniform(0.0, 2.0 * np.pi, size=N_TEXTURE_WAVES)
    amp = rng.uniform(0.5, 1.0, size=N_TEXTURE_WAVES)
    phase = rng.uniform(0.0, 2.0 * np.pi, size=N_TEXTURE_WAVES)
    freq = 2.0 * np.pi / wavelength
    wy = freq * np.sin(direction)
    wx = freq * np.cos(direction)
    norm = np.sqrt(np.sum(amp ** 2) / 2.0)
    return wy, wx, amp / norm, phase


def intensity_at(spec: PhantomSpec, pts):
    """Analytic image intensity at material coordinates (any float positions).

    Radial profile: cavity / myocardium / background with smooth transitions;
    band-limited cosine texture confined to the myocardial ring.
    """
    pts = np.asarray(pts, dtype=np.float64)
    rel = pts - np.asarray(spec.center)
    r = np.hypot(rel[..., 0], rel[..., 1])
    soft = spec.edge_softness
    s_endo = _smoothstep((r - spec.endo_radius + soft) / (2.0 * soft))
    s_epi = _smoothstep((r - spec.epi_radius + soft) / (2.0 * soft))
    base = (spec.cavity_intensity
            + (spec.myo_intensity - spec.cavity_intensity) * s_endo
            + (spec.background_intensity - spec.myo_intensity) * s_epi)
    window = s_endo * (1.0 - s_epi)
    wy, wx, amp, phase = _texture_waves(spec)
    y = rel[..., 0][..., None]
    x = rel[..., 1][..., None]
    tex = np.sum(amp * np.cos(wy * y + wx * x + phase), axis=-1)
    return np.clip(base + spec.texture_amplitude * window * tex, 0.0, 1.0)


def label_at(spec: PhantomSpec, pts):
    """Analytic label (0=BG, 1=LV cavity, 2=myocardium) at material coords."""
    pts = np.asarray(pts, dtype=np.float64)
    rel = pts - np.asarray(spec.center)
    r = np.hypot(rel[..., 0], rel[..., 1])
    labels = np.zeros(r.shape, dtype=np.int32)
    labels[r < spec.epi_radius] = 2
    labels[r < spec.endo_radius] = 1
    return labels


def keypoints_source(spec: PhantomSpec):
    """The two epicardial landmarks in the source frame, (y, x) rows."""
    ang = np.deg2rad(np.asarray(spec.keypoint_angles_deg, dtype=np.float64))
    offs = spec.epi_radius * np.stack([np.sin(ang), np.cos(ang)], axis=-1)
    return np.asarray(spec.center) + offs


def render_pair(spec: PhantomSpec) -> PhantomPair:
    """Render source/target images, masks, keypoints and the analytic
    target-anchored ground-truth flow."""
    h, w = spec.height, spec.width
    gy, gx = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    grid = np.stack([gy, gx], axis=-1)
    source = intensity_at(spec, grid)
    source_mask = label_at(spec, grid)
    back = inverse_map(spec, grid)
    target = intensity_at(spec, back)
    target_mask = label_at(spec, back)
    gt_flow = back - grid
    kp_src = keypoints_source(spec)
    kp_tgt = forward_map(spec, kp_src)
    return PhantomPair(spec=spec, source=source, target=target, gt_flow=gt_flow,
                       source_mask=source_mask, target_mask=target_mask,
                       keypoints_source=kp_src, keypoints_target=kp_tgt)


@dataclass(frozen=True)
class DatasetRanges:
    """Uniform sampling ranges for per-pair phantom parameters. Radii and the
    center jitter are fractions of the image size."""
    contraction: tuple = (-0.15, 0.15)
    rotation_deg: tuple = (-10.0, 10.0)
    endo_frac: tuple = (0.10, 0.15)
    epi_frac: tuple = (0.25, 0.33)
    center_jitter_frac: float = 0.04
    cavity_intensity: tuple = (0.70, 0.80)
    myo_intensity: tuple = (0.40, 0.50)
    background_intensity: tuple = (0.08, 0.16)
    texture_amplitude: tuple = (0.08, 0.12)
    keypoint1_deg: tuple = (100.0, 140.0)
    keypoint2_deg: tuple = (220.0, 260.0)

    def to_dict(self):
        return {k: (list(v) if isinstance(v, tuple) else v)
                for k, v in ((f, getattr(self, f)) for f in self.__dataclass_fields__)}

    @classmethod
    def from_dict(cls, d):
        fields = set(cls.__dataclass_fields__)
        unknown = set(d) - fields
        if unknown:
            raise ValueError(f"unknown range keys: {sorted(unknown)}")
        vals = {k: (tuple(v) if isinstance(v, (list, tuple)) else v) for k, v in d.items()}
        return cls(**vals)


def draw_spec(rng, size, ranges: DatasetRanges) -> PhantomSpec:
    """Draw one phantom spec uniformly from the configured ranges."""
    u = rng.uniform
    cy = size / 2.0 + u(-1, 1) * ranges.center_jitter_frac * size
    cx = size / 2.0 + u(-1, 1) * ranges.center_jitter_frac * size
    return PhantomSpec(
        height=size, width=size, center=(cy, cx),
        endo_radius=u(*ranges.endo_frac) * size,
        epi_radius=u(*ranges.epi_frac) * size,
        cavity_intensity=u(*ranges.cavity_intensity),
        myo_intensity=u(*ranges.myo_intensity),
        background_intensity=u(*ranges.background_intensity),
        texture_amplitude=u(*ranges.texture_amplitude),
        texture_seed=int(rng.integers(0, 2 ** 31)),
        contraction=u(*ranges.contraction),
        rotation_deg=u(*ranges.rotation_deg),
        keypoint_angles_deg=(u(*ranges.keypoint1_deg), u(*ranges.keypoint2_deg)),
    )


def generate_dataset(out_dir, n_pairs, size, seed, ranges: DatasetRanges = None,
                     spacing_mm=(1.0, 1.0)):
    """Render ``n_pairs`` phantom pairs to disk with a manifest.

    Layout: pairs/NNNN_{src,tgt}.png (16-bit), pairs/NNNN_gt.flo,
    pairs/NNNN_{src,tgt}_mask.png, manifest.json. Deterministic per seed.
    """
    if n_pairs < 1:
        raise ValueError(f"n_pairs must be >= 1, got {n_pairs}")
    ranges = ranges or DatasetRanges()
    out_dir = Path(out_dir)
    pair_dir = out_dir / "pairs"
    pair_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries = []
    for i in range(n_pairs):
        spec = draw_spec(rng, size, ranges)
        pair = render_pair(spec)
        pid = f"{i:04d}"
        save_image(pair_dir / f"{pid}_src.png", pair.source)
        save_image(pair_dir / f"{pid}_tgt.png", pair.target)
        write_flo(pair_dir / f"{pid}_gt.flo", pair.gt_flow)
        save_mask(pair_dir / f"{pid}_src_mask.png", pair.source_mask)
        save_mask(pair_dir / f"{pid}_tgt_mask.png", pair.target_mask)
        entries.append({
            "id": pid,
            "source": f"pairs/{pid}_src.png",
            "target": f"pairs/{pid}_tgt.png",
            "gt_flow": f"pairs/{pid}_gt.flo",
            "source_mask": f"pairs/{pid}_src_mask.png",
            "target_mask": f"pairs/{pid}_tgt_mask.png",
            "spec": pair.spec.to_dict(),
            "keypoints_source": pair.keypoints_source.tolist(),
            "keypoints_target": pair.keypoints_target.tolist(),
        })
    manifest = {
        "n_pairs": n_pairs,
        "size": size,
        "seed": int(seed),
        "spacing_mm": list(spacing_mm),
        "ranges": ranges.to_dict(),
        "pairs": entries,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def load_manifest(dataset_dir):
    path = Path(dataset_dir) / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"no manifest.json under {dataset_dir}")
    return json.loads(path.read_text())
