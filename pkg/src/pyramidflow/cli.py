"""Command-line front end.

Subcommands: gen | train | infer | distill | eval | viz. Each accepts an
optional JSON --config; explicit flags win over config values, which win
over defaults. Unknown config keys are rejected. Exit codes: 0 ok, 2 config
error, 3 runtime error. Every command that writes into an output directory
also writes the fully-resolved config it ran with.
"""

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from . import __version__
from .compensation import progressive_flow
from .distillation import CycleConfig, cyclic_distill, distill_student
from .fileio import load_image, load_mask, read_flo, save_image, save_mask, write_flo
from .grid import warp, warp_mask
from .losses import LossWeights
from .metrics import aggregate_reports, evaluate_pair
from .network import (ArchConfig, forward, init_model, load_model, save_model,
                      train_unsupervised)
from .phantom import DatasetRanges, generate_dataset, load_manifest
from .visualization import flow_to_hsv


class ConfigError(ValueError):
    """Invalid command configuration; maps to exit code 2."""


GEN_DEFAULTS = {
    "out": None, "n": 200, "size": 64, "seed": 0, "spacing": 1.0, "ranges": {},
}
TRAIN_DEFAULTS = {
    "data": None, "out": None, "variant": "pyramid", "epochs": 30, "lr": 2e-3,
    "smooth": 0.05, "seed": 0, "levels": 4, "encoder_channels": "8,16,32,32",
    "kernel": 3, "leaky_slope": 0.1, "lateral": 8, "decoder": 16, "head": 8,
    "fusion": 16, "dtype": "float32", "resume": None,
}
INFER_DEFAULTS = {
    "ckpt": None, "source": None, "target": None, "out": None, "steps": 2,
    "hsv": False, "max_magnitude": None, "mask": None,
}
DISTILL_DEFAULTS = {
    "teacher": None, "data": None, "out": None, "cycles": 2,
    "epochs_per_cycle": 15, "lr": 2e-3, "lr_decay": 0.8, "mu": 1.0,
    "gamma": 0.05, "seed": 0, "val_fraction": 0.1, "teacher_steps": 2,
    "convergence_threshold": 0.01, "convergence_window": 3,
}
EVAL_DEFAULTS = {
    "data": None, "ckpt": None, "out": None, "steps": 2, "use_gt_flow": False,
    "epe_region": "source", "limit": None,
}
VIZ_DEFAULTS = {
    "flow": None, "out": None, "max_magnitude": None,
}


def _merge_config(defaults, args, required=()):
    """defaults <- JSON config <- explicit flags; reject unknown config keys."""
    merged = dict(defaults)
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            loaded = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {config_path}: {e}")
        if not isinstance(loaded, dict):
            raise ConfigError(f"config {config_path} must hold a JSON object")
        unknown = set(loaded) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        merged.update(loaded)
    for key, value in vars(args).items():
        if key in ("command", "config") or value is None:
            continue
        merged[key] = value
    for key in required:
        if merged.get(key) is None:
            raise ConfigError(f"missing required option --{key.replace('_', '-')}")
    return merged


def _echo_config(out_dir, command, cfg):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {"command": command, "version": __version__, **cfg}
    (out_dir / "config.json").write_text(json.dumps(payload, indent=2, sort_keys=True))


def load_dataset(data_dir, limit=None):
    """Load a generated phantom dataset into memory.

    Returns (records, spacing); each record holds arrays for the pair plus
    ground truth flow, masks and keypoints.
    """
    manifest = load_manifest(data_dir)
    base = Path(data_dir)
    spacing = tuple(manifest.get("spacing_mm", [1.0, 1.0]))
    records = []
    entries = manifest["pairs"][:limit] if limit else manifest["pairs"]
    for entry in entries:
        records.append({
            "id": entry["id"],
            "source": load_image(base / entry["source"])[0],
            "target": load_image(base / entry["target"])[0],
            "gt_flow": read_flo(base / entry["gt_flow"]),
            "source_mask": load_mask(base / entry["source_mask"]),
            "target_mask": load_mask(base / entry["target_mask"]),
            "keypoints_source": np.asarray(entry["keypoints_source"], dtype=np.float64),
            "keypoints_target": np.asarray(entry["keypoints_target"], dtype=np.float64),
        })
    return records, spacing


def _arch_from_cfg(cfg):
    try:
        channels = tuple(int(c) for c in str(cfg["encoder_channels"]).split(","))
        return ArchConfig(num_levels=int(cfg["levels"]), encoder_channels=channels,
                          kernel_size=int(cfg["kernel"]),
                          leaky_slope=float(cfg["leaky_slope"]),
                          lateral_channels=int(cfg["lateral"]),
                          decoder_channels=int(cfg["decoder"]),
                          head_channels=int(cfg["head"]),
                          fusion_channels=int(cfg["fusion"]),
                          variant=cfg["variant"])
    except ValueError as e:
        raise ConfigError(str(e))


def cmd_gen(args):
    cfg = _merge_config(GEN_DEFAULTS, args, required=("out",))
    try:
        ranges = DatasetRanges.from_dict(cfg["ranges"])
        if getattr(args, "contraction_range", None) is not None:
            ranges = DatasetRanges.from_dict(
                {**ranges.to_dict(), "contraction": args.contraction_range})
        if getattr(args, "rotation_range", None) is not None:
            ranges = DatasetRanges.from_dict(
                {**ranges.to_dict(), "rotation_deg": args.rotation_range})
        cfg["ranges"] = ranges.to_dict()
        spacing = (float(cfg["spacing"]), float(cfg["spacing"]))
        manifest = generate_dataset(cfg["out"], n_pairs=int(cfg["n"]),
                                    size=int(cfg["size"]), seed=int(cfg["seed"]),
                                    ranges=ranges, spacing_mm=spacing)
    except ValueError as e:
        raise ConfigError(str(e))
    _echo_config(cfg["out"], "gen", cfg)
    print(f"generated {manifest['n_pairs']} pairs of size {manifest['size']} "
          f"in {cfg['out']}")
    return 0


def cmd_train(args):
    cfg = _merge_config(TRAIN_DEFAULTS, args, required=("data", "out"))
    out_dir = Path(cfg["out"])
    records, _ = load_dataset(cfg["data"])
    pairs = [(r["source"], r["target"]) for r in records]
    start_epoch = 0
    opt_state = None
    if cfg["resume"]:
        params, opt_state, stored_epoch = load_model(cfg["resume"])
        start_epoch = 0 if stored_epoch is None else stored_epoch
        if params.config.variant != cfg["variant"] and getattr(args, "variant", None):
            raise ConfigError(f"checkpoint variant {params.config.variant!r} does "
                              f"not match requested {cfg['variant']!r}")
        cfg["variant"] = params.config.variant
    else:
        arch = _arch_from_cfg(cfg)
        params = init_model(arch, seed=int(cfg["seed"]), dtype=np.dtype(cfg["dtype"]))
    epochs = int(cfg["epochs"])
    if start_epoch >= epochs:
        raise ConfigError(f"checkpoint already at epoch {start_epoch}, "
                          f"nothing to train up to {epochs}")
    weights = LossWeights(lambda_smooth=float(cfg["smooth"]))
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "train_log.jsonl"
    mode = "a" if cfg["resume"] and log_path.exists() else "w"
    t0 = time.perf_counter()
    with open(log_path, mode) as log:
        def progress(epoch, report):
            entry = {"epoch": epoch, **report.to_dict()}
            log.write(json.dumps(entry) + "\n")
            log.flush()
            print(f"epoch {epoch}: total {report.total:.6f}")

        params, opt_state, _ = train_unsupervised(
            params, pairs, weights, epochs=epochs, lr=float(cfg["lr"]),
            seed=int(cfg["seed"]), opt_state=opt_state, start_epoch=start_epoch,
            progress=progress)
    ckpt = out_dir / "model.ckpt"
    save_model(ckpt, params, opt_state, epoch=epochs)
    _echo_config(out_dir, "train", cfg)
    print(f"trained {epochs - start_epoch} epochs in "
          f"{time.perf_counter() - t0:.1f}s; checkpoint at {ckpt}")
    return 0


def cmd_infer(args):
    cfg = _merge_config(INFER_DEFAULTS, args,
                        required=("ckpt", "source", "target", "out"))
    params, _, _ = load_model(cfg["ckpt"])
    source, spacing = load_image(cfg["source"])
    target, _ = load_image(cfg["target"])
    steps = int(cfg["steps"])
    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    progressive_flow(params, source, target, steps=steps)  # warm-up
    t0 = time.perf_counter()
    flow, _ = progressive_flow(params, source, target, steps=steps)
    ms = (time.perf_counter() - t0) * 1e3
    write_flo(out_dir / "flow.flo", flow)
    save_image(out_dir / "warped.png", np.clip(warp(source, flow), 0, 1),
               spacing_mm=spacing)
    if cfg["mask"]:
        mask = load_mask(cfg["mask"])
        save_mask(out_dir / "warped_mask.png", warp_mask(mask, flow))
    if cfg["hsv"]:
        mag = cfg["max_magnitude"]
        if mag is None:
            mag = float(np.max(np.hypot(flow[..., 0], flow[..., 1]))) or 1.0
        PILImage.fromarray(flow_to_hsv(flow, float(mag)), "RGB").save(
            out_dir / "flow_hsv.png")
    _echo_config(out_dir, "infer", cfg)
    print(f"timing: {ms:.1f} ms/frame (steps={steps})")
    return 0


def cmd_distill(args):
    cfg = _merge_config(DISTILL_DEFAULTS, args, required=("teacher", "data", "out"))
    teacher, _, _ = load_model(cfg["teacher"])
    records, _ = load_dataset(cfg["data"])
    pairs = [(r["source"], r["target"]) for r in records]
    try:
        cycle_cfg = CycleConfig(
            num_cycles=int(cfg["cycles"]),
            epochs_per_cycle=int(cfg["epochs_per_cycle"]),
            lr=float(cfg["lr"]),
            lr_decay=float(cfg["lr_decay"]),
            weights=LossWeights(mu_mse=float(cfg["mu"]),
                                gamma_smooth=float(cfg["gamma"])),
            teacher_steps=int(cfg["teacher_steps"]),
            convergence_threshold=float(cfg["convergence_threshold"]),
            convergence_window=int(cfg["convergence_window"]),
            val_fraction=float(cfg["val_fraction"]))
    except ValueError as e:
        raise ConfigError(str(e))

    def progress(cycle, epoch, log):
        print(f"cycle {cycle} epoch {epoch}: flow_loss {log['flow_loss']:.6f}")

    student, logs = cyclic_distill(teacher, pairs, cycle_cfg, seed=int(cfg["seed"]),
                                   progress=progress)
    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    save_model(out_dir / "model.ckpt", student)
    (out_dir / "distill_log.json").write_text(json.dumps(logs, indent=2))
    _echo_config(out_dir, "distill", cfg)
    for entry in logs:
        print(f"cycle {entry['cycle']}: teacher frozen={entry['teacher_frozen']} "
              f"digest {entry['teacher_digest'][:12]}")
    return 0


def cmd_eval(args):
    cfg = _merge_config(EVAL_DEFAULTS, args, required=("data", "out"))
    if not cfg["use_gt_flow"] and cfg["ckpt"] is None:
        raise ConfigError("eval needs --ckpt or --use-gt-flow")
    if cfg["epe_region"] not in ("source", "target"):
        raise ConfigError(f"epe_region must be source or target, got {cfg['epe_region']}")
    records, spacing = load_dataset(cfg["data"], limit=cfg["limit"])
    params = None
    if not cfg["use_gt_flow"]:
        params, _, _ = load_model(cfg["ckpt"])
    steps = int(cfg["steps"])
    reports = []
    per_pair = []
    for rec in records:
        if params is None:
            est = rec["gt_flow"]
        else:
            est, _ = progressive_flow(params, rec["source"], rec["target"], steps=steps)
        report = evaluate_pair(est, rec["gt_flow"], rec["source_mask"],
                               rec["target_mask"], rec["keypoints_source"],
                               rec["keypoints_target"], spacing_mm=spacing,
                               labels=(1, 2, 3), epe_region=cfg["epe_region"])
        reports.append(report)
        per_pair.append({"id": rec["id"], **report.to_dict()})
    aggregate = aggregate_reports(reports)
    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {"aggregate": aggregate.to_dict(), "pairs": per_pair}
    (out_dir / "report.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
    _echo_config(out_dir, "eval", cfg)
    agg = aggregate.to_dict()
    myo = agg["per_label"].get("2", {})
    print(f"evaluated {len(records)} pairs: EPE {agg['epe_mm']['mean']:.3f} mm, "
          f"KPTE {agg['kpte_mm']['mean']:.3f} mm, Dice(MYO) {myo.get('dice', float('nan')):.3f}")
    return 0


def cmd_viz(args):
    cfg = _merge_config(VIZ_DEFAULTS, args, required=("flow", "out"))
    flow = read_flo(cfg["flow"])
    mag = cfg["max_magnitude"]
    if mag is None:
        mag = float(np.max(np.hypot(flow[..., 0], flow[..., 1]))) or 1.0
    if mag <= 0:
        raise ConfigError(f"max_magnitude must be > 0, got {mag}")
    PILImage.fromarray(flow_to_hsv(flow, float(mag)), "RGB").save(cfg["out"])
    print(f"wrote {cfg['out']} (max magnitude {mag:.3f} px)")
    return 0


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="pyramidflow",
        description="Dense 2-D cardiac motion estimation toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON config file; flags override")
        return p

    p = add("gen", "generate a synthetic phantom dataset")
    p.add_argument("--out")
    p.add_argument("--n", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--spacing", type=float)
    p.add_argument("--contraction-range", nargs=2, type=float, metavar=("LO", "HI"))
    p.add_argument("--rotation-range", nargs=2, type=float, metavar=("LO", "HI"))

    p = add("train", "train a motion model on a dataset")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--variant", choices=("pyramid", "single_scale"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--smooth", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--levels", type=int)
    p.add_argument("--encoder-channels")
    p.add_argument("--kernel", type=int)
    p.add_argument("--leaky-slope", type=float)
    p.add_argument("--lateral", type=int)
    p.add_argument("--decoder", type=int)
    p.add_argument("--head", type=int)
    p.add_argument("--fusion", type=int)
    p.add_argument("--dtype", choices=("float32", "float64"))
    p.add_argument("--resume", help="checkpoint to continue from")

    p = add("infer", "estimate the flow for one image pair")
    p.add_argument("--ckpt")
    p.add_argument("--source")
    p.add_argument("--target")
    p.add_argument("--out")
    p.add_argument("--steps", type=int)
    p.add_argument("--hsv", action="store_const", const=True)
    p.add_argument("--max-magnitude", type=float)
    p.add_argument("--mask", help="source label mask to warp along")

    p = add("distill", "cyclic teacher-student training")
    p.add_argument("--teacher")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--cycles", type=int)
    p.add_argument("--epochs-per-cycle", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lr-decay", type=float)
    p.add_argument("--mu", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--val-fraction", type=float)
    p.add_argument("--teacher-steps", type=int)
    p.add_argument("--convergence-threshold", type=float)
    p.add_argument("--convergence-window", type=int)

    p = add("eval", "run the metric suite over a dataset")
    p.add_argument("--data")
    p.add_argument("--ckpt")
    p.add_argument("--out")
    p.add_argument("--steps", type=int)
    p.add_argument("--use-gt-flow", action="store_const", const=True,
                   help="evaluate the stored ground-truth flow (sanity mode)")
    p.add_argument("--epe-region", choices=("source", "target"))
    p.add_argument("--limit", type=int, help="evaluate only the first N pairs")

    p = add("viz", "render a .flo file as an HSV-coded PNG")
    p.add_argument("--flow")
    p.add_argument("--out")
    p.add_argument("--max-magnitude", type=float)
    return parser


COMMANDS = {
    "gen": cmd_gen, "train": cmd_train, "infer": cmd_infer,
    "distill": cmd_distill, "eval": cmd_eval, "viz": cmd_viz,
}


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code else 0
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (ValueError, OSError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
