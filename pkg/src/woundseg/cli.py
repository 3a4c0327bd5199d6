"""Command-line pipeline driver.

One executable with subcommands (phantom-gen, split, select, train,
eval, overlay, intensity, report) driven by an INI config file; flags
override config values and the effective configuration is written next
to each command's outputs. Exit code 0 on success, 1 with a one-line
diagnostic on failure.

Heavy imports happen after argument parsing so that --threads can cap
the BLAS thread pools before numpy loads; --threads 1 gives
bit-reproducible runs.
"""

import argparse
import configparser
import os
import sys
from pathlib import Path


class ConfigError(Exception):
    pass


DEFAULTS = {
    "paths": {
        "out_dir": "out",
    },
    "seed": {
        "seed": "0",
    },
    "phantom": {
        "width": "96",
        "height": "96",
        "n_patients": "20",
        "scans_per_patient": "2",
        "frames_per_scan": "5",
        "wound_axis_a": "10,18",
        "wound_axis_b": "7,13",
        "speckle_sigma": "0.25",
        "bone_prob": "0.3",
        "frame_center_jitter": "1.5",
        "frame_axis_jitter": "0.04",
    },
    "splits": {
        "train": "0.6",
        "val": "0.2",
        "test": "0.2",
    },
    "augment": {
        "brightness": "-0.1,0.1",
        "noise_sigma": "0,0.05",
        "contrast": "0.8,1.2",
        "rotation": "-15,15",
        "flip_prob": "0.5",
        "enable_brightness": "true",
        "enable_noise": "true",
        "enable_contrast": "true",
        "enable_rotation": "true",
        "enable_flip": "true",
    },
    "model": {
        "levels": "4",
        "base_channels": "8",
        "leaky_slope": "0.01",
        "in_channels": "1",
    },
    "trainer": {
        "lr0": "1e-3",
        "gamma": "0.1",
        "step_size": "10",
        "batch_size": "3",
        "max_epochs": "40",
        "patience": "10",
        "min_delta": "1e-3",
        "input_size": "96",
        "loss": "bce",
        "normalize": "dataset_stats",
    },
    "eval": {
        "split": "test",
        "threshold": "0.5",
    },
    "intensity": {
        "split": "test",
    },
}


def load_config(path) -> dict:
    """Merge the INI file over the defaults; unknown sections or keys
    are reported as errors."""
    merged = {section: dict(keys) for section, keys in DEFAULTS.items()}
    if path is None:
        return merged
    parser = configparser.ConfigParser()
    try:
        read = parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from exc
    if not read:
        raise ConfigError(f"config file not found: {path}")
    for section in parser.sections():
        if section not in merged:
            raise ConfigError(f"unknown config section [{section}]")
        for key, value in parser.items(section):
            if key not in merged[section]:
                raise ConfigError(f"unknown config key [{section}] {key}")
            merged[section][key] = value
    return merged


def _typed(config, section, key, convert, describe):
    raw = config[section][key]
    try:
        return convert(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {key}: expected {describe}, got {raw!r}") from exc


def get_int(config, section, key) -> int:
    return _typed(config, section, key, int, "an integer")


def get_float(config, section, key) -> float:
    return _typed(config, section, key, float, "a number")


def get_bool(config, section, key) -> bool:
    def convert(raw):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(raw)

    return _typed(config, section, key, convert, "a boolean")


def get_pair(config, section, key) -> tuple:
    def convert(raw):
        parts = [float(p) for p in raw.split(",")]
        if len(parts) != 2:
            raise ValueError(raw)
        return tuple(parts)

    return _typed(config, section, key, convert, "two comma-separated numbers")


def write_effective_config(config: dict, path: Path) -> None:
    parser = configparser.ConfigParser()
    for section in DEFAULTS:
        parser[section] = dict(sorted(config[section].items()))
    with open(path, "w", encoding="utf-8") as f:
        parser.write(f)


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="woundseg",
        description="ultrasound wound segmentation pipeline",
    )
    parser.add_argument("--config", help="INI config file")
    parser.add_argument("--out", help="output directory (overrides [paths] out_dir)")
    parser.add_argument("--seed", type=int, help="global seed (overrides [seed] seed)")
    parser.add_argument("--threads", type=int, help="cap BLAS threads (1 = reproducible)")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("phantom-gen", help="synthesize a phantom dataset with manifest")

    p = sub.add_parser("split", help="re-partition patients into train/val/test")
    p.add_argument("--manifest", help="input manifest (default: OUT/dataset/manifest.json)")

    p = sub.add_parser("select", help="pick a diverse frame subset")
    p.add_argument("--manifest")
    p.add_argument("--split", choices=("train", "val", "test"))
    p.add_argument("--k", type=int, required=True, help="number of frames to select")

    p = sub.add_parser("train", help="train the segmentation network")
    p.add_argument("--manifest")

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--manifest")
    p.add_argument("--checkpoint", help="model checkpoint to evaluate")
    p.add_argument("--pred-masks", help="directory of prediction masks to score instead")
    p.add_argument("--split", choices=("train", "val", "test"))
    p.add_argument("--threshold", type=float)

    p = sub.add_parser("overlay", help="render TP/FP/FN overlays")
    p.add_argument("--manifest")
    p.add_argument("--checkpoint")
    p.add_argument("--pred-masks")
    p.add_argument("--split", choices=("train", "val", "test"))
    p.add_argument("--threshold", type=float)
    p.add_argument("--limit", type=int, help="render at most N frames")

    p = sub.add_parser("intensity", help="wound-region intensity ratios per scan")
    p.add_argument("--manifest")
    p.add_argument("--split", choices=("train", "val", "test"))

    sub.add_parser("report", help="bundle CSV outputs into a text summary and figures")
    return parser


def _set_thread_env(threads):
    if threads is None:
        return
    if threads < 1:
        raise ConfigError(f"--threads must be >= 1, got {threads}")
    for var in (
        "OPENBLAS_NUM_THREADS",
        "OMP_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
    ):
        os.environ[var] = str(threads)


# ---------------------------------------------------------------------------
# command context


class Context:
    """Resolved configuration shared by the command implementations."""

    def __init__(self, args):
        self.config = load_config(args.config)
        if args.out is not None:
            self.config["paths"]["out_dir"] = args.out
        if args.seed is not None:
            self.config["seed"]["seed"] = str(args.seed)
        command = getattr(args, "command", "")
        if command in ("eval", "overlay"):
            if getattr(args, "split", None) is not None:
                self.config["eval"]["split"] = args.split
            if getattr(args, "threshold", None) is not None:
                self.config["eval"]["threshold"] = str(args.threshold)
        if command == "intensity" and getattr(args, "split", None) is not None:
            self.config["intensity"]["split"] = args.split
        self.args = args
        self.out_dir = Path(self.config["paths"]["out_dir"])
        self.seed = get_int(self.config, "seed", "seed")

    def prepare_out(self, command: str) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        write_effective_config(self.config, self.out_dir / f"{command}.effective.ini")
        return self.out_dir

    def manifest_path(self) -> Path:
        if getattr(self.args, "manifest", None):
            return Path(self.args.manifest)
        return self.out_dir / "dataset" / "manifest.json"

    def load_manifest(self):
        from . import data

        path = self.manifest_path()
        if not path.is_file():
            raise FileNotFoundError(f"manifest not found: {path}")
        return data.Manifest.load(path)

    def split_fractions(self) -> tuple:
        return tuple(get_float(self.config, "splits", s) for s in ("train", "val", "test"))

    def augment_config(self):
        from .augment import AugmentConfig

        c = self.config
        return AugmentConfig(
            brightness_range=get_pair(c, "augment", "brightness"),
            noise_sigma_range=get_pair(c, "augment", "noise_sigma"),
            contrast_range=get_pair(c, "augment", "contrast"),
            rotation_range=get_pair(c, "augment", "rotation"),
            flip_prob=get_float(c, "augment", "flip_prob"),
            enable_brightness=get_bool(c, "augment", "enable_brightness"),
            enable_noise=get_bool(c, "augment", "enable_noise"),
            enable_contrast=get_bool(c, "augment", "enable_contrast"),
            enable_rotation=get_bool(c, "augment", "enable_rotation"),
            enable_flip=get_bool(c, "augment", "enable_flip"),
        )

    def model_config(self):
        from .unet import UNetConfig

        c = self.config
        return UNetConfig(
            levels=get_int(c, "model", "levels"),
            base_channels=get_int(c, "model", "base_channels"),
            leaky_slope=get_float(c, "model", "leaky_slope"),
            in_channels=get_int(c, "model", "in_channels"),
        )

    def train_config(self):
        from .train import TrainConfig
        from .util import derive_seed

        c = self.config
        return TrainConfig(
            lr0=get_float(c, "trainer", "lr0"),
            gamma=get_float(c, "trainer", "gamma"),
            step_size=get_int(c, "trainer", "step_size"),
            batch_size=get_int(c, "trainer", "batch_size"),
            max_epochs=get_int(c, "trainer", "max_epochs"),
            patience=get_int(c, "trainer", "patience"),
            min_delta=get_float(c, "trainer", "min_delta"),
            input_size=get_int(c, "trainer", "input_size"),
            loss=c["trainer"]["loss"],
            normalize=c["trainer"]["normalize"],
            threshold=get_float(c, "eval", "threshold"),
            seed=derive_seed(self.seed, "train"),
        )

    def dataset_spec(self):
        from .phantom import DatasetSpec

        c = self.config
        return DatasetSpec(
            width=get_int(c, "phantom", "width"),
            height=get_int(c, "phantom", "height"),
            n_patients=get_int(c, "phantom", "n_patients"),
            scans_per_patient=get_int(c, "phantom", "scans_per_patient"),
            frames_per_scan=get_int(c, "phantom", "frames_per_scan"),
            axis_a=get_pair(c, "phantom", "wound_axis_a"),
            axis_b=get_pair(c, "phantom", "wound_axis_b"),
            speckle_sigma=get_float(c, "phantom", "speckle_sigma"),
            bone_prob=get_float(c, "phantom", "bone_prob"),
            frame_center_jitter=get_float(c, "phantom", "frame_center_jitter"),
            frame_axis_jitter=get_float(c, "phantom", "frame_axis_jitter"),
            split_fractions=self.split_fractions(),
        )


# ---------------------------------------------------------------------------
# commands


def cmd_phantom_gen(ctx: Context) -> int:
    from . import data, phantom

    out = ctx.prepare_out("phantom-gen")
    dataset_dir = out / "dataset"
    manifest = phantom.generate_dataset(ctx.dataset_spec(), dataset_dir, ctx.seed)
    report = data.validate_manifest(manifest)
    print(f"wrote {dataset_dir / 'manifest.json'}")
    print(report.table())
    return 0 if report.ok else 1


def cmd_split(ctx: Context) -> int:
    from . import data
    from .util import derive_seed

    out = ctx.prepare_out("split")
    manifest = ctx.load_manifest()
    new = data.partition_by_patient(
        manifest, ctx.split_fractions(), derive_seed(ctx.seed, "split")
    )
    # re-anchor relative paths to the output manifest's directory
    for patient in new.patients:
        for scan in patient.scans:
            scan.frames = [
                data.FrameRecord(
                    image=os.path.relpath(manifest.resolve(f.image), out),
                    mask=os.path.relpath(manifest.resolve(f.mask), out),
                )
                for f in scan.frames
            ]
    new.root = out
    new.save(out / "manifest.json")
    report = data.validate_manifest(new)
    print(f"wrote {out / 'manifest.json'}")
    print(report.table())
    return 0 if report.ok else 1


def cmd_select(ctx: Context) -> int:
    import json

    from . import data
    from .select import embed_frames, k_center_select

    out = ctx.prepare_out("select")
    manifest = ctx.load_manifest()
    split = ctx.args.split or "train"
    entries = manifest.frames_for_split(split)
    if len(entries) < 2:
        raise ValueError(f"split {split!r} has {len(entries)} frames; need at least 2")
    frames = [data.load_frame(image) for _, image, _ in entries]
    ids = [frame_id for frame_id, _, _ in entries]
    result = embed_frames(frames, frame_ids=ids)
    if result.degenerate:
        print("warning: all frames identical; selection is arbitrary", file=sys.stderr)
    chosen = k_center_select(result, ctx.args.k)
    selected_ids = [ids[i] for i in chosen]
    path = out / "selected_frames.json"
    with open(path, "w", encoding="utf-8") as f:
        json.dump(selected_ids, f, indent=2)
        f.write("\n")
    print(f"wrote {path} ({len(selected_ids)} frames)")
    return 0


def cmd_train(ctx: Context) -> int:
    from . import train as trainmod
    from . import unet as unetmod

    out = ctx.prepare_out("train")
    model_config = ctx.model_config()
    train_config = ctx.train_config()
    augment_config = ctx.augment_config()
    manifest = ctx.load_manifest()
    params = unetmod.build(model_config, seed=train_config.seed)
    result = trainmod.train(model_config, params, manifest, train_config, augment_config)
    checkpoint = out / "checkpoint_best.ckpt"
    unetmod.save_model(checkpoint, result.params, model_config, result.norm_stats)
    trainmod.write_history(out / "history.csv", result.history)
    if result.history:
        print(
            f"trained {len(result.history)} epochs; "
            f"best val dice {result.best_val_dice:.4f} at epoch {result.best_epoch}"
        )
    else:
        print("no epochs ran (max_epochs 0); checkpoint holds initial weights")
    print(f"wrote {checkpoint}")
    return 0


def _prediction_source(ctx: Context):
    """Either a checkpoint-backed predictor or a reader of pre-computed
    prediction masks."""
    from . import data
    from . import unet as unetmod
    from .train import normalizer_from_stats

    pred_dir = getattr(ctx.args, "pred_masks", None)
    threshold = get_float(ctx.config, "eval", "threshold")
    if pred_dir is not None:
        pred_dir = Path(pred_dir)
        if not pred_dir.is_dir():
            raise FileNotFoundError(f"prediction mask directory not found: {pred_dir}")

        def predict(frame_id, frame):
            mask_path = pred_dir / (frame_id.replace("/", "_") + ".png")
            if not mask_path.is_file():
                raise FileNotFoundError(f"no prediction mask for {frame_id}: {mask_path}")
            mask = data.load_mask(mask_path)
            if mask.shape != frame.shape:
                raise ValueError(f"prediction mask {mask_path} does not match frame size")
            return mask

        return predict

    checkpoint = getattr(ctx.args, "checkpoint", None)
    if checkpoint is None:
        checkpoint = ctx.out_dir / "checkpoint_best.ckpt"
    checkpoint = Path(checkpoint)
    if not checkpoint.is_file():
        raise FileNotFoundError(f"checkpoint not found: {checkpoint}")
    params, model_config, norm_stats = unetmod.load_model(checkpoint)
    normalize_fn = normalizer_from_stats(norm_stats)

    def predict(frame_id, frame):
        return unetmod.predict_mask(model_config, params, normalize_fn(frame), threshold)

    return predict


def cmd_eval(ctx: Context) -> int:
    from . import data, metrics
    from .util import write_csv

    out = ctx.prepare_out("eval")
    manifest = ctx.load_manifest()
    split = ctx.config["eval"]["split"]
    predict = _prediction_source(ctx)
    entries = manifest.frames_for_split(split)
    if not entries:
        raise ValueError(f"split {split!r} has no frames")

    rows = []
    frame_scores = []
    for frame_id, image_path, mask_path in entries:
        frame, gt = data.load_pair(image_path, mask_path)
        pred = predict(frame_id, frame)
        counts = metrics.confusion(pred, gt)
        m = metrics.scores(counts)
        frame_scores.append(m)
        rows.append(
            [
                frame_id,
                counts.tp,
                counts.fp,
                counts.fn,
                counts.tn,
                f"{m.dice:.6f}",
                f"{m.precision:.6f}",
                f"{m.recall:.6f}",
            ]
        )
    write_csv(
        out / "metrics_frames.csv",
        ["frame_id", "tp", "fp", "fn", "tn", "dice", "precision", "recall"],
        rows,
    )
    agg = metrics.aggregate(frame_scores)
    write_csv(
        out / "metrics_aggregate.csv",
        ["metric", "mean", "std", "n_frames", "formatted"],
        [
            [name, f"{agg.mean[name]:.6f}", f"{agg.std[name]:.6f}", agg.n, agg.format_row(name)]
            for name in ("dice", "precision", "recall")
        ],
    )
    for name in ("dice", "precision", "recall"):
        print(f"{name}: {agg.format_row(name)}  (n={agg.n})")
    return 0


def cmd_overlay(ctx: Context) -> int:
    from . import data
    from . import overlay as overlaymod

    out = ctx.prepare_out("overlay")
    manifest = ctx.load_manifest()
    split = ctx.config["eval"]["split"]
    predict = _prediction_source(ctx)
    entries = manifest.frames_for_split(split)
    if not entries:
        raise ValueError(f"split {split!r} has no frames")
    limit = getattr(ctx.args, "limit", None)
    if limit is not None:
        entries = entries[:limit]
    overlay_dir = out / "overlays"
    overlay_dir.mkdir(parents=True, exist_ok=True)
    for frame_id, image_path, mask_path in entries:
        frame, gt = data.load_pair(image_path, mask_path)
        pred = predict(frame_id, frame)
        rgba = overlaymod.render_overlay(frame, pred, gt)
        overlaymod.save_png(overlay_dir / (frame_id.replace("/", "_") + ".png"), rgba)
    print(f"wrote {len(entries)} overlays to {overlay_dir}")
    return 0


def cmd_intensity(ctx: Context) -> int:
    from . import data, morphology
    from .util import write_csv

    out = ctx.prepare_out("intensity")
    manifest = ctx.load_manifest()
    split = ctx.config["intensity"]["split"]
    scans = manifest.scans_for_split(split)
    if not scans:
        raise ValueError(f"split {split!r} has no scans")

    rows = []
    n_analyzed = 0
    for scan_id, frames in scans:
        pairs = [data.load_pair(image, mask) for _, image, mask in frames]
        summary = morphology.analyze_scan(scan_id, pairs)
        if summary.n_frames == 0:
            continue
        n_analyzed += 1
        for region in morphology.REGION_NAMES:
            ratio = summary.ratios[region]
            mean_i = summary.region_means[region]
            rows.append(
                [
                    scan_id,
                    region,
                    f"{morphology.REGION_TARGETS[region]:.2f}",
                    f"{summary.achieved[region]:.6f}" if summary.achieved[region] is not None else "",
                    f"{mean_i:.6f}" if mean_i is not None else "",
                    f"{ratio:.6f}" if ratio is not None else "",
                ]
            )
    write_csv(
        out / "intensity.csv",
        ["scan_id", "region", "target_fraction", "achieved_fraction", "mean_intensity", "ratio"],
        rows,
    )
    print(f"wrote {out / 'intensity.csv'} ({n_analyzed} scans)")
    return 0


def cmd_report(ctx: Context) -> int:
    from .report import write_report

    out = ctx.prepare_out("report")
    written = write_report(out)
    for path in written:
        print(f"wrote {path}")
    return 0


_COMMANDS = {
    "phantom-gen": cmd_phantom_gen,
    "split": cmd_split,
    "select": cmd_select,
    "train": cmd_train,
    "eval": cmd_eval,
    "overlay": cmd_overlay,
    "intensity": cmd_intensity,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _set_thread_env(args.threads)
        ctx = Context(args)
        return _COMMANDS[args.command](ctx)
    except BrokenPipeError:
        return 1
    except Exception as exc:  # one-line diagnostic, nonzero exit
        print(f"woundseg {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
