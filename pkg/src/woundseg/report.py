"""Bundle the pipeline's CSV outputs into one text summary plus
matplotlib figures rendered next to it."""

import csv
from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .morphology import REGION_NAMES, REGION_TARGETS  # noqa: E402

# no Software/version chunk so identical runs give identical bytes
_PNG_METADATA = {"Software": None}
_DPI = 120


def _read_csv(path: Path):
    with open(path, "r", newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def _save(fig, path: Path):
    fig.savefig(path, dpi=_DPI, metadata=_PNG_METADATA)
    plt.close(fig)


def _training_section(out_dir: Path, fig_dir: Path, lines, figures):
    history_path = out_dir / "history.csv"
    if not history_path.is_file():
        return
    rows = _read_csv(history_path)
    lines.append("Training")
    if not rows:
        lines.append("  no epochs ran")
        lines.append("")
        return
    epochs = [int(r["epoch"]) for r in rows]
    losses = [float(r["train_loss"]) for r in rows]
    dices = [float(r["val_dice"]) for r in rows]
    lrs = [float(r["lr"]) for r in rows]
    best = max(range(len(rows)), key=lambda i: dices[i])
    lines.append(f"  epochs run: {len(rows)}")
    lines.append(f"  best val dice: {dices[best]:.4f} at epoch {epochs[best]}")
    lines.append(f"  final train loss: {losses[-1]:.4f}, final lr: {lrs[-1]:g}")
    lines.append("")

    fig, (ax1, ax3) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    ax1.plot(epochs, losses, color="tab:red", label="train loss")
    ax1.set_ylabel("train loss", color="tab:red")
    ax2 = ax1.twinx()
    ax2.plot(epochs, dices, color="tab:blue", label="val dice")
    ax2.set_ylabel("val dice", color="tab:blue")
    ax2.set_ylim(0, 1)
    ax1.set_title("training curves")
    ax3.step(epochs, lrs, where="post", color="tab:green")
    ax3.set_yscale("log")
    ax3.set_ylabel("learning rate")
    ax3.set_xlabel("epoch")
    fig.tight_layout()
    path = fig_dir / "training_curves.png"
    _save(fig, path)
    figures.append(path)


def _metrics_section(out_dir: Path, fig_dir: Path, lines, figures):
    agg_path = out_dir / "metrics_aggregate.csv"
    frames_path = out_dir / "metrics_frames.csv"
    if agg_path.is_file():
        rows = _read_csv(agg_path)
        lines.append("Segmentation metrics (mean ± std over frames)")
        for r in rows:
            lines.append(
                f"  {r['metric']:<10} {float(r['mean']):.2f} ± {float(r['std']):.2f}"
                f"  (n={r['n_frames']})"
            )
        lines.append("")
    if frames_path.is_file():
        rows = _read_csv(frames_path)
        if rows:
            dices = [float(r["dice"]) for r in rows]
            fig, ax = plt.subplots(figsize=(6, 4))
            ax.hist(dices, bins=20, range=(0, 1), color="tab:blue", edgecolor="black")
            ax.set_xlabel("per-frame dice")
            ax.set_ylabel("frames")
            ax.set_title("dice distribution")
            fig.tight_layout()
            path = fig_dir / "dice_histogram.png"
            _save(fig, path)
            figures.append(path)


def _intensity_section(out_dir: Path, fig_dir: Path, lines, figures):
    path = out_dir / "intensity.csv"
    if not path.is_file():
        return
    rows = _read_csv(path)
    per_region = {name: [] for name in REGION_NAMES}
    per_achieved = {name: [] for name in REGION_NAMES}
    for r in rows:
        name = r["region"]
        if name in per_region and r["ratio"] != "":
            per_region[name].append(float(r["ratio"]))
            per_achieved[name].append(float(r["achieved_fraction"]))
    n_scans = len({r["scan_id"] for r in rows})
    lines.append(f"Wound-region intensity ratios ({n_scans} scans)")
    lines.append("  region  target  achieved  ratio (mean ± std over scans)")
    means = []
    stds = []
    for name in REGION_NAMES:
        values = per_region[name]
        if not values:
            lines.append(f"  {name:<7} {REGION_TARGETS[name]:.2f}    -         -")
            means.append(0.0)
            stds.append(0.0)
            continue
        mean = float(np.mean(values))
        std = float(np.std(values))
        achieved = float(np.mean(per_achieved[name]))
        lines.append(
            f"  {name:<7} {REGION_TARGETS[name]:.2f}    {achieved:.2f}      "
            f"{mean:.2f} ± {std:.2f}"
        )
        means.append(mean)
        stds.append(std)
    lines.append("")

    fig, ax = plt.subplots(figsize=(6, 4))
    xs = range(len(REGION_NAMES))
    ax.bar(xs, means, yerr=stds, capsize=4,
           color=["tab:blue", "tab:orange", "tab:green", "tab:red"])
    ax.axhline(1.0, color="black", linewidth=0.8, linestyle="--")
    ax.set_xticks(list(xs))
    ax.set_xticklabels([f"{n}\n({REGION_TARGETS[n]:.0%})" for n in REGION_NAMES])
    ax.set_ylabel("mean intensity ratio vs whole wound")
    ax.set_title("wound-region intensity ratios")
    fig.tight_layout()
    fig_path = fig_dir / "intensity_ratios.png"
    _save(fig, fig_path)
    figures.append(fig_path)


def write_report(out_dir) -> list:
    """Summarize whatever CSVs exist in `out_dir` into report.txt and
    PNG figures under figures/. Returns the files written."""
    out_dir = Path(out_dir)
    fig_dir = out_dir / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)
    lines = ["wound segmentation report", "=" * 26, ""]
    figures = []
    _training_section(out_dir, fig_dir, lines, figures)
    _metrics_section(out_dir, fig_dir, lines, figures)
    _intensity_section(out_dir, fig_dir, lines, figures)
    if len(lines) == 3:
        lines.append("no CSV outputs found; run train/eval/intensity first")
    if figures:
        lines.append("Figures")
        for f in figures:
            lines.append(f"  {f.relative_to(out_dir)}")
        lines.append("")
    report_path = out_dir / "report.txt"
    with open(report_path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines).rstrip() + "\n")
    return [report_path] + figures
