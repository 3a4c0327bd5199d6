"""Binary morphology and wound-region intensity analysis.

One erosion/dilation step uses the 3x3 cross structuring element; area
scaling iterates steps until the target area is bracketed and applies
the final step partially so the achieved pixel count is exact up to
rounding. The region split follows the 0-50 / 50-75 / 75-100 /
100-120 % area scheme, and intensity ratios compare each region's mean
against the mean over the whole wound.
"""

from dataclasses import dataclass

import numpy as np

REGION_NAMES = ("core", "mid", "rim", "halo")

# outer area-scale target of each region band, relative to the wound
REGION_TARGETS = {"core": 0.50, "mid": 0.75, "rim": 1.00, "halo": 1.20}


def _as_mask(mask) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.dtype != np.bool_:
        raise ValueError("mask must be boolean")
    if mask.ndim != 2 or mask.shape[0] < 1 or mask.shape[1] < 1:
        raise ValueError(f"mask must be a non-empty 2-D array, got shape {mask.shape}")
    return mask


def erode(mask: np.ndarray) -> np.ndarray:
    """One erosion step; pixels beyond the border count as background."""
    mask = _as_mask(mask)
    p = np.pad(mask, 1, constant_values=False)
    return (
        p[1:-1, 1:-1]
        & p[:-2, 1:-1]
        & p[2:, 1:-1]
        & p[1:-1, :-2]
        & p[1:-1, 2:]
    )


def dilate(mask: np.ndarray) -> np.ndarray:
    """One dilation step with the same cross element."""
    mask = _as_mask(mask)
    p = np.pad(mask, 1, constant_values=False)
    return (
        p[1:-1, 1:-1]
        | p[:-2, 1:-1]
        | p[2:, 1:-1]
        | p[1:-1, :-2]
        | p[1:-1, 2:]
    )


@dataclass
class ScaledMask:
    mask: np.ndarray
    target: float
    achieved: float
    steps: int  # morphology iterations consumed; negative for erosion


def _ring_order(ring: np.ndarray, anchor: np.ndarray, fallback: np.ndarray):
    """Flat indices of the ring pixels, most-attached-to-anchor first.

    Attachment is the 4-neighbor count inside `anchor` (then inside
    `fallback`, then lowest linear index), so a partial morphology step
    peels the least-anchored pixels first. Deterministic.
    """

    def neighbor_count(selection):
        p = np.pad(selection, 1, constant_values=False).astype(np.int32)
        return p[1:-1, :-2] + p[1:-1, 2:] + p[:-2, 1:-1] + p[2:, 1:-1]

    n_anchor = neighbor_count(anchor)
    n_fallback = neighbor_count(fallback)
    idx = np.flatnonzero(ring.ravel())
    keys = np.stack([-n_anchor.ravel()[idx], -n_fallback.ravel()[idx], idx])
    return idx[np.lexsort(keys[::-1])]


def scale_mask_to_fraction(mask: np.ndarray, target: float) -> ScaledMask:
    """Shrink or grow a mask towards `target` times its area.

    Iterates unit erosion (target < 1) or dilation (target > 1) until
    the target pixel count is bracketed, then applies the final step
    partially (peeling or adding the least-anchored ring pixels) so the
    achieved count is exact up to rounding. Dilation can saturate at
    the image borders before reaching the target; the best achieved
    fraction is reported either way.
    """
    mask = _as_mask(mask)
    area0 = int(mask.sum())
    if area0 == 0:
        raise ValueError("cannot scale an empty mask")
    if target <= 0:
        raise ValueError(f"target fraction must be > 0, got {target}")
    if target == 1.0:
        return ScaledMask(mask=mask.copy(), target=1.0, achieved=1.0, steps=0)

    wanted = int(round(target * area0))
    if target < 1.0:
        prev = mask
        current = mask
        steps = 0
        while int(current.sum()) > wanted:
            prev = current
            current = erode(current)
            steps += 1
        have = int(current.sum())
        if have < wanted:
            ring = prev & ~current
            order = _ring_order(ring, anchor=current, fallback=prev)
            keep = np.zeros(mask.size, dtype=bool)
            keep[order[: wanted - have]] = True
            current = current | keep.reshape(mask.shape)
        return ScaledMask(
            mask=current, target=target, achieved=int(current.sum()) / area0, steps=-steps
        )

    prev = mask
    current = mask
    steps = 0
    while int(current.sum()) < wanted:
        prev = current
        grown = dilate(current)
        if int(grown.sum()) == int(current.sum()):
            break  # saturated at the image borders
        current = grown
        steps += 1
    have = int(current.sum())
    if have > wanted:
        ring = current & ~prev
        order = _ring_order(ring, anchor=prev, fallback=current)
        drop = np.zeros(mask.size, dtype=bool)
        drop[order[wanted - int(prev.sum()):]] = True
        current = current & ~drop.reshape(mask.shape)
    return ScaledMask(
        mask=current, target=target, achieved=int(current.sum()) / area0, steps=steps
    )


@dataclass
class RegionSet:
    """Disjoint wound bands: core (0-50% area), mid (50-75%),
    rim (75-100%) and halo (100-120%, outside the wound)."""

    wound: np.ndarray
    core: np.ndarray
    mid: np.ndarray
    rim: np.ndarray
    halo: np.ndarray
    achieved: dict  # region -> achieved outer area fraction

    def region(self, name: str) -> np.ndarray:
        return getattr(self, name)


def build_regions(mask: np.ndarray) -> RegionSet:
    """Split a wound mask into the four analysis regions.

    Scaled interiors of the same mask are nested (smaller targets erode
    at least as far, and a shared bracketing ring is peeled in one fixed
    order), so the three interior bands partition the wound exactly.
    """
    mask = _as_mask(mask)
    if not mask.any():
        raise ValueError("cannot build regions for an empty mask")

    inner50 = scale_mask_to_fraction(mask, REGION_TARGETS["core"])
    inner75 = scale_mask_to_fraction(mask, REGION_TARGETS["mid"])
    grown = scale_mask_to_fraction(mask, REGION_TARGETS["halo"])
    if (inner50.mask & ~inner75.mask).any():
        raise AssertionError("scaled interiors are not nested")

    core = inner50.mask
    mid = inner75.mask & ~core
    rim = mask & ~inner75.mask
    halo = grown.mask & ~mask
    achieved = {
        "core": float(inner50.achieved),
        "mid": float(inner75.achieved),
        "rim": 1.0,
        "halo": float(grown.achieved),
    }
    return RegionSet(wound=mask.copy(), core=core, mid=mid, rim=rim, halo=halo, achieved=achieved)


@dataclass
class IntensityReport:
    """Mean intensity per region and its ratio against the whole-wound
    mean; regions that came out empty report None instead of 0."""

    wound_mean: float
    region_means: dict
    ratios: dict
    achieved: dict


def intensity_ratios(frame: np.ndarray, regions: RegionSet) -> IntensityReport:
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape != regions.wound.shape:
        raise ValueError(f"frame shape {frame.shape} does not match mask {regions.wound.shape}")
    if not regions.wound.any():
        raise ValueError("wound mask is empty")
    wound_mean = float(frame[regions.wound].mean())
    region_means = {}
    ratios = {}
    for name in REGION_NAMES:
        selected = regions.region(name)
        if selected.any():
            m = float(frame[selected].mean())
            region_means[name] = m
            ratios[name] = m / wound_mean if wound_mean > 0 else None
        else:
            region_means[name] = None
            ratios[name] = None
    return IntensityReport(
        wound_mean=wound_mean,
        region_means=region_means,
        ratios=ratios,
        achieved=dict(regions.achieved),
    )


@dataclass
class ScanIntensity:
    """Per-scan averages of the per-frame region analysis."""

    scan_id: str
    n_frames: int  # frames with non-empty ground truth
    ratios: dict
    region_means: dict
    achieved: dict


def analyze_scan(scan_id: str, frames_and_masks) -> ScanIntensity:
    """Average per-frame ratios over the frames of one sweep scan,
    skipping frames whose ground-truth mask is empty."""
    per_region = {name: [] for name in REGION_NAMES}
    per_mean = {name: [] for name in REGION_NAMES}
    per_achieved = {name: [] for name in REGION_NAMES}
    n_used = 0
    for frame, mask in frames_and_masks:
        if not mask.any():
            continue
        report = intensity_ratios(frame, build_regions(mask))
        n_used += 1
        for name in REGION_NAMES:
            if report.ratios[name] is not None:
                per_region[name].append(report.ratios[name])
                per_mean[name].append(report.region_means[name])
            per_achieved[name].append(report.achieved[name])

    def avg(values):
        return float(np.mean(values)) if values else None

    return ScanIntensity(
        scan_id=scan_id,
        n_frames=n_used,
        ratios={n: avg(per_region[n]) for n in REGION_NAMES},
        region_means={n: avg(per_mean[n]) for n in REGION_NAMES},
        achieved={n: avg(per_achieved[n]) for n in REGION_NAMES},
    )
