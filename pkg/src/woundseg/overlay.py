"""Color-coded overlay rendering.

Prediction-vs-GT overlays mark true positives green, false positives
yellow and false negatives red; true negatives stay transparent.
Region overlays use blue/orange/green/red for the core/mid/rim/halo
wound bands. The pure color layer is kept separate from the composite
so category pixel counts can be checked exactly.
"""

import numpy as np
from PIL import Image

TP_COLOR = (0, 255, 0)
FP_COLOR = (255, 255, 0)
FN_COLOR = (255, 0, 0)

REGION_COLORS = {
    "core": (0, 0, 255),
    "mid": (255, 165, 0),
    "rim": (0, 255, 0),
    "halo": (255, 0, 0),
}


def _check_dims(frame, masks):
    for mask in masks:
        if mask.shape != frame.shape:
            raise ValueError(f"mask shape {mask.shape} does not match frame {frame.shape}")


def overlay_layer(pred: np.ndarray, gt: np.ndarray, alpha: float = 0.5) -> np.ndarray:
    """RGBA layer where every pixel is exactly one of TP green,
    FP yellow, FN red or transparent TN."""
    if pred.shape != gt.shape:
        raise ValueError(f"mask shape mismatch: {pred.shape} vs {gt.shape}")
    h, w = pred.shape
    layer = np.zeros((h, w, 4), dtype=np.uint8)
    a = int(round(alpha * 255))
    for selector, color in (
        (pred & gt, TP_COLOR),
        (pred & ~gt, FP_COLOR),
        (~pred & gt, FN_COLOR),
    ):
        layer[selector] = (*color, a)
    return layer


def region_layer(regions, alpha: float = 0.5) -> np.ndarray:
    """RGBA layer coloring the four (disjoint) wound regions."""
    h, w = regions.wound.shape
    layer = np.zeros((h, w, 4), dtype=np.uint8)
    a = int(round(alpha * 255))
    for name, color in REGION_COLORS.items():
        layer[regions.region(name)] = (*color, a)
    return layer


def composite(frame: np.ndarray, layer: np.ndarray, alpha: float = 0.5) -> np.ndarray:
    """Alpha-blend a color layer onto the grayscale frame; returns RGBA
    uint8 with full opacity."""
    if layer.shape[:2] != frame.shape:
        raise ValueError(f"layer shape {layer.shape[:2]} does not match frame {frame.shape}")
    base = np.clip(np.asarray(frame, dtype=np.float64), 0.0, 1.0) * 255.0
    rgb = np.repeat(base[..., None], 3, axis=2)
    tinted = layer[..., 3] > 0
    rgb[tinted] = (1.0 - alpha) * rgb[tinted] + alpha * layer[tinted, :3].astype(np.float64)
    out = np.empty((*frame.shape, 4), dtype=np.uint8)
    out[..., :3] = np.rint(rgb).astype(np.uint8)
    out[..., 3] = 255
    return out


def render_overlay(frame: np.ndarray, pred: np.ndarray, gt: np.ndarray, alpha: float = 0.5) -> np.ndarray:
    """TP/FP/FN overlay composited onto the frame (RGBA uint8)."""
    _check_dims(frame, (pred, gt))
    return composite(frame, overlay_layer(pred, gt, alpha), alpha)


def render_regions(frame: np.ndarray, regions, alpha: float = 0.5) -> np.ndarray:
    """Wound-region overlay composited onto the frame (RGBA uint8)."""
    _check_dims(frame, (regions.wound,))
    return composite(frame, region_layer(regions, alpha), alpha)


def layer_counts(layer: np.ndarray) -> dict:
    """Pixels per overlay category, for checking against confusion counts."""
    opaque = layer[..., 3] > 0
    counts = {}
    for name, color in (("tp", TP_COLOR), ("fp", FP_COLOR), ("fn", FN_COLOR)):
        counts[name] = int(np.count_nonzero(opaque & np.all(layer[..., :3] == color, axis=-1)))
    counts["tn"] = int(np.count_nonzero(~opaque))
    return counts


def save_png(path, rgba: np.ndarray) -> None:
    if rgba.dtype != np.uint8 or rgba.ndim != 3 or rgba.shape[2] != 4:
        raise ValueError("expected an (H, W, 4) uint8 array")
    Image.fromarray(rgba, mode="RGBA").save(path, format="PNG")
