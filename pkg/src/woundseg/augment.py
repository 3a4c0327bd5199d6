"""Training-time augmentation applied jointly to a (frame, mask) pair,
plus input normalization.

Photometric transforms (brightness shift, additive Gaussian noise,
contrast about the frame mean) touch only the frame; geometric
transforms (rotation, left-right flip) are applied identically to
both. The mask is resampled nearest-neighbor so it stays strictly
binary.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass
class AugmentConfig:
    brightness_range: tuple = (-0.1, 0.1)
    noise_sigma_range: tuple = (0.0, 0.05)
    contrast_range: tuple = (0.8, 1.2)  # grayscale stand-in for saturation
    rotation_range: tuple = (-15.0, 15.0)
    flip_prob: float = 0.5
    enable_brightness: bool = True
    enable_noise: bool = True
    enable_contrast: bool = True
    enable_rotation: bool = True
    enable_flip: bool = True

    def __post_init__(self):
        for name in ("brightness_range", "noise_sigma_range", "contrast_range", "rotation_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} is not well-ordered: ({lo}, {hi})")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError(f"flip_prob must be in [0, 1], got {self.flip_prob}")

    @classmethod
    def disabled(cls) -> "AugmentConfig":
        return cls(
            enable_brightness=False,
            enable_noise=False,
            enable_contrast=False,
            enable_rotation=False,
            enable_flip=False,
        )


def rotate_pair(frame: np.ndarray, mask: np.ndarray, angle_deg: float):
    """Rotate about the image center: bilinear for the frame, nearest
    for the mask, out-of-bounds filled with 0."""
    frame_rot = ndimage.rotate(
        frame, angle_deg, reshape=False, order=1, mode="constant", cval=0.0, prefilter=False
    )
    mask_rot = ndimage.rotate(
        mask.astype(np.float64), angle_deg, reshape=False, order=0,
        mode="constant", cval=0.0, prefilter=False,
    )
    return frame_rot, mask_rot > 0.5


def flip_pair(frame: np.ndarray, mask: np.ndarray):
    return np.fliplr(frame).copy(), np.fliplr(mask).copy()


def augment_pair(frame: np.ndarray, mask: np.ndarray, config: AugmentConfig, seed: int):
    """Apply the configured randomized transforms; deterministic per seed.
    Returns a new (frame, mask) with intensities clamped to [0, 1]."""
    frame = np.asarray(frame, dtype=np.float64)
    mask = np.asarray(mask)
    if mask.dtype != np.bool_:
        raise ValueError("mask must be boolean")
    if frame.shape != mask.shape:
        raise ValueError(f"frame shape {frame.shape} does not match mask {mask.shape}")

    rng = np.random.default_rng(seed)
    out = frame.copy()
    if config.enable_brightness:
        out = out + rng.uniform(*config.brightness_range)
    if config.enable_noise:
        sigma = rng.uniform(*config.noise_sigma_range)
        out = out + rng.normal(0.0, sigma, size=out.shape)
    if config.enable_contrast:
        factor = rng.uniform(*config.contrast_range)
        mean = out.mean()
        out = mean + factor * (out - mean)
    if config.enable_rotation:
        angle = rng.uniform(*config.rotation_range)
        out, mask = rotate_pair(out, mask, angle)
    else:
        mask = mask.copy()
    if config.enable_flip and rng.random() < config.flip_prob:
        out, mask = flip_pair(out, mask)
    return np.clip(out, 0.0, 1.0), mask


# ---------------------------------------------------------------------------
# normalization


def normalize(frame: np.ndarray, mode: str, mean: float = None, std: float = None) -> np.ndarray:
    """Turn one [0, 1] frame into the (C, H, W) float32 network input.

    dataset_stats: single channel (x - mean) / std with statistics of
    the training split. imagenet_3ch: intensity replicated to three
    channels, each normalized with the standard ImageNet statistics.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if mode == "dataset_stats":
        if mean is None or std is None:
            raise ValueError("dataset_stats normalization needs mean and std")
        if std == 0:
            raise ValueError("normalization std is 0")
        return ((frame - mean) / std)[None].astype(np.float32)
    if mode == "imagenet_3ch":
        channels = [
            (frame - IMAGENET_MEAN[c]) / IMAGENET_STD[c] for c in range(3)
        ]
        return np.stack(channels).astype(np.float32)
    raise ValueError(f"unknown normalization mode {mode!r}")


def dataset_stats(frames) -> tuple:
    """Pooled pixel mean and population std over an iterable of frames."""
    total = 0.0
    total_sq = 0.0
    count = 0
    for frame in frames:
        arr = np.asarray(frame, dtype=np.float64)
        total += arr.sum()
        total_sq += (arr**2).sum()
        count += arr.size
    if count == 0:
        raise ValueError("no frames")
    mean = total / count
    var = max(total_sq / count - mean**2, 0.0)
    return float(mean), float(np.sqrt(var))
