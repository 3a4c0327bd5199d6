"""Synthetic B-mode wound phantoms with exact ground-truth masks.

A phantom stacks horizontal tissue layers, carves a hypoechoic wound
(ellipse with low-order sinusoidal boundary perturbation, dark center
ramping up towards the rim, optionally a bright margin just outside),
optionally adds a hyperechoic bone line with an acoustic shadow under
it, and multiplies the result with unit-mean Rayleigh speckle that is
blurred once to give it spatial correlation.
"""

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from . import data
from .util import clamp01, derive_seed, rng_for

# speckle draws come from a Rayleigh with E[s] = 1
_RAYLEIGH_UNIT_MEAN_SCALE = math.sqrt(2.0 / math.pi)


@dataclass
class WoundSpec:
    center: tuple  # (cx, cy) pixels
    axes: tuple  # (a, b) semi-axes, pixels
    boundary_amp: float = 0.08  # radius modulation, fraction of radius
    center_darkening: float = 0.45  # intensity factor at the wound center
    rim_brightening: float = 1.0  # factor at the wound boundary (inside)
    halo_brightening: float = 1.15  # factor just outside the boundary
    halo_margin: float = 0.4  # width of the bright margin, in normalized radius


@dataclass
class BoneSpec:
    depth_row: int
    brightness: float = 0.95
    shadow_attenuation: float = 0.45
    thickness: int = 3


@dataclass
class PhantomSpec:
    width: int
    height: int
    wound: WoundSpec | None = None
    bone: BoneSpec | None = None
    speckle_sigma: float = 0.3
    # (top fraction, bottom fraction, base intensity) per layer
    background_layers: tuple = (
        (0.0, 0.25, 0.68),
        (0.25, 0.6, 0.58),
        (0.6, 1.0, 0.5),
    )

    def validate(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"bad phantom size {self.width}x{self.height}")
        if self.speckle_sigma < 0:
            raise ValueError("speckle_sigma must be >= 0")
        if self.wound is not None:
            cx, cy = self.wound.center
            a, b = self.wound.axes
            if a <= 0 or b <= 0:
                raise ValueError(f"wound semi-axes must be positive, got {(a, b)}")
            reach = 1.0 + self.wound.boundary_amp
            if (
                cx - a * reach < 0
                or cx + a * reach > self.width - 1
                or cy - b * reach < 0
                or cy + b * reach > self.height - 1
            ):
                raise ValueError("wound ellipse (incl. boundary perturbation) exceeds image bounds")
        if self.bone is not None and not (0 <= self.bone.depth_row < self.height):
            raise ValueError(f"bone depth_row {self.bone.depth_row} outside image")


@dataclass
class PhantomSample:
    frame: np.ndarray
    mask: np.ndarray
    spec: PhantomSpec
    seed: int


def generate_phantom(spec: PhantomSpec, seed: int) -> PhantomSample:
    """Render one phantom frame and its exact wound mask.

    Bit-identical for identical (spec, seed).
    """
    spec.validate()
    rng = np.random.default_rng(derive_seed(seed, "phantom"))
    h, w = spec.height, spec.width

    img = np.full((h, w), 0.5, dtype=np.float64)
    for top, bottom, intensity in spec.background_layers:
        r0 = int(round(top * h))
        r1 = int(round(bottom * h))
        img[r0:r1] = intensity

    mask = np.zeros((h, w), dtype=bool)
    if spec.wound is not None:
        mask, factor = _wound_field(spec.wound, h, w, rng)
        img *= factor

    if spec.bone is not None:
        bone = spec.bone
        top = bone.depth_row
        bottom = min(h, top + bone.thickness)
        img[top:bottom] = bone.brightness
        img[bottom:] *= bone.shadow_attenuation

    if spec.speckle_sigma > 0:
        raw = rng.rayleigh(scale=_RAYLEIGH_UNIT_MEAN_SCALE, size=(h, w))
        correlated = gaussian_filter(raw, sigma=1.0, mode="reflect")
        speckle = 1.0 + spec.speckle_sigma * (correlated - 1.0)
        img *= np.maximum(speckle, 0.0)

    return PhantomSample(frame=clamp01(img), mask=mask, spec=spec, seed=seed)


def _wound_field(wound: WoundSpec, h: int, w: int, rng):
    """Boolean support and multiplicative intensity factor of the wound."""
    cx, cy = wound.center
    a, b = wound.axes
    ys, xs = np.mgrid[0:h, 0:w]
    dx = (xs - cx) / a
    dy = (ys - cy) / b
    radius = np.hypot(dx, dy)
    theta = np.arctan2(dy, dx)

    # low-order harmonics keep the boundary smooth but non-elliptical
    boundary = np.ones_like(radius)
    if wound.boundary_amp > 0:
        harmonics = (3, 4, 5)
        weights = rng.uniform(0.3, 1.0, size=len(harmonics))
        weights *= wound.boundary_amp / weights.sum()
        phases = rng.uniform(0.0, 2.0 * math.pi, size=len(harmonics))
        for k, amp_k, phase in zip(harmonics, weights, phases):
            boundary += amp_k * np.cos(k * theta + phase)

    rel = radius / boundary
    mask = rel <= 1.0

    factor = np.ones_like(radius)
    inside = mask
    factor[inside] = wound.center_darkening + (
        wound.rim_brightening - wound.center_darkening
    ) * rel[inside]
    if wound.halo_margin > 0:
        margin = (~mask) & (rel <= 1.0 + wound.halo_margin)
        factor[margin] = wound.halo_brightening + (1.0 - wound.halo_brightening) * (
            (rel[margin] - 1.0) / wound.halo_margin
        )
    return mask, factor


# ---------------------------------------------------------------------------
# dataset synthesis


@dataclass
class DatasetSpec:
    """Template + jitter ranges for a multi-patient phantom dataset.

    Wound geometry is drawn once per patient, then jittered per frame to
    mimic the correlation of consecutive sweep frames.
    """

    width: int = 96
    height: int = 96
    n_patients: int = 20
    scans_per_patient: int = 2
    frames_per_scan: int = 5
    axis_a: tuple = (10.0, 18.0)
    axis_b: tuple = (7.0, 13.0)
    center_darkening: tuple = (0.35, 0.5)
    rim_brightening: tuple = (1.0, 1.1)
    halo_brightening: tuple = (1.1, 1.25)
    boundary_amp: tuple = (0.03, 0.1)
    halo_margin: float = 0.4
    bone_prob: float = 0.3
    speckle_sigma: float = 0.25
    frame_center_jitter: float = 1.5  # std of per-frame center drift, px
    frame_axis_jitter: float = 0.04  # relative std of per-frame axis change
    split_fractions: tuple = (0.6, 0.2, 0.2)
    background_layers: tuple = PhantomSpec.background_layers


def generate_dataset(spec: DatasetSpec, out_dir, seed: int) -> data.Manifest:
    """Write a phantom dataset (images, masks, manifest.json) under
    `out_dir` and return the manifest with patient-level splits."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)

    patients = []
    for p in range(spec.n_patients):
        pid = f"p{p:03d}"
        rng = rng_for(seed, f"patient-{p}")
        base = _draw_patient_geometry(spec, rng)
        scans = []
        for s in range(spec.scans_per_patient):
            sid = f"s{s}"
            frames = []
            for k in range(spec.frames_per_scan):
                wound = _jitter_wound(spec, base, rng)
                phantom_spec = PhantomSpec(
                    width=spec.width,
                    height=spec.height,
                    wound=wound,
                    bone=base["bone"],
                    speckle_sigma=spec.speckle_sigma,
                    background_layers=spec.background_layers,
                )
                # seed from the jittered geometry: identical geometry
                # (jitter 0) reproduces the identical frame
                frame_seed = _geometry_seed(seed, p, wound)
                sample = generate_phantom(phantom_spec, frame_seed)
                image_rel = f"images/{pid}_{sid}_{k:03d}.png"
                mask_rel = f"masks/{pid}_{sid}_{k:03d}.png"
                data.save_frame(out_dir / image_rel, sample.frame, bit_depth=8)
                data.save_mask(out_dir / mask_rel, sample.mask)
                frames.append(data.FrameRecord(image=image_rel, mask=mask_rel))
            scans.append(data.Scan(id=sid, frames=frames))
        patients.append(data.Patient(id=pid, split="train", scans=scans))

    manifest = data.Manifest(patients=patients, root=out_dir)
    manifest = data.partition_by_patient(
        manifest, spec.split_fractions, derive_seed(seed, "split")
    )
    manifest.save(out_dir / "manifest.json")
    return manifest


def _draw_patient_geometry(spec: DatasetSpec, rng) -> dict:
    a = rng.uniform(*spec.axis_a)
    b = rng.uniform(*spec.axis_b)
    amp = rng.uniform(*spec.boundary_amp)
    margin_x = a * (1.0 + amp) + 2.0
    margin_y = b * (1.0 + amp) + 2.0
    if margin_x >= spec.width - 1 - margin_x or margin_y >= (spec.height - 1) * 0.6:
        raise ValueError(
            f"phantom size {spec.width}x{spec.height} too small for wound axes "
            f"a in {spec.axis_a}, b in {spec.axis_b}"
        )
    cx = rng.uniform(margin_x, spec.width - 1 - margin_x)
    cy = rng.uniform(margin_y, max(margin_y + 1.0, (spec.height - 1) * 0.6))
    bone = None
    if rng.random() < spec.bone_prob:
        # hyperechoic line strictly below the wound, shadow beneath it
        wound_bottom = int(cy + b * (1.0 + amp)) + 4
        if wound_bottom < spec.height - 8:
            bone = BoneSpec(
                depth_row=int(rng.integers(wound_bottom, spec.height - 6)),
                brightness=rng.uniform(0.85, 0.98),
                shadow_attenuation=rng.uniform(0.35, 0.55),
            )
    return {
        "center": (cx, cy),
        "axes": (a, b),
        "boundary_amp": amp,
        "center_darkening": rng.uniform(*spec.center_darkening),
        "rim_brightening": rng.uniform(*spec.rim_brightening),
        "halo_brightening": rng.uniform(*spec.halo_brightening),
        "bone": bone,
    }


def _jitter_wound(spec: DatasetSpec, base: dict, rng) -> WoundSpec:
    cx, cy = base["center"]
    a, b = base["axes"]
    if spec.frame_center_jitter > 0:
        cx += rng.normal(0.0, spec.frame_center_jitter)
        cy += rng.normal(0.0, spec.frame_center_jitter)
    if spec.frame_axis_jitter > 0:
        a *= 1.0 + rng.normal(0.0, spec.frame_axis_jitter)
        b *= 1.0 + rng.normal(0.0, spec.frame_axis_jitter)
    amp = base["boundary_amp"]
    reach_x = a * (1.0 + amp)
    reach_y = b * (1.0 + amp)
    cx = float(np.clip(cx, reach_x, spec.width - 1 - reach_x))
    cy = float(np.clip(cy, reach_y, spec.height - 1 - reach_y))
    return WoundSpec(
        center=(cx, cy),
        axes=(float(a), float(b)),
        boundary_amp=amp,
        center_darkening=base["center_darkening"],
        rim_brightening=base["rim_brightening"],
        halo_brightening=base["halo_brightening"],
        halo_margin=spec.halo_margin,
    )


def _geometry_seed(base_seed: int, patient_index: int, wound: WoundSpec | None) -> int:
    if wound is None:
        packed = b"none"
    else:
        packed = struct.pack(
            "<8d",
            wound.center[0],
            wound.center[1],
            wound.axes[0],
            wound.axes[1],
            wound.boundary_amp,
            wound.center_darkening,
            wound.rim_brightening,
            wound.halo_brightening,
        )
    return derive_seed(base_seed, f"frame-{patient_index}-{packed.hex()}")
