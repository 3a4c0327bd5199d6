"""Dataset model and image IO.

A dataset is a manifest of patients, each carrying sweep scans of
(image, mask) frame pairs and a split label. Images are 8- or 16-bit
grayscale PNG or binary PGM (P5); masks are 8-bit files where 0 is
background and any nonzero pixel is wound.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

SPLITS = ("train", "val", "test")

_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


# ---------------------------------------------------------------------------
# image IO


def load_frame(path) -> np.ndarray:
    """Load a grayscale image as float64 intensities in [0, 1].

    Values are scaled by the bit-depth maximum (255 or 65535).
    """
    raw, maxval = _load_gray(path)
    return raw.astype(np.float64) / float(maxval)


def save_frame(path, frame: np.ndarray, bit_depth: int = 8) -> None:
    """Quantize intensities in [0, 1] to the given bit depth and write."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 2 or frame.shape[0] < 1 or frame.shape[1] < 1:
        raise ValueError(f"frame must be a non-empty 2-D array, got shape {frame.shape}")
    if not np.isfinite(frame).all() or frame.min() < 0.0 or frame.max() > 1.0:
        raise ValueError("frame intensities must be finite and in [0, 1]")
    if bit_depth not in (8, 16):
        raise ValueError(f"bit_depth must be 8 or 16, got {bit_depth}")
    maxval = (1 << bit_depth) - 1
    raw = np.round(frame * maxval).astype(np.uint8 if bit_depth == 8 else np.uint16)
    _save_gray(path, raw, maxval)


def load_mask(path) -> np.ndarray:
    """Load a mask file; any nonzero pixel counts as wound."""
    raw, _ = _load_gray(path)
    return raw > 0


def save_mask(path, mask: np.ndarray) -> None:
    mask = np.asarray(mask)
    if mask.dtype != np.bool_:
        raise ValueError("mask must be boolean")
    _save_gray(path, np.where(mask, 255, 0).astype(np.uint8), 255)


def load_pair(image_path, mask_path):
    """Load a (frame, mask) pair, enforcing dimension agreement."""
    frame = load_frame(image_path)
    mask = load_mask(mask_path)
    if frame.shape != mask.shape:
        raise ValueError(
            f"frame {image_path} has shape {frame.shape} but mask {mask_path} "
            f"has shape {mask.shape}"
        )
    return frame, mask


def _load_gray(path):
    """Read an 8/16-bit grayscale PNG or P5 PGM as (uint array, maxval)."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such image: {path}")
    with open(path, "rb") as f:
        head = f.read(2)
    if head == b"P5":
        return _read_pgm(path)
    if head == _PNG_MAGIC[:2]:
        with Image.open(path) as im:
            if im.mode == "L":
                return np.asarray(im, dtype=np.uint8), 255
            if im.mode in ("I", "I;16"):
                arr = np.asarray(im).astype(np.uint16)
                return arr, 65535
            raise ValueError(
                f"{path}: unsupported PNG mode {im.mode!r} (grayscale required)"
            )
    raise ValueError(f"{path}: not a PNG or binary PGM file")


def _save_gray(path, raw: np.ndarray, maxval: int) -> None:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".pgm":
        _write_pgm(path, raw, maxval)
    elif suffix == ".png":
        if maxval == 255:
            Image.fromarray(raw, mode="L").save(path, format="PNG")
        else:
            Image.fromarray(raw.astype(np.uint16)).save(path, format="PNG")
    else:
        raise ValueError(f"{path}: unsupported extension (use .png or .pgm)")


def _read_pgm(path):
    with open(path, "rb") as f:
        data = f.read()
    tokens = []
    pos = 2  # past "P5"
    while len(tokens) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    width, height, maxval = (int(t) for t in tokens)
    if width < 1 or height < 1 or maxval < 1 or maxval > 65535:
        raise ValueError(f"{path}: bad PGM header {width}x{height} maxval {maxval}")
    if maxval < 256:
        arr = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=pos)
    else:
        arr = np.frombuffer(data, dtype=">u2", count=width * height, offset=pos)
        arr = arr.astype(np.uint16)
    if arr.size != width * height:
        raise ValueError(f"{path}: truncated PGM pixel data")
    return arr.reshape(height, width).copy(), maxval


def _write_pgm(path, raw: np.ndarray, maxval: int) -> None:
    header = f"P5\n{raw.shape[1]} {raw.shape[0]}\n{maxval}\n".encode("ascii")
    if maxval < 256:
        body = raw.astype(np.uint8).tobytes()
    else:
        body = raw.astype(">u2").tobytes()
    with open(path, "wb") as f:
        f.write(header + body)


# ---------------------------------------------------------------------------
# manifest model


@dataclass
class FrameRecord:
    image: str
    mask: str


@dataclass
class Scan:
    id: str
    frames: list = field(default_factory=list)


@dataclass
class Patient:
    id: str
    split: str
    scans: list = field(default_factory=list)


@dataclass
class Manifest:
    """Patient/scan/frame tree with per-patient split labels.

    Frame paths are stored relative to `root` (the manifest's directory)
    unless absolute.
    """

    patients: list = field(default_factory=list)
    root: Path = Path(".")

    def resolve(self, relpath: str) -> Path:
        p = Path(relpath)
        return p if p.is_absolute() else self.root / p

    def frames_for_split(self, split: str):
        """Return (frame_id, image path, mask path) triples for one split."""
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        out = []
        for patient in self.patients:
            if patient.split != split:
                continue
            for scan in patient.scans:
                for idx, frame in enumerate(scan.frames):
                    frame_id = f"{patient.id}/{scan.id}/{idx}"
                    out.append((frame_id, self.resolve(frame.image), self.resolve(frame.mask)))
        return out

    def scans_for_split(self, split: str):
        """Return (scan_id, [(frame_id, image path, mask path), ...]) per scan."""
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        out = []
        for patient in self.patients:
            if patient.split != split:
                continue
            for scan in patient.scans:
                scan_id = f"{patient.id}/{scan.id}"
                frames = [
                    (f"{scan_id}/{idx}", self.resolve(fr.image), self.resolve(fr.mask))
                    for idx, fr in enumerate(scan.frames)
                ]
                out.append((scan_id, frames))
        return out

    def to_dict(self) -> dict:
        return {
            "patients": [
                {
                    "id": p.id,
                    "split": p.split,
                    "scans": [
                        {
                            "id": s.id,
                            "frames": [{"image": f.image, "mask": f.mask} for f in s.frames],
                        }
                        for s in p.scans
                    ],
                }
                for p in self.patients
            ]
        }

    @classmethod
    def from_dict(cls, doc: dict, root=Path(".")) -> "Manifest":
        try:
            patients = [
                Patient(
                    id=str(p["id"]),
                    split=str(p["split"]),
                    scans=[
                        Scan(
                            id=str(s["id"]),
                            frames=[
                                FrameRecord(image=str(f["image"]), mask=str(f["mask"]))
                                for f in s["frames"]
                            ],
                        )
                        for s in p["scans"]
                    ],
                )
                for p in doc["patients"]
            ]
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed manifest: missing field {exc}") from exc
        return cls(patients=patients, root=Path(root))

    def save(self, path) -> None:
        path = Path(path)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")

    @classmethod
    def load(cls, path) -> "Manifest":
        path = Path(path)
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
        return cls.from_dict(doc, root=path.parent)


@dataclass
class ValidationReport:
    """Per-split counts plus pass/fail for the manifest contract."""

    counts: dict  # split -> {"patients": n, "scans": n, "frames": n}
    problems: list

    @property
    def ok(self) -> bool:
        return not self.problems

    def table(self) -> str:
        lines = [f"{'':<10}{'train':>8}{'val':>8}{'test':>8}"]
        for row in ("patients", "scans", "frames"):
            cells = "".join(f"{self.counts[s][row]:>8}" for s in SPLITS)
            lines.append(f"{row:<10}{cells}")
        lines.append("status: " + ("pass" if self.ok else "FAIL"))
        for problem in self.problems:
            lines.append(f"  - {problem}")
        return "\n".join(lines)


def validate_manifest(manifest: Manifest) -> ValidationReport:
    """Count patients/scans/frames per split and check the invariants:

    split labels are known, no patient appears twice (in particular not in
    two splits), every frame has a mask, and no image path is reused.
    """
    counts = {s: {"patients": 0, "scans": 0, "frames": 0} for s in SPLITS}
    problems = []
    seen_patients = {}
    seen_images = {}
    for patient in manifest.patients:
        if patient.split not in SPLITS:
            problems.append(f"patient {patient.id}: unknown split {patient.split!r}")
            continue
        if patient.id in seen_patients:
            other = seen_patients[patient.id]
            if other != patient.split:
                problems.append(
                    f"patient {patient.id} appears in two splits ({other} and {patient.split})"
                )
            else:
                problems.append(f"duplicate patient id {patient.id}")
        else:
            seen_patients[patient.id] = patient.split
        counts[patient.split]["patients"] += 1
        for scan in patient.scans:
            counts[patient.split]["scans"] += 1
            for idx, frame in enumerate(scan.frames):
                counts[patient.split]["frames"] += 1
                where = f"{patient.id}/{scan.id}/{idx}"
                if not frame.mask:
                    problems.append(f"frame {where} has no mask")
                if frame.image in seen_images:
                    problems.append(
                        f"duplicate frame path {frame.image} ({seen_images[frame.image]} and {where})"
                    )
                else:
                    seen_images[frame.image] = where
    return ValidationReport(counts=counts, problems=problems)


def partition_by_patient(manifest: Manifest, fractions, seed: int) -> Manifest:
    """Reassign split labels at patient level.

    Patients are shuffled with a seeded RNG and assigned greedily so the
    realized patient counts approach the target fractions. Deterministic
    per seed.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3:
        raise ValueError("fractions must be (train, val, test)")
    if any(f < 0 for f in fractions):
        raise ValueError(f"fractions must be non-negative, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got sum {sum(fractions)}")
    n_nonzero = sum(1 for f in fractions if f > 0)
    n_patients = len(manifest.patients)
    if n_patients < n_nonzero:
        raise ValueError(
            f"{n_patients} patient(s) cannot fill {n_nonzero} non-empty splits"
        )

    order = np.random.default_rng(seed).permutation(n_patients)
    assigned = {s: 0 for s in SPLITS}
    split_of = {}
    for patient_index in order:
        # largest remaining quota wins; ties resolve in train/val/test order
        deficits = [
            (fractions[k] * n_patients - assigned[s], -k)
            for k, s in enumerate(SPLITS)
        ]
        best = max(range(3), key=lambda k: deficits[k])
        split = SPLITS[best]
        assigned[split] += 1
        split_of[patient_index] = split

    patients = [
        Patient(id=p.id, split=split_of[i], scans=p.scans)
        for i, p in enumerate(manifest.patients)
    ]
    return Manifest(patients=patients, root=manifest.root)
