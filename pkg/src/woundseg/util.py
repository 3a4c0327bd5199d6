"""Small shared helpers: seed fan-out and CSV writing."""

import csv
import hashlib

import numpy as np


def derive_seed(base_seed: int, label: str) -> int:
    """Deterministically derive a per-stage seed from a global seed.

    Hash-based so that stages can be added or reordered without shifting
    the streams of the others.
    """
    digest = hashlib.blake2s(f"{base_seed}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def rng_for(base_seed: int, label: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(base_seed, label))


def clamp01(values: np.ndarray) -> np.ndarray:
    return np.clip(values, 0.0, 1.0)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)
