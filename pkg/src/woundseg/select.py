"""Diversity-driven frame selection to de-correlate sweep data.

Frames are embedded by PCA over 32x32 thumbnails and a subset is picked
with greedy farthest-point (k-center) selection. Deterministic: ties
break to the lowest frame index.
"""

from dataclasses import dataclass

import numpy as np
from PIL import Image

THUMBNAIL_SIZE = 32
DEFAULT_DIM = 16


@dataclass
class FrameEmbedding:
    frame_id: str
    vector: np.ndarray


@dataclass
class EmbeddingResult:
    embeddings: list
    degenerate: bool  # all frames identical; every embedding is zero

    def matrix(self) -> np.ndarray:
        return np.stack([e.vector for e in self.embeddings])


def _thumbnail(frame: np.ndarray) -> np.ndarray:
    im = Image.fromarray(np.asarray(frame, dtype=np.float32), mode="F")
    small = im.resize((THUMBNAIL_SIZE, THUMBNAIL_SIZE), Image.BILINEAR)
    return np.asarray(small, dtype=np.float64).ravel()


def embed_frames(frames, frame_ids=None, dim: int = DEFAULT_DIM) -> EmbeddingResult:
    """Project thumbnail vectors onto the top-`dim` principal components
    of the frame set (vectors are zero-padded when fewer components
    exist). A zero-variance set yields all-zero embeddings, flagged."""
    frames = list(frames)
    if len(frames) < 2:
        raise ValueError(f"need at least 2 frames, got {len(frames)}")
    if frame_ids is None:
        frame_ids = [str(i) for i in range(len(frames))]
    x = np.stack([_thumbnail(f) for f in frames])
    centered = x - x.mean(axis=0)

    vectors = np.zeros((len(frames), dim))
    degenerate = not np.any(np.abs(centered) > 1e-12)
    if not degenerate:
        _, singular, vt = np.linalg.svd(centered, full_matrices=False)
        keep = min(dim, int(np.count_nonzero(singular > 1e-12 * singular[0])))
        vectors[:, :keep] = centered @ vt[:keep].T
    embeddings = [
        FrameEmbedding(frame_id=fid, vector=vec) for fid, vec in zip(frame_ids, vectors)
    ]
    return EmbeddingResult(embeddings=embeddings, degenerate=degenerate)


def k_center_select(embeddings, k: int) -> list:
    """Greedy farthest-point selection of k indices.

    Starts from the point farthest from the centroid, then repeatedly
    adds the point with the largest distance to the selected set.
    """
    if isinstance(embeddings, EmbeddingResult):
        points = embeddings.matrix()
    elif isinstance(embeddings, (list, tuple)) and embeddings and isinstance(embeddings[0], FrameEmbedding):
        points = np.stack([e.vector for e in embeddings])
    else:
        points = np.asarray(embeddings, dtype=np.float64)
        if points.ndim == 1:
            points = points[:, None]
    n = points.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")

    centroid = points.mean(axis=0)
    start = int(np.argmax(np.linalg.norm(points - centroid, axis=1)))
    selected = [start]
    min_dist = np.linalg.norm(points - points[start], axis=1)
    while len(selected) < k:
        nxt = int(np.argmax(min_dist))  # argmax takes the lowest index on ties
        selected.append(nxt)
        min_dist = np.minimum(min_dist, np.linalg.norm(points - points[nxt], axis=1))
    return selected
