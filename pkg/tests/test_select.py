import itertools

import numpy as np
import pytest

from woundseg import select


def random_frames(rng, n, size=48):
    return [rng.random((size, size)) for _ in range(n)]


def brute_force_best_pair(points):
    """Maximize min pairwise distance over all k=2 subsets."""
    best = None
    best_d = -1.0
    for i, j in itertools.combinations(range(len(points)), 2):
        d = abs(points[i] - points[j])
        if d > best_d:
            best_d = d
            best = {i, j}
    return best, best_d


def test_identical_frames_identical_embeddings_and_flag():
    frame = np.random.default_rng(0).random((32, 32))
    result = select.embed_frames([frame, frame.copy()])
    assert result.degenerate
    vectors = result.matrix()
    assert np.array_equal(vectors[0], vectors[1])
    assert np.all(vectors == 0)


def test_embeddings_invariant_to_constant_offset():
    rng = np.random.default_rng(1)
    frames = random_frames(rng, 6)
    shifted = [np.clip(f * 0.5, 0, 1) + 0.25 for f in frames]
    base = [np.clip(f * 0.5, 0, 1) for f in frames]
    emb_a = select.embed_frames(base).matrix()
    emb_b = select.embed_frames(shifted).matrix()
    # PCA component signs are arbitrary; the thumbnail resize runs in
    # float32, so allow that much rounding
    for col in range(emb_a.shape[1]):
        a, b = emb_a[:, col], emb_b[:, col]
        assert np.allclose(a, b, atol=1e-4) or np.allclose(a, -b, atol=1e-4)


def test_reconstruction_error_improves_with_dimension():
    rng = np.random.default_rng(2)
    frames = random_frames(rng, 12)
    thumbs = np.stack([select._thumbnail(f) for f in frames])
    centered = thumbs - thumbs.mean(axis=0)

    def reconstruction_error(d):
        emb = select.embed_frames(frames, dim=d).matrix()[:, :d]
        _, _, vt = np.linalg.svd(centered, full_matrices=False)
        recon = emb @ vt[:d]
        return float(((centered - recon) ** 2).sum())

    errors = [reconstruction_error(d) for d in (1, 2, 4, 8)]
    assert all(a >= b - 1e-9 for a, b in zip(errors, errors[1:]))


def test_embed_requires_two_frames():
    with pytest.raises(ValueError, match="2 frames"):
        select.embed_frames([np.zeros((16, 16))])


def test_k_center_one_dimensional_example():
    chosen = select.k_center_select(np.array([0.0, 1.0, 10.0]), k=2)
    assert set(chosen) == {2, 0}  # the values 10 and 0
    brute, _ = brute_force_best_pair([0.0, 1.0, 10.0])
    assert set(chosen) == brute


def test_k_center_k_equals_n_returns_all():
    points = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 0.0]])
    assert sorted(select.k_center_select(points, 3)) == [0, 1, 2]


def test_k_center_rejects_bad_k():
    points = np.zeros((3, 2))
    with pytest.raises(ValueError):
        select.k_center_select(points, 4)
    with pytest.raises(ValueError):
        select.k_center_select(points, 0)


def test_k_center_duplicates_picks_distinct_coordinates():
    points = np.array([0.0, 0.0, 5.0, 5.0, 5.0])
    chosen = select.k_center_select(points, 2)
    assert points[chosen[0]] != points[chosen[1]]


def test_k_center_deterministic():
    rng = np.random.default_rng(3)
    points = rng.normal(size=(40, 5))
    assert select.k_center_select(points, 7) == select.k_center_select(points.copy(), 7)


def test_k_center_beats_random_subsets_on_average():
    rng = np.random.default_rng(4)
    points = rng.normal(size=(60, 4))

    def min_pairwise(idx):
        pts = points[list(idx)]
        return min(
            np.linalg.norm(a - b) for a, b in itertools.combinations(pts, 2)
        )

    k = 8
    greedy = min_pairwise(select.k_center_select(points, k))
    random_scores = [
        min_pairwise(rng.choice(60, size=k, replace=False)) for _ in range(20)
    ]
    assert greedy >= np.mean(random_scores)


def test_selection_pipeline_on_frames():
    rng = np.random.default_rng(5)
    frames = random_frames(rng, 10, size=40)
    result = select.embed_frames(frames, frame_ids=[f"p0/s0/{i}" for i in range(10)])
    assert not result.degenerate
    chosen = select.k_center_select(result, 4)
    assert len(set(chosen)) == 4
    ids = [result.embeddings[i].frame_id for i in chosen]
    assert all(fid.startswith("p0/s0/") for fid in ids)
