import numpy as np
import pytest

from woundseg import augment
from woundseg.phantom import PhantomSpec, WoundSpec, generate_phantom


def sample_pair(size=64, seed=0):
    spec = PhantomSpec(
        width=size, height=size,
        wound=WoundSpec(center=(size / 2, size / 2 - 4), axes=(size / 4, size / 6)),
        speckle_sigma=0.2,
    )
    s = generate_phantom(spec, seed=seed)
    return s.frame, s.mask


def test_disabled_config_is_identity():
    frame, mask = sample_pair()
    out_frame, out_mask = augment.augment_pair(frame, mask, augment.AugmentConfig.disabled(), seed=3)
    assert np.array_equal(out_frame, frame)
    assert np.array_equal(out_mask, mask)


def test_flip_is_involution():
    frame, mask = sample_pair()
    once = augment.flip_pair(frame, mask)
    twice = augment.flip_pair(*once)
    assert np.array_equal(twice[0], frame)
    assert np.array_equal(twice[1], mask)


def test_rotation_180_maps_corner_pixel():
    frame = np.zeros((5, 5))
    frame[1, 1] = 1.0
    mask = np.zeros((5, 5), dtype=bool)
    mask[1, 1] = True
    rot_frame, rot_mask = augment.rotate_pair(frame, mask, 180.0)
    assert rot_frame[3, 3] == pytest.approx(1.0)
    assert rot_frame.sum() == pytest.approx(1.0)
    assert rot_mask[3, 3] and rot_mask.sum() == 1


def test_deterministic_per_seed():
    frame, mask = sample_pair()
    config = augment.AugmentConfig()
    a = augment.augment_pair(frame, mask, config, seed=7)
    b = augment.augment_pair(frame, mask, config, seed=7)
    c = augment.augment_pair(frame, mask, config, seed=8)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    assert not np.array_equal(a[0], c[0])


def test_mask_stays_binary_and_frame_in_range():
    frame, mask = sample_pair()
    config = augment.AugmentConfig()
    for seed in range(20):
        out_frame, out_mask = augment.augment_pair(frame, mask, config, seed=seed)
        assert out_mask.dtype == np.bool_
        assert out_frame.min() >= 0.0 and out_frame.max() <= 1.0


def test_photometric_transforms_never_touch_mask():
    frame, mask = sample_pair()
    config = augment.AugmentConfig(enable_rotation=False, enable_flip=False)
    for seed in range(10):
        _, out_mask = augment.augment_pair(frame, mask, config, seed=seed)
        assert np.array_equal(out_mask, mask)


def test_rotation_area_change_small_for_large_masks():
    frame, mask = sample_pair(size=96)
    assert mask.sum() >= 500
    for angle in (-15.0, -7.3, 4.1, 15.0):
        _, rotated = augment.rotate_pair(frame, mask, angle)
        change = abs(int(rotated.sum()) - int(mask.sum())) / mask.sum()
        assert change < 0.10


def test_geometric_transforms_apply_to_both():
    frame, mask = sample_pair()
    config = augment.AugmentConfig(
        enable_brightness=False, enable_noise=False, enable_contrast=False,
        flip_prob=1.0, enable_rotation=False,
    )
    out_frame, out_mask = augment.augment_pair(frame, mask, config, seed=0)
    assert np.array_equal(out_frame, np.fliplr(frame))
    assert np.array_equal(out_mask, np.fliplr(mask))


def test_augment_rejects_mismatched_pair():
    with pytest.raises(ValueError, match="match"):
        augment.augment_pair(
            np.zeros((4, 4)), np.zeros((4, 5), dtype=bool), augment.AugmentConfig(), seed=0
        )


def test_config_validation():
    with pytest.raises(ValueError, match="well-ordered"):
        augment.AugmentConfig(brightness_range=(0.2, -0.2))
    with pytest.raises(ValueError, match="flip_prob"):
        augment.AugmentConfig(flip_prob=1.5)


# ---------------------------------------------------------------------------
# normalization


def test_normalize_dataset_stats_centering():
    frame = np.full((4, 4), 0.5)
    out = augment.normalize(frame, "dataset_stats", mean=0.5, std=0.25)
    assert out.shape == (1, 4, 4)
    assert out.dtype == np.float32
    assert np.all(out == 0.0)


def test_normalize_dataset_stats_scaling():
    frame = np.full((2, 2), 1.0)
    out = augment.normalize(frame, "dataset_stats", mean=0.5, std=0.25)
    assert np.all(out == 2.0)


def test_normalize_imagenet_first_channel_zero():
    frame = np.full((3, 3), 0.485)
    out = augment.normalize(frame, "imagenet_3ch")
    assert out.shape == (3, 3, 3)
    assert np.abs(out[0]).max() < 1e-6
    expected_c1 = (0.485 - 0.456) / 0.224
    assert out[1, 0, 0] == pytest.approx(expected_c1, rel=1e-5)


def test_normalize_zero_std_rejected():
    with pytest.raises(ValueError, match="std"):
        augment.normalize(np.zeros((2, 2)), "dataset_stats", mean=0.0, std=0.0)


def test_normalize_unknown_mode():
    with pytest.raises(ValueError, match="mode"):
        augment.normalize(np.zeros((2, 2)), "zscore")


def test_dataset_stats_pooled():
    frames = [np.zeros((2, 2)), np.ones((2, 2))]
    mean, std = augment.dataset_stats(frames)
    assert mean == pytest.approx(0.5)
    assert std == pytest.approx(0.5)
