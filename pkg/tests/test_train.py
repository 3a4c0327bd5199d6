import numpy as np
import pytest

from woundseg import augment
from woundseg import autodiff as ad
from woundseg import data, phantom
from woundseg import train as tr
from woundseg import unet


def make_training_manifest(tmp_path, n_train=2, n_val=1, size=32, seed=0):
    """Tiny on-disk phantom dataset, one frame per patient."""
    patients = []
    for i in range(n_train + n_val):
        split = "train" if i < n_train else "val"
        spec = phantom.PhantomSpec(
            width=size, height=size,
            wound=phantom.WoundSpec(
                center=(size / 2 + (i % 3) - 1, size / 2 - 2),
                axes=(size / 4, size / 6),
            ),
            speckle_sigma=0.2,
        )
        sample = phantom.generate_phantom(spec, seed=seed + i)
        image_rel = f"images/p{i}.png"
        mask_rel = f"masks/p{i}.png"
        (tmp_path / "images").mkdir(exist_ok=True)
        (tmp_path / "masks").mkdir(exist_ok=True)
        data.save_frame(tmp_path / image_rel, sample.frame)
        data.save_mask(tmp_path / mask_rel, sample.mask)
        patients.append(
            data.Patient(
                id=f"p{i}", split=split,
                scans=[data.Scan(id="s0", frames=[data.FrameRecord(image=image_rel, mask=mask_rel)])],
            )
        )
    return data.Manifest(patients=patients, root=tmp_path)


# ---------------------------------------------------------------------------
# learning-rate schedule


def test_lr_schedule_reference_values():
    config = tr.TrainConfig()
    assert tr.lr_at_epoch(config, 0) == 1e-3
    assert tr.lr_at_epoch(config, 10) == pytest.approx(1e-4)
    assert tr.lr_at_epoch(config, 25) == pytest.approx(1e-5)


def test_lr_schedule_closed_form_everywhere():
    config = tr.TrainConfig(lr0=0.02, gamma=0.5, step_size=3)
    for epoch in range(30):
        assert tr.lr_at_epoch(config, epoch) == 0.02 * 0.5 ** (epoch // 3)


def test_lr_schedule_rejects_negative_epoch():
    with pytest.raises(ValueError):
        tr.lr_at_epoch(tr.TrainConfig(), -1)


def test_train_config_validation():
    with pytest.raises(ValueError):
        tr.TrainConfig(lr0=0.0)
    with pytest.raises(ValueError):
        tr.TrainConfig(gamma=1.5)
    with pytest.raises(ValueError):
        tr.TrainConfig(loss="focal")


# ---------------------------------------------------------------------------
# Adam


def scalar_params(value):
    return {"w": ad.Tensor(np.array([value], dtype=np.float64), requires_grad=True)}


def test_adam_zero_gradient_leaves_params():
    params = scalar_params(1.5)
    state = tr.adam_init(params)
    tr.adam_step(params, {"w": np.zeros(1)}, state, lr=1e-3)
    assert params["w"].data[0] == 1.5
    assert state.t == 1


def test_adam_first_step_closed_form():
    params = scalar_params(1.0)
    state = tr.adam_init(params)
    tr.adam_step(params, {"w": np.ones(1)}, state, lr=1e-3)
    # m_hat = g, v_hat = g^2: theta = 1 - lr * 1/(1 + eps)
    expected = 1.0 - 1e-3 * 1.0 / (1.0 + state.eps)
    assert params["w"].data[0] == pytest.approx(expected, abs=1e-12)


def test_adam_repeated_steps_monotone():
    params = scalar_params(1.0)
    state = tr.adam_init(params)
    values = [params["w"].data[0]]
    for _ in range(5):
        tr.adam_step(params, {"w": np.ones(1)}, state, lr=1e-3)
        values.append(params["w"].data[0])
    assert all(a > b for a, b in zip(values, values[1:]))


def test_adam_rejects_non_finite_gradient():
    params = scalar_params(1.0)
    state = tr.adam_init(params)
    before = params["w"].data.copy()
    with pytest.raises(ad.NonFiniteError):
        tr.adam_step(params, {"w": np.array([np.nan])}, state, lr=1e-3)
    assert params["w"].data[0] == before[0]  # aborted before mutation
    assert state.t == 0


def test_adam_rejects_shape_mismatch():
    params = scalar_params(1.0)
    state = tr.adam_init(params)
    with pytest.raises(ValueError):
        tr.adam_step(params, {"w": np.ones(2)}, state, lr=1e-3)


# ---------------------------------------------------------------------------
# training loop


def small_model():
    return unet.UNetConfig(levels=4, base_channels=2)


def test_train_zero_epochs_returns_initial_params(tmp_path):
    manifest = make_training_manifest(tmp_path)
    config = small_model()
    params = unet.build(config, seed=1)
    initial = {n: p.data.copy() for n, p in params.items()}
    result = tr.train(config, params, manifest, tr.TrainConfig(max_epochs=0, input_size=32),
                      augment.AugmentConfig.disabled())
    assert result.history == []
    assert result.best_epoch == -1
    assert all(np.array_equal(result.params[n].data, initial[n]) for n in initial)


def test_train_requires_non_empty_splits(tmp_path):
    manifest = make_training_manifest(tmp_path, n_train=2, n_val=1)
    for p in manifest.patients:
        if p.split == "val":
            p.split = "test"
    config = small_model()
    params = unet.build(config, seed=1)
    with pytest.raises(ValueError, match="val split"):
        tr.train(config, params, manifest, tr.TrainConfig(max_epochs=1, input_size=32),
                 augment.AugmentConfig.disabled())


def test_train_history_matches_schedule_and_best_bookkeeping(tmp_path):
    manifest = make_training_manifest(tmp_path, n_train=3, n_val=2)
    config = small_model()
    params = unet.build(config, seed=2)
    train_config = tr.TrainConfig(max_epochs=6, input_size=32, batch_size=2, seed=5)
    result = tr.train(config, params, manifest, train_config, augment.AugmentConfig.disabled())
    assert len(result.history) == 6
    for record in result.history:
        assert record.lr == tr.lr_at_epoch(train_config, record.epoch)
    best = max(h.val_dice for h in result.history)
    assert result.best_val_dice >= best - 1e-9


def test_train_deterministic_history(tmp_path):
    manifest = make_training_manifest(tmp_path, n_train=3, n_val=1)
    config = small_model()

    def run():
        params = unet.build(config, seed=3)
        return tr.train(
            config, params, manifest,
            tr.TrainConfig(max_epochs=3, input_size=32, seed=9),
            augment.AugmentConfig(),
        )

    a = run()
    b = run()
    assert [(h.train_loss, h.val_dice, h.lr) for h in a.history] == [
        (h.train_loss, h.val_dice, h.lr) for h in b.history
    ]
    assert all(np.array_equal(a.params[n].data, b.params[n].data) for n in a.params)


def test_early_stopping_waits_for_patience(tmp_path):
    manifest = make_training_manifest(tmp_path, n_train=2, n_val=1)
    config = small_model()
    params = unet.build(config, seed=4)
    # an absurd min_delta means no epoch ever counts as improving after
    # the first, so training must stop after exactly 1 + patience epochs
    train_config = tr.TrainConfig(
        max_epochs=30, patience=3, min_delta=10.0, input_size=32, seed=1
    )
    result = tr.train(config, params, manifest, train_config, augment.AugmentConfig.disabled())
    assert len(result.history) == 1 + 3


def test_single_sample_overfit(tmp_path):
    manifest = make_training_manifest(tmp_path, n_train=1, n_val=1, size=32, seed=20)
    # the val patient mirrors the train frame so best_val tracks train dice
    val = manifest.patients[1]
    train_p = manifest.patients[0]
    val.scans = train_p.scans
    config = unet.UNetConfig(levels=4, base_channels=8)
    params = unet.build(config, seed=0)
    train_config = tr.TrainConfig(
        max_epochs=200, step_size=200, patience=200, input_size=32, seed=0
    )
    result = tr.train(config, params, manifest, train_config, augment.AugmentConfig.disabled())
    assert result.best_val_dice >= 0.95


def test_write_history_format(tmp_path):
    history = [tr.EpochRecord(epoch=0, train_loss=0.5, val_dice=0.25, lr=1e-3)]
    path = tmp_path / "history.csv"
    tr.write_history(path, history)
    text = path.read_text()
    assert text.splitlines()[0] == "epoch,train_loss,val_dice,lr"
    assert text.splitlines()[1] == "0,0.5,0.25,0.001"
