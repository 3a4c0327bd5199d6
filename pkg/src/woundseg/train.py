"""Adam training loop with step-decayed learning rate, early stopping
on validation Dice, and checkpointing of the best epoch."""

from dataclasses import dataclass, field

import numpy as np

from . import augment as aug
from . import autodiff as ad
from . import data as datamod
from . import metrics as metricsmod
from . import unet as unetmod
from .util import derive_seed, write_csv


@dataclass
class TrainConfig:
    lr0: float = 1e-3
    gamma: float = 0.1
    step_size: int = 10
    batch_size: int = 3
    max_epochs: int = 40
    patience: int = 10
    min_delta: float = 1e-3  # required val-Dice improvement
    input_size: int = 96
    loss: str = "bce"  # or "dice"
    normalize: str = "dataset_stats"  # or "imagenet_3ch"
    threshold: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValueError(f"lr0 must be > 0, got {self.lr0}")
        if not 0 < self.gamma <= 1:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.step_size < 1:
            raise ValueError(f"step_size must be >= 1, got {self.step_size}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.loss not in ("bce", "dice"):
            raise ValueError(f"loss must be 'bce' or 'dice', got {self.loss!r}")


def lr_at_epoch(config: TrainConfig, epoch: int) -> float:
    """Step decay: lr0 * gamma^floor(epoch / step_size)."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return config.lr0 * config.gamma ** (epoch // config.step_size)


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params: dict) -> AdamState:
    state = AdamState()
    for name, p in params.items():
        state.m[name] = np.zeros_like(p.data)
        state.v[name] = np.zeros_like(p.data)
    return state


def adam_step(params: dict, grads: dict, state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, in place.

    A non-finite gradient aborts the step before anything mutates.
    """
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter {p.data.shape}")
        if not np.isfinite(g).all():
            raise ad.NonFiniteError(f"non-finite gradient for {name}; step aborted")
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for name, p in params.items():
        g = grads[name].astype(p.data.dtype, copy=False)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_dice: float
    lr: float


@dataclass
class TrainResult:
    params: dict  # best-epoch parameters
    history: list
    best_epoch: int  # -1 when no epoch ran
    best_val_dice: float
    norm_stats: dict  # normalization used for every forward pass


def _load_split(manifest: datamod.Manifest, split: str, input_size: int):
    samples = []
    for frame_id, image_path, mask_path in manifest.frames_for_split(split):
        frame, mask = datamod.load_pair(image_path, mask_path)
        if frame.shape != (input_size, input_size):
            raise ValueError(
                f"frame {frame_id} is {frame.shape[1]}x{frame.shape[0]}, "
                f"expected {input_size}x{input_size}"
            )
        samples.append((frame_id, frame, mask))
    return samples


def _normalizer(config: TrainConfig, train_frames):
    if config.normalize == "dataset_stats":
        mean, std = aug.dataset_stats(train_frames)
        if std == 0:
            raise ValueError("training split has zero intensity variance")
        stats = {"mode": "dataset_stats", "mean": mean, "std": std}
    else:
        stats = {"mode": "imagenet_3ch"}
    return normalizer_from_stats(stats), stats


def normalizer_from_stats(stats: dict):
    mode = stats["mode"]
    if mode == "dataset_stats":
        mean, std = stats["mean"], stats["std"]
        return lambda frame: aug.normalize(frame, "dataset_stats", mean=mean, std=std)
    return lambda frame: aug.normalize(frame, mode)


def _compute_loss(config: TrainConfig, logits: ad.Tensor, targets: ad.Tensor) -> ad.Tensor:
    if config.loss == "bce":
        return ad.bce_with_logits(logits, targets)
    return ad.dice_loss(ad.sigmoid(logits), targets)


def mean_val_dice(model_config, params, samples, normalize_fn, threshold: float) -> float:
    dices = []
    for _, frame, mask in samples:
        pred = unetmod.predict_mask(model_config, params, normalize_fn(frame), threshold)
        dices.append(metricsmod.dice_of_masks(pred, mask))
    return float(np.mean(dices))


def train(
    model_config: unetmod.UNetConfig,
    params: dict,
    manifest: datamod.Manifest,
    config: TrainConfig,
    augment_config: aug.AugmentConfig,
) -> TrainResult:
    """Optimize `params` in place and return the best checkpoint.

    Per epoch: seeded shuffle, batches of `batch_size` (incomplete final
    batch kept), per-sample augmentation, Adam step at the scheduled
    learning rate, then mean validation Dice. Stops early when the best
    val Dice has not improved by more than `min_delta` for `patience`
    epochs. Single-threaded and bit-reproducible per seed.
    """
    train_samples = _load_split(manifest, "train", config.input_size)
    val_samples = _load_split(manifest, "val", config.input_size)
    if not train_samples:
        raise ValueError("train split is empty")
    if not val_samples:
        raise ValueError("val split is empty")

    normalize_fn, norm_stats = _normalizer(config, (s[1] for s in train_samples))
    state = adam_init(params)
    shuffle_rng = np.random.default_rng(derive_seed(config.seed, "shuffle"))

    best_params = {name: p.data.copy() for name, p in params.items()}
    best_epoch = -1
    best_val = float("-inf")
    stop_reference = float("-inf")
    epochs_without_improvement = 0
    history = []

    for epoch in range(config.max_epochs):
        lr = lr_at_epoch(config, epoch)
        order = shuffle_rng.permutation(len(train_samples))
        aug_base = derive_seed(config.seed, f"augment-epoch-{epoch}")

        losses = []
        weights = []
        for start in range(0, len(order), config.batch_size):
            batch_idx = order[start : start + config.batch_size]
            inputs = []
            targets = []
            for idx in batch_idx:
                _, frame, mask = train_samples[idx]
                frame_a, mask_a = aug.augment_pair(
                    frame, mask, augment_config, seed=aug_base ^ int(idx)
                )
                inputs.append(normalize_fn(frame_a))
                targets.append(mask_a[None].astype(np.float32))
            batch = ad.Tensor(np.stack(inputs))
            target = ad.Tensor(np.stack(targets))

            logits = unetmod.forward(model_config, params, batch)
            loss = _compute_loss(config, logits, target)
            for p in params.values():
                p.zero_grad()
            ad.backward(loss)
            grads = {name: p.grad for name, p in params.items()}
            adam_step(params, grads, state, lr)

            losses.append(float(loss.data))
            weights.append(len(batch_idx))

        train_loss = float(np.average(losses, weights=weights))
        val_dice = mean_val_dice(model_config, params, val_samples, normalize_fn, config.threshold)
        history.append(EpochRecord(epoch=epoch, train_loss=train_loss, val_dice=val_dice, lr=lr))

        if val_dice > best_val:
            best_val = val_dice
            best_epoch = epoch
            best_params = {name: p.data.copy() for name, p in params.items()}
        if val_dice > stop_reference + config.min_delta:
            stop_reference = val_dice
            epochs_without_improvement = 0
        else:
            epochs_without_improvement += 1
            if epochs_without_improvement >= config.patience:
                break

    result_params = {
        name: ad.Tensor(values, requires_grad=True) for name, values in best_params.items()
    }
    return TrainResult(
        params=result_params,
        history=history,
        best_epoch=best_epoch,
        best_val_dice=best_val if best_epoch >= 0 else float("nan"),
        norm_stats=norm_stats,
    )


def write_history(path, history) -> None:
    write_csv(
        path,
        ["epoch", "train_loss", "val_dice", "lr"],
        [[h.epoch, repr(h.train_loss), repr(h.val_dice), repr(h.lr)] for h in history],
    )
