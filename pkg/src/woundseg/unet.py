"""Four-level encoder-decoder segmentation network with LeakyReLU
activations, assembled from the autodiff ops.

Encoder level i runs two 3x3 convs at base*2^i channels followed by 2x2
max pooling (the deepest level is the bottleneck and is not pooled);
the decoder mirrors it with nearest-neighbor upsampling + 3x3 conv,
skip concatenation and two 3x3 convs. A final 1x1 conv produces one
logit channel at the input resolution.
"""

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad


@dataclass
class UNetConfig:
    levels: int = 4
    base_channels: int = 8
    leaky_slope: float = 0.01
    in_channels: int = 1
    out_channels: int = 1

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError(f"levels must be >= 1, got {self.levels}")
        if self.base_channels < 1:
            raise ValueError(f"base_channels must be >= 1, got {self.base_channels}")

    @property
    def size_divisor(self) -> int:
        return 2 ** (self.levels - 1)


def parameter_shapes(config: UNetConfig) -> dict:
    """Named weight/bias shapes for every conv, in build order."""
    shapes = {}

    def conv(name, cout, cin, k):
        shapes[f"{name}.weight"] = (cout, cin, k, k)
        shapes[f"{name}.bias"] = (cout,)

    cin = config.in_channels
    for i in range(config.levels):
        cout = config.base_channels * 2**i
        conv(f"enc{i}.conv1", cout, cin, 3)
        conv(f"enc{i}.conv2", cout, cout, 3)
        cin = cout
    for i in reversed(range(config.levels - 1)):
        cskip = config.base_channels * 2**i
        conv(f"dec{i}.up", cskip, cin, 3)
        conv(f"dec{i}.conv1", cskip, 2 * cskip, 3)
        conv(f"dec{i}.conv2", cskip, cskip, 3)
        cin = cskip
    conv("head", config.out_channels, cin, 1)
    return shapes


def build(config: UNetConfig, seed: int, dtype=np.float32) -> dict:
    """He-initialized parameters: kernels ~ N(0, 2/fan_in), biases 0.
    Deterministic per seed."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith(".weight"):
            fan_in = int(np.prod(shape[1:]))
            values = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
        else:
            values = np.zeros(shape)
        params[name] = ad.Tensor(values.astype(dtype), requires_grad=True)
    return params


def n_parameters(params: dict) -> int:
    return sum(int(p.data.size) for p in params.values())


def forward(config: UNetConfig, params: dict, batch: ad.Tensor) -> ad.Tensor:
    """Logits with the same spatial size as the input batch (N, C, H, W).
    H and W must be divisible by 2^(levels-1)."""
    n, c, h, w = batch.data.shape
    if c != config.in_channels:
        raise ValueError(f"expected {config.in_channels} input channels, got {c}")
    d = config.size_divisor
    if h % d or w % d:
        raise ValueError(f"input size {h}x{w} not divisible by {d}")

    def conv_block(x, name):
        x = ad.conv2d(x, params[f"{name}.weight"], params[f"{name}.bias"])
        return ad.leaky_relu(x, config.leaky_slope)

    x = batch
    skips = []
    for i in range(config.levels):
        x = conv_block(x, f"enc{i}.conv1")
        x = conv_block(x, f"enc{i}.conv2")
        if i < config.levels - 1:
            skips.append(x)
            x = ad.max_pool2(x)
    for i in reversed(range(config.levels - 1)):
        x = ad.upsample2(x)
        x = conv_block(x, f"dec{i}.up")
        x = ad.concat(x, skips[i])
        x = conv_block(x, f"dec{i}.conv1")
        x = conv_block(x, f"dec{i}.conv2")
    return ad.conv2d(x, params["head.weight"], params["head.bias"])


def predict_logits(config: UNetConfig, params: dict, inputs: np.ndarray) -> np.ndarray:
    """Forward a (N, C, H, W) array without building gradient state."""
    logits = forward(config, params, ad.Tensor(inputs))
    return logits.data


def predict_mask(config: UNetConfig, params: dict, inputs: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Binary wound mask: sigmoid(logit) >= threshold.

    `inputs` is one normalized (C, H, W) frame; returns (H, W) bool.
    """
    logits = predict_logits(config, params, inputs[None])
    return ad.stable_sigmoid(logits[0, 0]) >= threshold


# ---------------------------------------------------------------------------
# checkpoint + sidecar


def save_model(path, params: dict, config: UNetConfig, normalize: dict) -> None:
    """Binary checkpoint plus a JSON sidecar holding the network config
    and the normalization used in training."""
    path = Path(path)
    ad.save_checkpoint(path, params)
    sidecar = {"config": asdict(config), "normalize": normalize}
    with open(path.with_suffix(path.suffix + ".json"), "w", encoding="utf-8") as f:
        json.dump(sidecar, f, indent=2, sort_keys=True)
        f.write("\n")


def load_model(path):
    """Returns (params as Tensors, UNetConfig, normalize dict)."""
    path = Path(path)
    arrays = ad.load_checkpoint(path)
    sidecar_path = path.with_suffix(path.suffix + ".json")
    if not sidecar_path.is_file():
        raise FileNotFoundError(f"missing checkpoint sidecar: {sidecar_path}")
    with open(sidecar_path, "r", encoding="utf-8") as f:
        sidecar = json.load(f)
    config = UNetConfig(**sidecar["config"])
    expected = parameter_shapes(config)
    if set(expected) != set(arrays):
        raise ValueError(f"{path}: checkpoint parameters do not match the config")
    params = {name: ad.Tensor(arrays[name], requires_grad=True) for name in expected}
    return params, config, sidecar["normalize"]
