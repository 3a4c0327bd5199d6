"""Minimal reverse-mode differentiation engine.

Carries exactly the operations the segmentation network and its losses
need: 2-D convolution ("same" zero padding, stride 1), 2x2 max pooling,
nearest-neighbor 2x upsampling, LeakyReLU/ReLU/sigmoid, channel concat,
elementwise add/mul, sum, and the two losses. Values are float32 by
default; build graphs from float64 arrays for verification-grade
gradient checks.

Every operation validates that its output is finite; NaN or Inf raises
NonFiniteError instead of propagating silently.
"""

import struct

import numpy as np

_FLOAT_DTYPES = (np.float32, np.float64)


class NonFiniteError(RuntimeError):
    """An operation produced NaN or Inf values."""


class Tensor:
    """N-d value array (up to 4 dims) participating in a gradient graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        if arr.ndim > 4:
            raise ValueError(f"tensors support at most 4 dims, got {arr.ndim}")
        _check_finite(arr)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def sum(self):
        return tensor_sum(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def _check_finite(arr):
    if not np.isfinite(arr).all():
        raise NonFiniteError("operation produced non-finite values")


def _result(data, parents, backward_fn):
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _accumulate(tensor: Tensor, grad):
    if tensor.grad is None:
        tensor.grad = np.zeros_like(tensor.data)
    tensor.grad += grad


def backward(root: Tensor) -> None:
    """Reverse topological sweep from a scalar root; grads accumulate
    additively into every reachable tensor with requires_grad."""
    if root.data.size != 1:
        raise ValueError(f"backward requires a scalar root, got shape {root.data.shape}")
    topo = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    root.grad = np.ones_like(root.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# elementwise and reduction ops


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"add shape mismatch: {a.data.shape} vs {b.data.shape}")
    data = a.data + b.data

    def bw(grad):
        if a.requires_grad:
            _accumulate(a, grad)
        if b.requires_grad:
            _accumulate(b, grad)

    return _result(data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"mul shape mismatch: {a.data.shape} vs {b.data.shape}")
    data = a.data * b.data

    def bw(grad):
        if a.requires_grad:
            _accumulate(a, grad * b.data)
        if b.requires_grad:
            _accumulate(b, grad * a.data)

    return _result(data, (a, b), bw)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    data = a.data * s

    def bw(grad):
        if a.requires_grad:
            _accumulate(a, grad * s)

    return _result(data, (a,), bw)


def tensor_sum(a: Tensor) -> Tensor:
    data = a.data.sum(dtype=a.data.dtype).reshape(())

    def bw(grad):
        if a.requires_grad:
            _accumulate(a, np.full_like(a.data, grad))

    return _result(data, (a,), bw)


# ---------------------------------------------------------------------------
# activations


def leaky_relu(a: Tensor, slope: float = 0.01) -> Tensor:
    if slope < 0:
        raise ValueError(f"slope must be >= 0, got {slope}")
    pos = a.data >= 0  # derivative defined as 1 at x == 0
    data = np.where(pos, a.data, a.data * a.data.dtype.type(slope))

    def bw(grad):
        if a.requires_grad:
            _accumulate(a, grad * np.where(pos, a.data.dtype.type(1), a.data.dtype.type(slope)))

    return _result(data, (a,), bw)


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0)

    def bw(grad):
        if a.requires_grad:
            _accumulate(a, grad * (a.data > 0))

    return _result(data, (a,), bw)


def sigmoid(a: Tensor) -> Tensor:
    data = stable_sigmoid(a.data)

    def bw(grad):
        if a.requires_grad:
            _accumulate(a, grad * data * (1 - data))

    return _result(data, (a,), bw)


def stable_sigmoid(x: np.ndarray) -> np.ndarray:
    """Overflow-free logistic on a plain array."""
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# structure ops


def concat(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the channel axis of (N, C, H, W) tensors."""
    if a.data.ndim != 4 or b.data.ndim != 4:
        raise ValueError("concat expects 4-d (N, C, H, W) tensors")
    if a.data.shape[0] != b.data.shape[0] or a.data.shape[2:] != b.data.shape[2:]:
        raise ValueError(f"concat shape mismatch: {a.data.shape} vs {b.data.shape}")
    ca = a.data.shape[1]
    data = np.concatenate([a.data, b.data], axis=1)

    def bw(grad):
        if a.requires_grad:
            _accumulate(a, grad[:, :ca])
        if b.requires_grad:
            _accumulate(b, grad[:, ca:])

    return _result(data, (a, b), bw)


def max_pool2(a: Tensor) -> Tensor:
    """2x2 max pooling, stride 2. Gradient flows to the argmax of each
    block; ties break to the lowest linear index (row-major)."""
    n, c, h, w = _shape4(a, "max_pool2")
    if h % 2 or w % 2:
        raise ValueError(f"max_pool2 requires even H and W, got {h}x{w}")
    blocks = (
        a.data.reshape(n, c, h // 2, 2, w // 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, h // 2, w // 2, 4)
    )
    argmax = blocks.argmax(axis=-1)
    data = np.take_along_axis(blocks, argmax[..., None], axis=-1)[..., 0]

    def bw(grad):
        if a.requires_grad:
            scatter = np.zeros_like(blocks)
            np.put_along_axis(scatter, argmax[..., None], grad[..., None], axis=-1)
            ga = (
                scatter.reshape(n, c, h // 2, w // 2, 2, 2)
                .transpose(0, 1, 2, 4, 3, 5)
                .reshape(n, c, h, w)
            )
            _accumulate(a, ga)

    return _result(data, (a,), bw)


def upsample2(a: Tensor) -> Tensor:
    """Nearest-neighbor 2x upsampling; gradient sums over each 2x2 block."""
    n, c, h, w = _shape4(a, "upsample2")
    data = np.repeat(np.repeat(a.data, 2, axis=2), 2, axis=3)

    def bw(grad):
        if a.requires_grad:
            _accumulate(a, grad.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)))

    return _result(data, (a,), bw)


def _shape4(a: Tensor, op: str):
    if a.data.ndim != 4:
        raise ValueError(f"{op} expects a 4-d (N, C, H, W) tensor, got shape {a.data.shape}")
    return a.data.shape


# ---------------------------------------------------------------------------
# convolution


def conv2d(x: Tensor, kernel: Tensor, bias=None, stride: int = 1, padding: str = "same") -> Tensor:
    """Cross-correlation of (N, Cin, H, W) with (Cout, Cin, k, k) kernels,
    zero "same" padding so spatial dims are preserved."""
    if stride != 1:
        raise ValueError("only stride 1 is supported")
    if padding != "same":
        raise ValueError("only 'same' padding is supported")
    n, cin, h, w = _shape4(x, "conv2d")
    if kernel.data.ndim != 4:
        raise ValueError(f"kernel must be 4-d (Cout, Cin, k, k), got shape {kernel.data.shape}")
    cout, cin_k, kh, kw = kernel.data.shape
    if kh != kw:
        raise ValueError(f"kernel must be square, got {kh}x{kw}")
    if kh % 2 == 0:
        raise ValueError(f"'same' padding requires odd kernel size, got {kh}")
    if cin_k != cin:
        raise ValueError(f"channel mismatch: input has {cin}, kernel expects {cin_k}")
    if bias is not None and bias.data.shape != (cout,):
        raise ValueError(f"bias must have shape ({cout},), got {bias.data.shape}")

    # channels-last internally: the patch gather is far cheaper when the
    # channel axis is contiguous
    cols = _im2col(x.data, kh)  # (N*H*W, k*k*Cin)
    k_flat = np.ascontiguousarray(kernel.data.transpose(2, 3, 1, 0).reshape(kh * kh * cin, cout))
    out = cols @ k_flat
    if bias is not None:
        out = out + bias.data
    data = np.ascontiguousarray(out.reshape(n, h, w, cout).transpose(0, 3, 1, 2))

    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def bw(grad):
        grad_mat = grad.transpose(0, 2, 3, 1).reshape(n * h * w, cout)
        if kernel.requires_grad:
            gk = (cols.T @ grad_mat).reshape(kh, kh, cin, cout).transpose(3, 2, 0, 1)
            _accumulate(kernel, np.ascontiguousarray(gk))
        if bias is not None and bias.requires_grad:
            _accumulate(bias, grad.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            # correlate upstream grad with the flipped, channel-swapped kernel
            k_t = kernel.data[:, :, ::-1, ::-1].transpose(2, 3, 0, 1).reshape(kh * kh * cout, cin)
            gcols = _im2col(grad, kh)  # (N*H*W, k*k*Cout)
            gx = gcols @ np.ascontiguousarray(k_t)
            _accumulate(x, np.ascontiguousarray(gx.reshape(n, h, w, cin).transpose(0, 3, 1, 2)))

    return _result(data, parents, bw)


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """Unfold (N, C, H, W) into (N*H*W, k*k*C) patch rows, zero-padded so
    each pixel owns one kxk patch centered on it."""
    n, c, h, w = x.shape
    p = k // 2
    # pad in channels-last layout; np.pad materializes the transpose
    xp = np.pad(x.transpose(0, 2, 3, 1), ((0, 0), (p, p), (p, p), (0, 0)))
    s = xp.strides
    windows = np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, h, w, k, k, c),
        strides=(s[0], s[1], s[2], s[1], s[2], s[3]),
        writeable=False,
    )
    return windows.reshape(n * h * w, k * k * c)


# ---------------------------------------------------------------------------
# losses


def _check_targets(targets: np.ndarray):
    if not np.all((targets == 0) | (targets == 1)):
        raise ValueError("targets must contain only 0 and 1")


def bce_with_logits(logits: Tensor, targets: Tensor) -> Tensor:
    """Softplus-stabilized binary cross-entropy, mean over all pixels:
    max(z, 0) - z*t + log(1 + exp(-|z|))."""
    if logits.data.shape != targets.data.shape:
        raise ValueError(f"shape mismatch: {logits.data.shape} vs {targets.data.shape}")
    _check_targets(targets.data)
    z = logits.data
    t = targets.data
    per_pixel = np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))
    data = per_pixel.mean(dtype=z.dtype).reshape(())

    def bw(grad):
        if logits.requires_grad:
            _accumulate(logits, grad * (stable_sigmoid(z) - t) / z.size)

    return _result(data, (logits,), bw)


def dice_loss(probs: Tensor, targets: Tensor, eps: float = 1.0) -> Tensor:
    """Soft Dice loss 1 - (2*sum(p*t) + eps) / (sum(p) + sum(t) + eps),
    pooled over the whole tensor."""
    if probs.data.shape != targets.data.shape:
        raise ValueError(f"shape mismatch: {probs.data.shape} vs {targets.data.shape}")
    _check_targets(targets.data)
    p = probs.data
    t = targets.data
    num = 2.0 * float((p * t).sum()) + eps
    den = float(p.sum()) + float(t.sum()) + eps
    data = np.asarray(1.0 - num / den, dtype=p.dtype).reshape(())

    def bw(grad):
        if probs.requires_grad:
            _accumulate(probs, grad * ((num - 2.0 * t * den) / den**2).astype(p.dtype))

    return _result(data, (probs,), bw)


# ---------------------------------------------------------------------------
# parameter checkpoint format

_MAGIC = b"WSG1"
_VERSION = 1
_DTYPE_CODES = {0: np.float32, 1: np.float64}


def save_checkpoint(path, params: dict) -> None:
    """Write named arrays as a flat binary checkpoint (little-endian),
    sorted by name for byte-stable output."""
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<II", _VERSION, len(params)))
        for name in sorted(params):
            arr = params[name]
            if isinstance(arr, Tensor):
                arr = arr.data
            arr = np.ascontiguousarray(arr)
            if arr.dtype == np.float32:
                code = 0
            elif arr.dtype == np.float64:
                code = 1
            else:
                raise ValueError(f"{name}: unsupported dtype {arr.dtype}")
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<BB", code, arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.astype(arr.dtype.newbyteorder("<")).tobytes())


def load_checkpoint(path) -> dict:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != _MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 12
    params = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos : pos + name_len].decode("utf-8")
        pos += name_len
        code, rank = struct.unpack_from("<BB", blob, pos)
        pos += 2
        dims = struct.unpack_from(f"<{rank}I", blob, pos)
        pos += 4 * rank
        dtype = np.dtype(_DTYPE_CODES[code]).newbyteorder("<")
        n_bytes = int(np.prod(dims)) * dtype.itemsize
        arr = np.frombuffer(blob, dtype=dtype, count=int(np.prod(dims)), offset=pos)
        pos += n_bytes
        params[name] = arr.reshape(dims).astype(_DTYPE_CODES[code])
    return params
