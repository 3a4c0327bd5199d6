"""Shared test helpers."""

import numpy as np

from woundseg import autodiff as ad


def numerical_gradient(make_loss, tensor, h=1e-6):
    """Central finite differences d(loss)/d(tensor), element by element.
    Independent of the engine's backward pass."""
    num = np.zeros_like(tensor.data)
    flat = tensor.data.ravel()
    out = num.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        plus = float(make_loss().data)
        flat[i] = orig - h
        minus = float(make_loss().data)
        flat[i] = orig
        out[i] = (plus - minus) / (2.0 * h)
    return num


def gradient_rel_error(make_loss, tensors):
    """Worst relative error between backward() and finite differences."""
    loss = make_loss()
    for t in tensors:
        t.zero_grad()
    ad.backward(loss)
    worst = 0.0
    for t in tensors:
        analytic = t.grad.copy()
        numeric = numerical_gradient(make_loss, t)
        denom = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-8)
        worst = max(worst, float(np.abs(analytic - numeric).max() / denom))
    return worst


def weighted_sum(op_output, weights):
    """Scalarize a tensor with fixed weights so FD can probe it."""
    return ad.tensor_sum(ad.mul(op_output, weights))
