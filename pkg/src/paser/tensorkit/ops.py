"""The fixed set of differentiable operations used by paser's networks.

Flop convention (recorded into the active ``FlopLedger``):

* conv2d: ``2 * Kh * Kw * Cin * Cout * Hout * Wout`` per sample. Each output needs
  ``Kh*Kw*Cin`` multiplies and ``Kh*Kw*Cin - 1`` adds, so the bias add makes the count exact.
* dense: ``2 * in * out`` per sample, bias included the same way.
* pooling and upsampling: one flop per output element.
* every other op: one flop per element of its (first) input.
* concat moves memory only and records nothing; inactive dropout records nothing.
"""

from collections.abc import Sequence
from typing import Literal

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError
from .rng import RngStream
from .tensor import Tensor, make_result, record_flops

PROB_FLOOR = 1e-8

Reduction = Literal["mean", "sum", "none"]


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(
            f"'{op}' requires equal shapes, got {a.shape} and {b.shape}",
            expected=a.shape,
            actual=b.shape,
        )


def add(a: Tensor, b: Tensor | float) -> Tensor:
    if isinstance(b, Tensor):
        _same_shape(a, b, "add")
        rhs = b

        def backward(g: np.ndarray) -> None:
            a.accumulate(g)
            rhs.accumulate(g)

        record_flops("add", a.size)
        return make_result(a.data + b.data, (a, b), backward, "add")

    record_flops("add", a.size)
    return make_result(a.data + b, (a,), a.accumulate, "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")

    def backward(g: np.ndarray) -> None:
        a.accumulate(g * b.data)
        b.accumulate(g * a.data)

    record_flops("mul", a.size)
    return make_result(a.data * b.data, (a, b), backward, "mul")


def scale(a: Tensor, factor: float) -> Tensor:
    def backward(g: np.ndarray) -> None:
        a.accumulate(g * factor)

    record_flops("scale", a.size)
    return make_result(a.data * factor, (a,), backward, "scale")


def power(a: Tensor, exponent: float) -> Tensor:
    def backward(g: np.ndarray) -> None:
        a.accumulate(g * exponent * a.data ** (exponent - 1))

    record_flops("power", a.size)
    return make_result(a.data**exponent, (a,), backward, "power")


def sum_all(a: Tensor) -> Tensor:
    def backward(g: np.ndarray) -> None:
        a.accumulate(np.full(a.shape, g, dtype=a.dtype))

    record_flops("sum", a.size)
    return make_result(np.asarray(a.data.sum(), dtype=a.dtype), (a,), backward, "sum")


def mean_all(a: Tensor) -> Tensor:
    count = a.size

    def backward(g: np.ndarray) -> None:
        a.accumulate(np.full(a.shape, g / count, dtype=a.dtype))

    record_flops("mean", a.size)
    return make_result(np.asarray(a.data.mean(), dtype=a.dtype), (a,), backward, "mean")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g: np.ndarray) -> None:
        x.accumulate(g * mask)

    record_flops("relu", x.size)
    return make_result(np.where(mask, x.data, 0).astype(x.dtype), (x,), backward, "relu")


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """2-D cross-correlation over an ``N x Cin x H x W`` batch."""
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ShapeError(
            f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}"
        )
    n, cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape
    if wcin != cin:
        raise ShapeError(
            f"conv2d weight expects {wcin} input channels, got {cin}",
            expected=wcin,
            actual=cin,
        )
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d bias must have shape ({cout},), got {bias.shape}")

    pad = ((0, 0), (0, 0), (padding, padding), (padding, padding))
    padded = np.pad(x.data, pad) if padding else x.data
    hout = (padded.shape[2] - kh) // stride + 1
    wout = (padded.shape[3] - kw) // stride + 1
    if hout <= 0 or wout <= 0:
        raise ShapeError(f"conv2d kernel {kh}x{kw} does not fit input {h}x{w}")

    windows = sliding_window_view(padded, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride][:, :, :hout, :wout]
    out = np.tensordot(windows, weight.data, axes=([1, 4, 5], [1, 2, 3]))
    out = out.transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out, dtype=x.dtype)

    def backward(g: np.ndarray) -> None:
        weight.accumulate(np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3])))
        if bias is not None:
            bias.accumulate(g.sum(axis=(0, 2, 3)))
        if not x.requires_grad:
            return
        cols = np.tensordot(g, weight.data, axes=([1], [0]))
        grad_padded = np.zeros_like(padded)
        for i in range(kh):
            for j in range(kw):
                grad_padded[
                    :, :, i : i + stride * hout : stride, j : j + stride * wout : stride
                ] += cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        x.accumulate(grad_padded[:, :, padding : padding + h, padding : padding + w])

    record_flops("conv2d", 2 * kh * kw * cin * cout * hout * wout * n)
    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, backward, "conv2d")


def dense(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map of an ``N x in`` batch with an ``in x out`` weight."""
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeError(f"dense cannot apply weight {weight.shape} to input {x.shape}")
    out = x.data @ weight.data
    if bias is not None:
        if bias.shape != (weight.shape[1],):
            raise ShapeError(f"dense bias must have shape ({weight.shape[1]},)")
        out = out + bias.data

    def backward(g: np.ndarray) -> None:
        weight.accumulate(x.data.T @ g)
        if bias is not None:
            bias.accumulate(g.sum(axis=0))
        x.accumulate(g @ weight.data.T)

    record_flops("dense", 2 * weight.shape[0] * weight.shape[1] * x.shape[0])
    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out.astype(x.dtype), parents, backward, "dense")


def max_pool2x2(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"max_pool2x2 needs even spatial dims, got {h}x{w}")
    blocks = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(n, c, h // 2, w // 2, 4)
    winner = blocks.argmax(axis=-1)[..., None]
    out = np.take_along_axis(blocks, winner, axis=-1)[..., 0]

    def backward(g: np.ndarray) -> None:
        grad_blocks = np.zeros_like(blocks)
        np.put_along_axis(grad_blocks, winner, g[..., None], axis=-1)
        grad = grad_blocks.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        x.accumulate(grad.reshape(n, c, h, w))

    record_flops("max_pool2x2", out.size)
    return make_result(np.ascontiguousarray(out), (x,), backward, "max_pool2x2")


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling of the two spatial axes."""
    n, c, h, w = x.shape
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def backward(g: np.ndarray) -> None:
        x.accumulate(g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)))

    record_flops("upsample2x", out.size)
    return make_result(out, (x,), backward, "upsample2x")


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    reference = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != len(reference) or any(
            a != b for i, (a, b) in enumerate(zip(reference, other, strict=True)) if i != axis
        ):
            raise ShapeError(f"concat shapes differ off axis {axis}: {reference} vs {other}")
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g: np.ndarray) -> None:
        for t, piece in zip(tensors, np.split(g, bounds, axis=axis), strict=True):
            t.accumulate(piece)

    out = np.concatenate([t.data for t in tensors], axis=axis)
    return make_result(out, tuple(tensors), backward, "concat")


def dropout(
    x: Tensor,
    rate: float,
    rng: RngStream | None,
    active: bool,
    mask: np.ndarray | None = None,
) -> Tensor:
    """Inverted dropout: surviving activations are scaled by ``1 / (1 - rate)``."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"Dropout rate must be in [0, 1), got {rate}")
    if not active or rate == 0.0:
        return x
    if mask is None:
        if rng is None:
            raise ValueError("Active dropout requires an RngStream")
        mask = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    keep = mask.astype(x.dtype)

    def backward(g: np.ndarray) -> None:
        x.accumulate(g * keep)

    record_flops("dropout", x.size)
    return make_result(x.data * keep, (x,), backward, "dropout")


def softmax(x: Tensor, axis: int = 1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=axis, keepdims=True)

    def backward(g: np.ndarray) -> None:
        x.accumulate(probs * (g - (g * probs).sum(axis=axis, keepdims=True)))

    record_flops("softmax", x.size)
    return make_result(probs.astype(x.dtype), (x,), backward, "softmax")


def softmax_array(logits: np.ndarray, axis: int = 1) -> np.ndarray:
    """Numerically stable softmax on a plain array (no graph)."""
    shifted = logits - logits.max(axis=axis, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=axis, keepdims=True)


def cross_entropy(
    logits: Tensor,
    targets: np.ndarray,
    reduction: Reduction = "mean",
) -> Tensor:
    """Negative log-likelihood of integer ``targets`` under ``softmax(logits, axis=1)``.

    Probabilities are clamped to at least ``PROB_FLOOR`` before the log, so the loss is
    finite for any finite logits.
    """
    targets = np.asarray(targets)
    if (
        logits.data.ndim < 2
        or targets.shape[0] != logits.shape[0]
        or targets.shape[1:] != logits.shape[2:]
    ):
        raise ShapeError(
            f"cross_entropy targets {targets.shape} do not match logits {logits.shape}"
        )
    num_classes = logits.shape[1]
    if targets.size and (targets.min() < 0 or targets.max() >= num_classes):
        raise ValueError(f"cross_entropy targets must lie in [0, {num_classes})")
    index = targets.astype(np.intp)[:, None]

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    picked = np.take_along_axis(log_probs, index, axis=1)[:, 0]
    floor = np.log(PROB_FLOOR)
    live = picked >= floor
    nll = -np.maximum(picked, floor)

    if reduction == "mean":
        out = np.asarray(nll.mean(), dtype=logits.dtype)
    elif reduction == "sum":
        out = np.asarray(nll.sum(), dtype=logits.dtype)
    else:
        out = nll.astype(logits.dtype)

    def backward(g: np.ndarray) -> None:
        grad = np.exp(log_probs)
        np.put_along_axis(grad, index, np.take_along_axis(grad, index, axis=1) - 1, axis=1)
        upstream = g / nll.size if reduction == "mean" else g
        weight = np.broadcast_to(upstream, nll.shape) * live
        logits.accumulate(grad * weight[:, None])

    record_flops("cross_entropy", logits.size)
    return make_result(out, (logits,), backward, "cross_entropy")


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean of squared elementwise differences."""
    _same_shape(a, b, "mse")
    diff = a.data - b.data

    def backward(g: np.ndarray) -> None:
        grad = g * 2.0 * diff / diff.size
        a.accumulate(grad)
        b.accumulate(-grad)

    record_flops("mse", a.size)
    return make_result(np.asarray(np.mean(diff**2), dtype=a.dtype), (a, b), backward, "mse")
