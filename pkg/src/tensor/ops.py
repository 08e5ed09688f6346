"""
Differentiable op catalog.

Every op is registered by kind and has a forward and a backward rule.
Images are NCHW. Scalar results have shape (1,).

The functional wrappers at the bottom are what the networks and losses call.
"""
from typing import Optional, Sequence
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from src.tensor.tape import Op, Tensor, record, register_op
from src.utils.errors import ShapeError

LEAKY_SLOPE = 0.2
NORM_EPS = 1e-5


def _require_ndim(kind: str, arrays: Sequence[np.ndarray], ndims: Sequence[int]) -> None:
    for arr, ndim in zip(arrays, ndims):
        if arr.ndim != ndim:
            raise ShapeError(kind, [a.shape for a in arrays], f"expected ranks {list(ndims)}")


def _require_same_shape(kind: str, arrays: Sequence[np.ndarray]) -> None:
    if any(arr.shape != arrays[0].shape for arr in arrays[1:]):
        raise ShapeError(kind, [a.shape for a in arrays], "shapes must match")


# ============================================================================
# Linear algebra
# ============================================================================

@register_op
class Dense(Op):
    """x [N, in] @ w [in, out] + b [out]"""

    kind = "dense"
    arity = 3

    @staticmethod
    def check(arrays, attrs):
        x, w, b = arrays
        _require_ndim(Dense.kind, arrays, (2, 2, 1))
        if x.shape[1] != w.shape[0] or w.shape[1] != b.shape[0]:
            raise ShapeError(Dense.kind, [a.shape for a in arrays], "inner dimensions differ")

    @staticmethod
    def forward(arrays, attrs):
        x, w, b = arrays
        return x @ w + b, (x, w)

    @staticmethod
    def backward(grad, ctx, attrs):
        x, w = ctx
        return grad @ w.T, x.T @ grad, grad.sum(axis=0)


@register_op
class Conv2d(Op):
    """3x3 convolution, zero padding 1, stride 1 or 2."""

    kind = "conv2d"
    arity = 3

    @staticmethod
    def check(arrays, attrs):
        x, w, b = arrays
        _require_ndim(Conv2d.kind, arrays, (4, 4, 1))
        if w.shape[2:] != (3, 3) or w.shape[1] != x.shape[1] or b.shape[0] != w.shape[0]:
            raise ShapeError(Conv2d.kind, [a.shape for a in arrays], "kernel must be [out, in, 3, 3]")
        if attrs.get("stride", 1) not in (1, 2):
            raise ShapeError(Conv2d.kind, [a.shape for a in arrays], "stride must be 1 or 2")

    @staticmethod
    def forward(arrays, attrs):
        x, w, b = arrays
        stride = attrs.get("stride", 1)
        n, c, h, wd = x.shape
        out_ch = w.shape[0]
        padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        windows = sliding_window_view(padded, (3, 3), axis=(2, 3))[:, :, ::stride, ::stride]
        ho, wo = windows.shape[2], windows.shape[3]
        cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * 9)
        kernel = w.reshape(out_ch, c * 9)
        out = (cols @ kernel.T + b).reshape(n, ho, wo, out_ch).transpose(0, 3, 1, 2)
        return out, (cols, w, x.shape, ho, wo)

    @staticmethod
    def backward(grad, ctx, attrs):
        cols, w, x_shape, ho, wo = ctx
        stride = attrs.get("stride", 1)
        n, c, h, wd = x_shape
        out_ch = w.shape[0]
        g = grad.transpose(0, 2, 3, 1).reshape(n * ho * wo, out_ch)
        grad_w = (g.T @ cols).reshape(w.shape)
        grad_b = g.sum(axis=0)
        grad_cols = (g @ w.reshape(out_ch, c * 9)).reshape(n, ho, wo, c, 3, 3)
        grad_padded = np.zeros((n, c, h + 2, wd + 2), dtype=grad.dtype)
        for i in range(3):
            for j in range(3):
                grad_padded[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += (
                    grad_cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                )
        return grad_padded[:, :, 1:-1, 1:-1], grad_w, grad_b


# ============================================================================
# Activations
# ============================================================================

@register_op
class LeakyRelu(Op):
    kind = "leaky_relu"

    @staticmethod
    def forward(arrays, attrs):
        (x,) = arrays
        slope = attrs.get("slope", LEAKY_SLOPE)
        positive = x > 0
        return np.where(positive, x, slope * x), positive

    @staticmethod
    def backward(grad, ctx, attrs):
        slope = attrs.get("slope", LEAKY_SLOPE)
        return (np.where(ctx, grad, slope * grad),)

    @staticmethod
    def branches(ctx):
        return ctx


@register_op
class Sigmoid(Op):
    kind = "sigmoid"

    @staticmethod
    def forward(arrays, attrs):
        (x,) = arrays
        out = np.exp(-np.logaddexp(0, -x))
        return out, out

    @staticmethod
    def backward(grad, ctx, attrs):
        return (grad * ctx * (1 - ctx),)


@register_op
class LogSigmoid(Op):
    """log(sigmoid(x)), computed without overflow."""

    kind = "log_sigmoid"

    @staticmethod
    def forward(arrays, attrs):
        (x,) = arrays
        return -np.logaddexp(0, -x), x

    @staticmethod
    def backward(grad, ctx, attrs):
        return (grad * np.exp(-np.logaddexp(0, ctx)),)


@register_op
class Tanh(Op):
    kind = "tanh"

    @staticmethod
    def forward(arrays, attrs):
        out = np.tanh(arrays[0])
        return out, out

    @staticmethod
    def backward(grad, ctx, attrs):
        return (grad * (1 - ctx * ctx),)


# ============================================================================
# Normalization
# ============================================================================

def _normalize(x: np.ndarray, eps: float):
    mean = x.mean(axis=(2, 3), keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=(2, 3), keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    return centered * inv_std, inv_std


def _normalize_backward(grad_hat: np.ndarray, x_hat: np.ndarray, inv_std: np.ndarray) -> np.ndarray:
    m = x_hat.shape[2] * x_hat.shape[3]
    sum_grad = grad_hat.sum(axis=(2, 3), keepdims=True)
    sum_grad_hat = (grad_hat * x_hat).sum(axis=(2, 3), keepdims=True)
    return (inv_std / m) * (m * grad_hat - sum_grad - x_hat * sum_grad_hat)


@register_op
class InstanceNorm(Op):
    """Per-sample, per-channel normalization over spatial positions (no affine)."""

    kind = "instance_norm"

    @staticmethod
    def check(arrays, attrs):
        _require_ndim(InstanceNorm.kind, arrays, (4,))

    @staticmethod
    def forward(arrays, attrs):
        x_hat, inv_std = _normalize(arrays[0], attrs.get("eps", NORM_EPS))
        return x_hat, (x_hat, inv_std)

    @staticmethod
    def backward(grad, ctx, attrs):
        x_hat, inv_std = ctx
        return (_normalize_backward(grad, x_hat, inv_std),)


@register_op
class AdaIn(Op):
    """Instance normalization followed by per-channel scale gamma [C] and shift beta [C]."""

    kind = "adain"
    arity = 3

    @staticmethod
    def check(arrays, attrs):
        x, gamma, beta = arrays
        _require_ndim(AdaIn.kind, arrays, (4, 1, 1))
        if gamma.shape[0] != x.shape[1] or beta.shape[0] != x.shape[1]:
            raise ShapeError(AdaIn.kind, [a.shape for a in arrays], "code length must equal channel count")

    @staticmethod
    def forward(arrays, attrs):
        x, gamma, beta = arrays
        x_hat, inv_std = _normalize(x, attrs.get("eps", NORM_EPS))
        out = gamma[None, :, None, None] * x_hat + beta[None, :, None, None]
        return out, (x_hat, inv_std, gamma)

    @staticmethod
    def backward(grad, ctx, attrs):
        x_hat, inv_std, gamma = ctx
        grad_gamma = (grad * x_hat).sum(axis=(0, 2, 3))
        grad_beta = grad.sum(axis=(0, 2, 3))
        grad_x = _normalize_backward(grad * gamma[None, :, None, None], x_hat, inv_std)
        return grad_x, grad_gamma, grad_beta


# ============================================================================
# Shape ops
# ============================================================================

@register_op
class UpsampleNearest(Op):
    """Nearest-neighbour x2 upsampling of the spatial axes."""

    kind = "upsample_nearest"

    @staticmethod
    def check(arrays, attrs):
        _require_ndim(UpsampleNearest.kind, arrays, (4,))

    @staticmethod
    def forward(arrays, attrs):
        (x,) = arrays
        return x.repeat(2, axis=2).repeat(2, axis=3), x.shape

    @staticmethod
    def backward(grad, ctx, attrs):
        n, c, h, w = ctx
        return (grad.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)


@register_op
class Concat(Op):
    """Concatenate two NCHW tensors along channels."""

    kind = "concat"
    arity = 2

    @staticmethod
    def check(arrays, attrs):
        a, b = arrays
        _require_ndim(Concat.kind, arrays, (4, 4))
        if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
            raise ShapeError(Concat.kind, [a.shape, b.shape], "batch and spatial extents must match")

    @staticmethod
    def forward(arrays, attrs):
        a, b = arrays
        return np.concatenate([a, b], axis=1), a.shape[1]

    @staticmethod
    def backward(grad, ctx, attrs):
        return grad[:, :ctx], grad[:, ctx:]


@register_op
class Segment(Op):
    """Flat slice [start, stop) of the row-major values."""

    kind = "segment"

    @staticmethod
    def check(arrays, attrs):
        size = arrays[0].size
        start, stop = attrs.get("start", 0), attrs.get("stop", size)
        if not 0 <= start < stop <= size:
            raise ShapeError(Segment.kind, [arrays[0].shape], f"bad range [{start}, {stop})")

    @staticmethod
    def forward(arrays, attrs):
        (x,) = arrays
        return x.reshape(-1)[attrs["start"]:attrs["stop"]].copy(), x.shape

    @staticmethod
    def backward(grad, ctx, attrs):
        full = np.zeros(int(np.prod(ctx)), dtype=grad.dtype)
        full[attrs["start"]:attrs["stop"]] = grad
        return (full.reshape(ctx),)


# ============================================================================
# Arithmetic
# ============================================================================

@register_op
class Add(Op):
    kind = "add"
    arity = 2

    @staticmethod
    def check(arrays, attrs):
        _require_same_shape(Add.kind, arrays)

    @staticmethod
    def forward(arrays, attrs):
        return arrays[0] + arrays[1], None

    @staticmethod
    def backward(grad, ctx, attrs):
        return grad, grad


@register_op
class Sub(Op):
    kind = "sub"
    arity = 2

    @staticmethod
    def check(arrays, attrs):
        _require_same_shape(Sub.kind, arrays)

    @staticmethod
    def forward(arrays, attrs):
        return arrays[0] - arrays[1], None

    @staticmethod
    def backward(grad, ctx, attrs):
        return grad, -grad


@register_op
class ScalarMul(Op):
    kind = "scalar_mul"

    @staticmethod
    def forward(arrays, attrs):
        return arrays[0] * attrs["scalar"], None

    @staticmethod
    def backward(grad, ctx, attrs):
        return (grad * attrs["scalar"],)


# ============================================================================
# Reductions
# ============================================================================

@register_op
class Mean(Op):
    kind = "mean"

    @staticmethod
    def forward(arrays, attrs):
        (x,) = arrays
        return np.array([x.mean()]), x.shape

    @staticmethod
    def backward(grad, ctx, attrs):
        size = int(np.prod(ctx))
        return (np.full(ctx, grad[0] / size, dtype=grad.dtype),)


@register_op
class AbsMean(Op):
    """Mean absolute value (L1)."""

    kind = "abs_mean"

    @staticmethod
    def forward(arrays, attrs):
        (x,) = arrays
        return np.array([np.abs(x).mean()]), x

    @staticmethod
    def backward(grad, ctx, attrs):
        return (np.sign(ctx) * (grad[0] / ctx.size),)

    @staticmethod
    def branches(ctx):
        return np.sign(ctx)


@register_op
class SquareMean(Op):
    """Mean squared value (L2)."""

    kind = "square_mean"

    @staticmethod
    def forward(arrays, attrs):
        (x,) = arrays
        return np.array([(x * x).mean()]), x

    @staticmethod
    def backward(grad, ctx, attrs):
        return (ctx * (2 * grad[0] / ctx.size),)


# ============================================================================
# Functional wrappers
# ============================================================================

def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return record("dense", [x, w, b])


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1) -> Tensor:
    """Without `b` the convolution has no bias (an untracked zero vector is used)."""
    if b is None:
        b = Tensor(np.zeros(w.shape[0], dtype=w.data.dtype))
    return record("conv2d", [x, w, b], stride=stride)


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    return record("leaky_relu", [x], slope=slope)


def sigmoid(x: Tensor) -> Tensor:
    return record("sigmoid", [x])


def log_sigmoid(x: Tensor) -> Tensor:
    return record("log_sigmoid", [x])


def tanh(x: Tensor) -> Tensor:
    return record("tanh", [x])


def instance_norm(x: Tensor, eps: float = NORM_EPS) -> Tensor:
    return record("instance_norm", [x], eps=eps)


def adain(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = NORM_EPS) -> Tensor:
    return record("adain", [x, gamma, beta], eps=eps)


def upsample_nearest(x: Tensor) -> Tensor:
    return record("upsample_nearest", [x])


def concat(a: Tensor, b: Tensor) -> Tensor:
    return record("concat", [a, b])


def segment(x: Tensor, start: int, stop: int) -> Tensor:
    return record("segment", [x], start=start, stop=stop)


def add(a: Tensor, b: Tensor) -> Tensor:
    return record("add", [a, b])


def sub(a: Tensor, b: Tensor) -> Tensor:
    return record("sub", [a, b])


def scalar_mul(x: Tensor, scalar: float) -> Tensor:
    return record("scalar_mul", [x], scalar=float(scalar))


def mean(x: Tensor) -> Tensor:
    return record("mean", [x])


def abs_mean(x: Tensor) -> Tensor:
    return record("abs_mean", [x])


def square_mean(x: Tensor) -> Tensor:
    return record("square_mean", [x])


def sum_all(terms: Sequence[Tensor]) -> Tensor:
    """Left-to-right sum of same-shape tensors."""
    if not terms:
        raise ShapeError("sum_all", [], "needs at least one term")
    total = terms[0]
    for term in terms[1:]:
        total = add(total, term)
    return total
