"""Differentiable numeric kernels for 1D signals, plus Adam and gradient checking.

All arrays are 64-bit floats. Convolution uses the cross-correlation
convention (no kernel flip). Each forward pass returns an explicit context
object that the matching backward pass consumes, so ops stay pure and are
safe to call concurrently on disjoint data.

Ops accept a single instance (``channels x time``, or a flat vector for
``dense``) or the same with a leading batch axis; the backward pass returns
gradients in whichever convention the forward saw.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


@dataclass
class LayerGrad:
    """Gradients from one backward pass: w.r.t. the input and each parameter."""

    input_grad: np.ndarray
    param_grads: dict[str, np.ndarray]


def _as_f64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _batched(x: np.ndarray, single_ndim: int, what: str) -> tuple[np.ndarray, bool]:
    """Promote a single instance to a batch of one; remember if we did."""
    if x.ndim == single_ndim:
        return x[None], True
    if x.ndim == single_ndim + 1:
        return x, False
    raise ValueError(
        f"{what}: expected {single_ndim} or {single_ndim + 1} dims, got shape {x.shape}"
    )


def _match_grad(grad, ref_shape: tuple[int, ...], squeezed: bool, what: str) -> np.ndarray:
    g = _as_f64(grad)
    if squeezed and g.ndim == len(ref_shape) - 1:
        g = g[None]
    if g.shape != ref_shape:
        raise ValueError(f"{what}: upstream grad shape {g.shape} != output shape {ref_shape}")
    return g


def conv_output_length(t: int, kernel: int, stride: int, padding: int) -> int:
    """Output length of a strided cross-correlation."""
    return (t + 2 * padding - kernel) // stride + 1


def convtranspose_output_length(t: int, kernel: int, stride: int, padding: int) -> int:
    """Output length of the adjoint (transposed) operator with the same geometry."""
    return (t - 1) * stride + kernel - 2 * padding


# ---------------------------------------------------------------------------
# 1D convolution (cross-correlation)
# ---------------------------------------------------------------------------


@dataclass
class Conv1dCtx:
    padded: np.ndarray  # (N, C_in, T + 2p)
    kernels: np.ndarray
    stride: int
    padding: int
    in_len: int
    out_shape: tuple[int, ...]
    squeezed: bool


def _check_conv_geometry(t: int, kernel: int, stride: int, padding: int) -> None:
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if padding < 0:
        raise ValueError(f"padding must be >= 0, got {padding}")
    if kernel > t + 2 * padding:
        raise ValueError(
            f"kernel length {kernel} exceeds padded input length {t} + 2*{padding}"
        )


def conv1d_forward(x, kernels, bias, stride: int = 1, padding: int = 0):
    """Strided 1D cross-correlation.

    x: (C_in, T) or (N, C_in, T); kernels: (C_out, C_in, K); bias: (C_out,).
    Returns (output, ctx) with output length (T + 2p - K)//stride + 1.
    """
    x = _as_f64(x)
    kernels = _as_f64(kernels)
    bias = _as_f64(bias)
    x3, squeezed = _batched(x, 2, "conv1d")
    if kernels.ndim != 3:
        raise ValueError(f"conv1d: kernels must be (C_out, C_in, K), got shape {kernels.shape}")
    if x3.shape[1] != kernels.shape[1]:
        raise ValueError(
            f"conv1d: input has {x3.shape[1]} channels (shape {x.shape}) but kernels "
            f"expect {kernels.shape[1]} (shape {kernels.shape})"
        )
    c_out, _, k = kernels.shape
    if bias.shape != (c_out,):
        raise ValueError(f"conv1d: bias shape {bias.shape} != ({c_out},)")
    t = x3.shape[2]
    _check_conv_geometry(t, k, stride, padding)

    padded = np.pad(x3, ((0, 0), (0, 0), (padding, padding)))
    windows = sliding_window_view(padded, k, axis=2)[:, :, ::stride, :]
    y = np.einsum("nclk,ock->nol", windows, kernels, optimize=True)
    y += bias[:, None]
    ctx = Conv1dCtx(padded, kernels, stride, padding, t, y.shape, squeezed)
    return (y[0] if squeezed else y), ctx


def conv1d_backward(ctx: Conv1dCtx, upstream_grad) -> LayerGrad:
    """Gradients of a conv1d_forward call w.r.t. input, kernels and bias."""
    g = _match_grad(upstream_grad, ctx.out_shape, ctx.squeezed, "conv1d_backward")
    k = ctx.kernels.shape[2]
    stride, padding = ctx.stride, ctx.padding
    windows = sliding_window_view(ctx.padded, k, axis=2)[:, :, ::stride, :]

    grad_bias = g.sum(axis=(0, 2))
    grad_kernels = np.einsum("nclk,nol->ock", windows, g, optimize=True)

    l_out = g.shape[2]
    grad_padded = np.zeros_like(ctx.padded)
    spread = np.einsum("nol,ock->nckl", g, ctx.kernels, optimize=True)
    for j in range(k):
        grad_padded[:, :, j : j + (l_out - 1) * stride + 1 : stride] += spread[:, :, j]
    grad_x = grad_padded[:, :, padding : padding + ctx.in_len]
    if ctx.squeezed:
        grad_x = grad_x[0]
    return LayerGrad(grad_x, {"kernels": grad_kernels, "bias": grad_bias})


# ---------------------------------------------------------------------------
# 1D transposed convolution (exact adjoint of conv1d with the same geometry)
# ---------------------------------------------------------------------------


@dataclass
class ConvTranspose1dCtx:
    x: np.ndarray  # (N, C_in, T)
    kernels: np.ndarray
    stride: int
    padding: int
    out_shape: tuple[int, ...]
    squeezed: bool


def convtranspose1d_forward(x, kernels, bias, stride: int = 1, padding: int = 0):
    """Transposed 1D convolution.

    x: (C_in, T) or (N, C_in, T); kernels: (C_in, C_out, K); bias: (C_out,).
    Output length is (T-1)*stride + K - 2*padding. With matching geometry this
    operator is the adjoint of :func:`conv1d_forward` under the Frobenius
    inner product.
    """
    x = _as_f64(x)
    kernels = _as_f64(kernels)
    bias = _as_f64(bias)
    x3, squeezed = _batched(x, 2, "convtranspose1d")
    if kernels.ndim != 3:
        raise ValueError(
            f"convtranspose1d: kernels must be (C_in, C_out, K), got shape {kernels.shape}"
        )
    if x3.shape[1] != kernels.shape[0]:
        raise ValueError(
            f"convtranspose1d: input has {x3.shape[1]} channels (shape {x.shape}) but "
            f"kernels expect {kernels.shape[0]} (shape {kernels.shape})"
        )
    _, c_out, k = kernels.shape
    if bias.shape != (c_out,):
        raise ValueError(f"convtranspose1d: bias shape {bias.shape} != ({c_out},)")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if padding < 0:
        raise ValueError(f"padding must be >= 0, got {padding}")
    n, _, t = x3.shape
    t_full = (t - 1) * stride + k
    t_out = t_full - 2 * padding
    if t_out < 1:
        raise ValueError(
            f"convtranspose1d: output length ({t}-1)*{stride} + {k} - 2*{padding} = {t_out} < 1"
        )

    spread = np.einsum("nit,iok->nokt", x3, kernels, optimize=True)
    full = np.zeros((n, c_out, t_full))
    for j in range(k):
        full[:, :, j : j + (t - 1) * stride + 1 : stride] += spread[:, :, j]
    y = full[:, :, padding : padding + t_out]
    y += bias[:, None]
    ctx = ConvTranspose1dCtx(x3, kernels, stride, padding, y.shape, squeezed)
    return (y[0] if squeezed else y), ctx


def convtranspose1d_backward(ctx: ConvTranspose1dCtx, upstream_grad,
                             need_param_grads: bool = True) -> LayerGrad:
    """Gradients of a convtranspose1d_forward call."""
    g = _match_grad(upstream_grad, ctx.out_shape, ctx.squeezed, "convtranspose1d_backward")
    k = ctx.kernels.shape[2]
    stride, padding = ctx.stride, ctx.padding
    n, _, t = ctx.x.shape
    t_full = (t - 1) * stride + k

    g_full = np.zeros((n, g.shape[1], t_full))
    g_full[:, :, padding : padding + g.shape[2]] = g
    windows = sliding_window_view(g_full, k, axis=2)[:, :, ::stride, :]

    grad_x = np.einsum("notk,iok->nit", windows, ctx.kernels, optimize=True)
    if ctx.squeezed:
        grad_x = grad_x[0]
    param_grads: dict[str, np.ndarray] = {}
    if need_param_grads:
        param_grads["kernels"] = np.einsum("nit,notk->iok", ctx.x, windows, optimize=True)
        param_grads["bias"] = g.sum(axis=(0, 2))
    return LayerGrad(grad_x, param_grads)


# ---------------------------------------------------------------------------
# 1D max pooling
# ---------------------------------------------------------------------------


@dataclass
class MaxPool1dCtx:
    in_shape: tuple[int, ...]
    indices: np.ndarray  # (N, C, T_out), absolute winning positions
    out_shape: tuple[int, ...]
    squeezed: bool


def maxpool1d_forward(x, window: int, stride: int):
    """Strided max pooling along time. Ties break to the lowest index.

    Returns (output, ctx); ``ctx.indices`` records winning positions.
    """
    x = _as_f64(x)
    x3, squeezed = _batched(x, 2, "maxpool1d")
    t = x3.shape[2]
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if window > t:
        raise ValueError(f"maxpool1d: window {window} exceeds input length {t}")

    views = sliding_window_view(x3, window, axis=2)[:, :, ::stride, :]
    y = views.max(axis=-1)
    rel = views.argmax(axis=-1)  # first occurrence wins ties
    indices = rel + np.arange(y.shape[2]) * stride
    ctx = MaxPool1dCtx(x3.shape, indices, y.shape, squeezed)
    return (y[0] if squeezed else y), ctx


def maxpool1d_backward(ctx: MaxPool1dCtx, upstream_grad) -> LayerGrad:
    """Route upstream gradient to the argmax positions."""
    g = _match_grad(upstream_grad, ctx.out_shape, ctx.squeezed, "maxpool1d_backward")
    grad_x = np.zeros(ctx.in_shape)
    n, c, l_out = ctx.out_shape
    n_idx = np.arange(n)[:, None, None]
    c_idx = np.arange(c)[None, :, None]
    np.add.at(grad_x, (n_idx, c_idx, ctx.indices), g)
    if ctx.squeezed:
        grad_x = grad_x[0]
    return LayerGrad(grad_x, {})


# ---------------------------------------------------------------------------
# Dense (affine) layer and tanh
# ---------------------------------------------------------------------------


@dataclass
class DenseCtx:
    x: np.ndarray  # (N, D)
    weight: np.ndarray
    out_shape: tuple[int, ...]
    squeezed: bool


def dense_forward(x, weight, bias):
    """Affine map y = W x + b. x: (D,) or (N, D); weight: (H, D); bias: (H,)."""
    x = _as_f64(x)
    weight = _as_f64(weight)
    bias = _as_f64(bias)
    x2, squeezed = _batched(x, 1, "dense")
    if weight.ndim != 2:
        raise ValueError(f"dense: weight must be 2-dim, got shape {weight.shape}")
    if x2.shape[1] != weight.shape[1]:
        raise ValueError(
            f"dense: input width {x2.shape[1]} (shape {x2.shape}) != weight input "
            f"dim {weight.shape[1]} (shape {weight.shape})"
        )
    if bias.shape != (weight.shape[0],):
        raise ValueError(f"dense: bias shape {bias.shape} != ({weight.shape[0]},)")
    y = x2 @ weight.T + bias
    ctx = DenseCtx(x2, weight, y.shape, squeezed)
    return (y[0] if squeezed else y), ctx


def dense_backward(ctx: DenseCtx, upstream_grad) -> LayerGrad:
    g = _match_grad(upstream_grad, ctx.out_shape, ctx.squeezed, "dense_backward")
    grad_x = g @ ctx.weight
    grad_w = g.T @ ctx.x
    grad_b = g.sum(axis=0)
    if ctx.squeezed:
        grad_x = grad_x[0]
    return LayerGrad(grad_x, {"weight": grad_w, "bias": grad_b})


@dataclass
class TanhCtx:
    y: np.ndarray


def tanh_forward(x):
    y = np.tanh(_as_f64(x))
    return y, TanhCtx(y)


def tanh_backward(ctx: TanhCtx, upstream_grad) -> LayerGrad:
    g = _as_f64(upstream_grad)
    if g.shape != ctx.y.shape:
        raise ValueError(f"tanh_backward: grad shape {g.shape} != output shape {ctx.y.shape}")
    return LayerGrad(g * (1.0 - ctx.y * ctx.y), {})


# ---------------------------------------------------------------------------
# MSE loss
# ---------------------------------------------------------------------------


def mse_loss(pred, target) -> tuple[float, np.ndarray]:
    """Mean squared error over all elements and its gradient w.r.t. pred."""
    pred = _as_f64(pred)
    target = _as_f64(target)
    if pred.shape != target.shape:
        raise ValueError(f"mse_loss: pred shape {pred.shape} != target shape {target.shape}")
    diff = pred - target
    loss = float(np.mean(diff * diff))
    grad = (2.0 / diff.size) * diff
    return loss, grad


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """Per-parameter first/second moments plus hyperparameters.

    Defaults follow the framework convention: lr 0.001, beta1 0.9,
    beta2 0.999, epsilon 1e-8.
    """

    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)


def adam_init(params: dict[str, np.ndarray], lr: float = 0.001, beta1: float = 0.9,
              beta2: float = 0.999, epsilon: float = 1e-8) -> AdamState:
    state = AdamState(lr=lr, beta1=beta1, beta2=beta2, epsilon=epsilon)
    for name, p in params.items():
        state.first_moment[name] = np.zeros_like(p)
        state.second_moment[name] = np.zeros_like(p)
    return state


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, weight_decay: float = 0.0):
    """One bias-corrected Adam update, in place.

    ``weight_decay`` adds wd * param to the gradient before the moment
    updates (classic coupled L2 behavior). Returns (params, state).
    """
    if set(grads) != set(params):
        raise ValueError(
            f"adam_step: grad names {sorted(grads)} != param names {sorted(params)}"
        )
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(
                f"adam_step: grad shape {g.shape} != param shape {p.shape} for {name!r}"
            )
        if weight_decay:
            g = g + weight_decay * p
        m = state.first_moment[name]
        v = state.second_moment[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    return params, state


# ---------------------------------------------------------------------------
# Finite-difference gradient checking
# ---------------------------------------------------------------------------


def finite_difference_check(fn, point, eps: float = 1e-5) -> float:
    """Worst-element relative error of an analytic gradient vs central differences.

    ``fn(x)`` must return ``(scalar_loss, grad_like_x)``. Each element is
    compared as |analytic - numeric| / max(|numeric|, 1e-3 * ||numeric||_inf,
    1e-8): elements three orders of magnitude below the gradient's own scale
    are measured against that scale, so differentiation noise on negligible
    components cannot dominate. A gradient wrong by a factor of two still
    reports an error of exactly 1 at its largest element.
    """
    point = _as_f64(point)
    _, analytic = fn(point)
    analytic = _as_f64(analytic)
    if analytic.shape != point.shape:
        raise ValueError(
            f"finite_difference_check: grad shape {analytic.shape} != point shape {point.shape}"
        )
    numeric = np.zeros_like(point)
    flat = point.ravel()
    num_flat = numeric.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up, _ = fn(point)
        flat[i] = orig - eps
        down, _ = fn(point)
        flat[i] = orig
        num_flat[i] = (up - down) / (2.0 * eps)
    if numeric.size == 0:
        return 0.0
    scale = float(np.abs(numeric).max())
    denom = np.maximum(np.abs(numeric), max(1e-3 * scale, 1e-8))
    rel = np.abs(analytic - numeric) / denom
    return float(rel.max())
