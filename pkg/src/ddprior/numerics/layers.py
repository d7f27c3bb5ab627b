"""Differentiable layer primitives: 3x3 same-padded convolution and dense.

Forward/backward pairs are hand-written reverse mode; there is no generic
autodiff here because only one fixed network topology ever needs gradients.
Convolutions are lowered to a single matmul via im2col so the hot paths run
on BLAS.  All functions preserve the input dtype (real64 by default, real32
as the speed option).

Activations in the batched fast path are channels-last (B, H, W, C), which
makes im2col nine contiguous slice copies instead of a strided gather.
Weights are always stored channels-first (Cout, Cin, 3, 3); the tiny
reordering to a matmul-ready matrix happens per call.  `layer_apply` /
`layer_backward` wrap the fast path with the conventional (C, H, W) / (n,)
single-input surface.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KERNEL = 3  # conv kernels are fixed 3x3
_PAD = KERNEL // 2


def _width_cols(x: np.ndarray) -> np.ndarray:
    """(B, H, W, C) -> (B, H*W, 3*C): the three width-shifted copies.

    Row shifts are handled by the matmul accumulation in the callers, so the
    3x3 lowering only ever materializes 3x the activation, not 9x.
    """
    b, h, w, c = x.shape
    xw = np.zeros((b, h, w + 2 * _PAD, c), dtype=x.dtype)
    xw[:, :, _PAD : _PAD + w, :] = x
    cols = np.empty((b, h, w, KERNEL, c), dtype=x.dtype)
    for kx in range(KERNEL):
        cols[:, :, :, kx, :] = xw[:, :, kx : kx + w, :]
    return cols.reshape(b, h * w, KERNEL * c)


def _row_conv(cols: np.ndarray, weights: np.ndarray, shape: tuple, flip: bool) -> np.ndarray:
    """Accumulate the three row-shifted matmuls of a width-lowered conv.

    cols: (B, H*W, 3*Cin) from `_width_cols`; weights (Cout, Cin, 3, 3).
    `flip` selects correlation with the 180deg-flipped transposed kernel,
    i.e. the input-gradient direction.
    """
    b, h, w, _ = shape
    cout = weights.shape[1] if flip else weights.shape[0]
    acc = np.zeros((b, h + 2 * _PAD, w, cout), dtype=cols.dtype)
    for ky in range(KERNEL):
        if flip:
            wk = weights[:, :, 2 - ky, ::-1].transpose(2, 0, 1).reshape(KERNEL * weights.shape[0], cout)
        else:
            wk = np.ascontiguousarray(weights[:, :, ky, :].transpose(2, 1, 0)).reshape(
                KERNEL * weights.shape[1], cout
            )
        acc[:, 2 - ky : 2 - ky + h] += (cols @ wk).reshape(b, h, w, cout)
    return acc[:, _PAD : _PAD + h]


def conv3x3_forward_cl(
    x: np.ndarray, weights: np.ndarray, bias: np.ndarray, want_cache: bool = False
):
    """x (B, H, W, Cin), weights (Cout, Cin, 3, 3), bias (Cout,) -> (B, H, W, Cout).

    With `want_cache`, also returns the lowered input columns so the backward
    pass can skip rebuilding them for the weight gradient.
    """
    b, h, w, cin = x.shape
    cout = weights.shape[0]
    if weights.shape != (cout, cin, KERNEL, KERNEL):
        raise ValueError(f"conv weights {weights.shape} incompatible with input channels {cin}")
    if bias.shape != (cout,):
        raise ValueError(f"conv bias {bias.shape} must be ({cout},)")
    cols = _width_cols(x)
    out = _row_conv(cols, weights, x.shape, flip=False)
    out += bias
    return (out, cols) if want_cache else out


def conv3x3_backward_cl(
    x: np.ndarray,
    weights: np.ndarray,
    output_grad: np.ndarray,
    want_param_grads: bool = True,
    cols: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray | None, np.ndarray | None]:
    """Gradients of a scalar loss: returns (dx, dweights, dbias)."""
    b, h, w, cin = x.shape
    cout = weights.shape[0]
    if want_param_grads:
        if cols is None:
            cols = _width_cols(x)
        colsm = cols.reshape(b * h * w, KERNEL * cin)
        gpad = np.zeros((b, h + 2 * _PAD, w, cout), dtype=output_grad.dtype)
        gpad[:, _PAD : _PAD + h] = output_grad
        dw = np.empty((cout, cin, KERNEL, KERNEL), dtype=weights.dtype)
        for ky in range(KERNEL):
            gk = gpad[:, 2 - ky : 2 - ky + h].reshape(b * h * w, cout)
            # (3*Cin, Cout) block in (kx, cin) order, matching _row_conv
            dwk = (colsm.T @ gk).reshape(KERNEL, cin, cout)
            dw[:, :, ky, :] = dwk.transpose(2, 1, 0)
        db = output_grad.reshape(-1, cout).sum(axis=0)
    else:
        dw = db = None
    dx = _row_conv(_width_cols(output_grad), weights, (b, h, w, cout), flip=True)
    return dx, dw, db


def dense_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """x (B, n_in), weights (n_out, n_in), bias (n_out,) -> (B, n_out)."""
    if x.shape[1] != weights.shape[1]:
        raise ValueError(f"dense input width {x.shape[1]} != weight width {weights.shape[1]}")
    if bias.shape != (weights.shape[0],):
        raise ValueError(f"dense bias {bias.shape} must be ({weights.shape[0]},)")
    return x @ weights.T + bias


def dense_backward(
    x: np.ndarray,
    weights: np.ndarray,
    output_grad: np.ndarray,
    want_param_grads: bool = True,
) -> tuple[np.ndarray, np.ndarray | None, np.ndarray | None]:
    dx = output_grad @ weights
    if want_param_grads:
        return dx, output_grad.T @ x, output_grad.sum(axis=0)
    return dx, None, None


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(pre: np.ndarray, output_grad: np.ndarray) -> np.ndarray:
    return output_grad * (pre > 0)


# channels-first aliases for the conventional (B, C, H, W) layout

def conv3x3_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """x (B, Cin, H, W) -> (B, Cout, H, W); thin wrapper over the fast path."""
    out = conv3x3_forward_cl(np.ascontiguousarray(x.transpose(0, 2, 3, 1)), weights, bias)
    return out.transpose(0, 3, 1, 2)


def conv3x3_backward(x, weights, output_grad, want_param_grads: bool = True):
    dx, dw, db = conv3x3_backward_cl(
        np.ascontiguousarray(x.transpose(0, 2, 3, 1)),
        weights,
        np.ascontiguousarray(output_grad.transpose(0, 2, 3, 1)),
        want_param_grads,
    )
    return dx.transpose(0, 3, 1, 2), dw, db


@dataclass
class LayerParams:
    """One layer's parameters; conv kernels are always 3x3."""

    weights: np.ndarray
    bias: np.ndarray
    kind: str = "conv3x3"  # conv3x3 | dense
    activation: str = "none"  # relu | none

    def __post_init__(self):
        if self.kind not in ("conv3x3", "dense"):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ("relu", "none"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.kind == "conv3x3" and self.weights.shape[2:] != (KERNEL, KERNEL):
            raise ValueError("conv3x3 layers need (Cout, Cin, 3, 3) weights")
        nout = self.weights.shape[0]
        if self.bias.shape != (nout,):
            raise ValueError(f"bias length {self.bias.shape} != output size {nout}")


def _batched(x: np.ndarray, kind: str) -> tuple[np.ndarray, bool]:
    want = 4 if kind == "conv3x3" else 2
    if x.ndim == want:
        return x, False
    if x.ndim == want - 1:
        return x[None], True
    raise ValueError(f"{kind} input must have {want - 1} or {want} dims, got {x.ndim}")


def layer_apply(params: LayerParams, x: np.ndarray) -> np.ndarray:
    """Forward pass through one layer, activation included."""
    xb, squeeze = _batched(np.asarray(x), params.kind)
    if params.kind == "conv3x3":
        out = conv3x3_forward(xb, params.weights, params.bias)
    else:
        out = dense_forward(xb, params.weights, params.bias)
    if params.activation == "relu":
        out = relu(out)
    return out[0] if squeeze else out


def layer_backward(
    params: LayerParams, x: np.ndarray, output_grad: np.ndarray
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Gradients of a scalar loss wrt the layer input and its parameters.

    `output_grad` is d(loss)/d(layer output).  The pre-activation is
    recomputed internally for the ReLU mask.
    """
    xb, squeeze = _batched(np.asarray(x), params.kind)
    gb, _ = _batched(np.asarray(output_grad), params.kind)
    if gb.shape[0] != xb.shape[0]:
        raise ValueError("output_grad batch does not match input batch")
    if params.kind == "conv3x3":
        pre = conv3x3_forward(xb, params.weights, params.bias)
        if params.activation == "relu":
            gb = relu_backward(pre, gb)
        dx, dw, db = conv3x3_backward(xb, params.weights, gb)
    else:
        pre = dense_forward(xb, params.weights, params.bias)
        if params.activation == "relu":
            gb = relu_backward(pre, gb)
        dx, dw, db = dense_backward(xb, params.weights, gb)
    if squeeze:
        dx = dx[0]
    return dx, {"weights": dw, "bias": db}
