"""Forward and backward passes of the network layers.

Internal layout is channels-last: volumes are (batch, nx, ny, nz, channels).
The public ``conv3d_forward`` and ``maxpool3d`` also accept channels-first
arrays (channels, nx, ny, nz) or (batch, channels, nx, ny, nz).
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ParameterError

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


# ------------------------------------------------------------------ convolution

def kernel_matrix(w: np.ndarray) -> np.ndarray:
    """(out, in, 3, 3, 3) kernel to the (27 * in, out) matrix matching the im2col column order."""
    out_c, in_c = w.shape[:2]
    return w.transpose(2, 3, 4, 1, 0).reshape(27 * in_c, out_c)


def _im2col(x: np.ndarray) -> np.ndarray:
    b, nx, ny, nz, c = x.shape
    xp = np.zeros((b, nx + 2, ny + 2, nz + 2, c), dtype=x.dtype)
    xp[:, 1:-1, 1:-1, 1:-1] = x
    win = sliding_window_view(xp, (3, 3, 3), axis=(1, 2, 3))   # (b, nx, ny, nz, c, 3, 3, 3)
    return np.ascontiguousarray(win.transpose(0, 1, 2, 3, 5, 6, 7, 4)).reshape(b, nx, ny, nz, 27 * c)


def conv_cl_forward(x, w, bias):
    """Zero-padded 3x3x3 cross-correlation. Returns (y, cache)."""
    if x.shape[-1] != w.shape[1]:
        raise ParameterError(f"input has {x.shape[-1]} channels, kernel expects {w.shape[1]}")
    cols = _im2col(x)
    y = cols @ kernel_matrix(w) + bias
    return y, (cols, w)


def conv_cl_backward(dy, cache, need_dx: bool = True):
    """Gradients (dx, dw, db); dx is the convolution of dy with the flipped, transposed kernel."""
    cols, w = cache
    out_c, in_c = w.shape[:2]
    dmat = cols.reshape(-1, 27 * in_c).T @ dy.reshape(-1, out_c)
    dw = dmat.reshape(3, 3, 3, in_c, out_c).transpose(4, 3, 0, 1, 2)
    db = dy.reshape(-1, out_c).sum(axis=0)
    dx = None
    if need_dx:
        w_adj = w.transpose(1, 0, 2, 3, 4)[:, :, ::-1, ::-1, ::-1]
        dx = _im2col(dy) @ kernel_matrix(w_adj)
    return dx, dw, db


def _to_cl(x):
    x = np.asarray(x)
    single = x.ndim == 4
    if single:
        x = x[None]
    if x.ndim != 5:
        raise ParameterError(f"expected (C, nx, ny, nz) or (B, C, nx, ny, nz), got {x.shape}")
    return np.moveaxis(x, 1, -1), single


def _from_cl(y, single):
    y = np.moveaxis(y, -1, 1)
    return y[0] if single else y


def conv3d_forward(x, w, bias):
    """Channels-first convolution (stride 1, padding 1); output spatial dims equal input dims."""
    w = np.asarray(w)
    if w.ndim != 5 or w.shape[2:] != (3, 3, 3):
        raise ParameterError(f"kernel must be (out, in, 3, 3, 3), got {w.shape}")
    xc, single = _to_cl(x)
    y, _ = conv_cl_forward(xc, w, np.asarray(bias))
    return _from_cl(y, single)


# ------------------------------------------------------------------ pooling

def pool_cl_forward(x):
    """2x2x2 max pooling with stride 2; ties resolved to the lowest linear index in the block."""
    b, nx, ny, nz, c = x.shape
    if nx % 2 or ny % 2 or nz % 2:
        raise ParameterError(f"pooling needs even spatial dims, got {(nx, ny, nz)}")
    blocks = x.reshape(b, nx // 2, 2, ny // 2, 2, nz // 2, 2, c).transpose(0, 1, 3, 5, 7, 2, 4, 6)
    blocks = blocks.reshape(b, nx // 2, ny // 2, nz // 2, c, 8)
    arg = blocks.argmax(axis=-1)
    y = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    return y, (arg, x.shape)


def pool_cl_backward(dy, cache):
    arg, xshape = cache
    b, nx, ny, nz, c = xshape
    blocks = np.zeros(dy.shape + (8,), dtype=dy.dtype)
    np.put_along_axis(blocks, arg[..., None], dy[..., None], axis=-1)
    blocks = blocks.reshape(b, nx // 2, ny // 2, nz // 2, c, 2, 2, 2).transpose(0, 1, 5, 2, 6, 3, 7, 4)
    return blocks.reshape(xshape)


def maxpool3d(x):
    """Channels-first max pooling. Returns (output, argmax) with argmax in 0..7 per block."""
    xc, single = _to_cl(x)
    y, (arg, _) = pool_cl_forward(xc)
    return _from_cl(y, single), _from_cl(arg, single)


# ------------------------------------------------------------------ batch norm

def bn_forward(x, gain, offset, running_mean, running_var, training: bool):
    """Per-channel normalization over all but the last axis.

    In training mode the running statistics are updated in place
    (running variance uses the unbiased batch variance).
    """
    axes = tuple(range(x.ndim - 1))
    if training:
        if x.shape[0] < 2:
            raise ParameterError("batch norm in training mode needs a batch of at least 2")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        m = x.size // x.shape[-1]
        running_mean *= 1 - BN_MOMENTUM
        running_mean += BN_MOMENTUM * mean
        running_var *= 1 - BN_MOMENTUM
        running_var += BN_MOMENTUM * var * m / max(m - 1, 1)
    else:
        mean, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mean) * inv
    return xhat * gain + offset, (xhat, inv, gain, training)


def bn_backward(dy, cache):
    xhat, inv, gain, training = cache
    axes = tuple(range(dy.ndim - 1))
    dgain = (dy * xhat).sum(axis=axes)
    doffset = dy.sum(axis=axes)
    dxhat = dy * gain
    if not training:
        return dxhat * inv, dgain, doffset
    m = dy.size // dy.shape[-1]
    dx = (inv / m) * (m * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
    return dx, dgain, doffset


def batchnorm(x, gain, offset, running_mean, running_var, training: bool = True):
    """Channels-first batch norm on (B, C, ...) inputs; running stats updated in place in training."""
    xc = np.moveaxis(np.asarray(x), 1, -1)
    y, _ = bn_forward(xc, gain, offset, running_mean, running_var, training)
    return np.moveaxis(y, -1, 1)


# ------------------------------------------------------------------ elementwise, pooling, dense

def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dy, mask):
    return dy * mask


def gap_forward(x):
    b, nx, ny, nz, c = x.shape
    return x.mean(axis=(1, 2, 3)), x.shape


def gap_backward(dy, shape):
    b, nx, ny, nz, c = shape
    return np.broadcast_to(dy[:, None, None, None, :] / (nx * ny * nz), shape).copy()


def linear_forward(x, w, bias):
    """w has shape (out, in)."""
    if x.shape[-1] != w.shape[1]:
        raise ParameterError(f"linear layer expects {w.shape[1]} inputs, got {x.shape[-1]}")
    return x @ w.T + bias, x


def linear_backward(dy, x, w):
    return dy @ w, dy.T @ x, dy.sum(axis=0)


def mse_loss(pred, target):
    diff = pred - target
    return float((diff * diff).mean()), 2.0 * diff / diff.size
