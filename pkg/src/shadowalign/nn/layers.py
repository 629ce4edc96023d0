"""Layer definitions and their forward/backward kernels.

Layers are plain dataclasses holding float32 parameters; the kernels are pure
functions operating on batch-first arrays (``(B, D)`` for vectors,
``(B, C, H, W)`` for images). Convolution is computed by looping over kernel
offsets and accumulating strided slices, which keeps the arithmetic explicit
while staying vectorised across the batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError

ACTIVATIONS = ("none", "relu", "tanh", "sigmoid", "softmax")


@dataclass
class Dense:
    """Fully connected layer: ``act(w @ x + b)`` with ``w`` of shape (d_out, d_in)."""

    w: np.ndarray
    b: np.ndarray
    activation: str = "none"

    def __post_init__(self):
        _check_activation(self.activation)
        if self.w.ndim != 2 or self.b.shape != (self.w.shape[0],):
            raise ShapeError(
                f"dense weights {self.w.shape} and bias {self.b.shape} are inconsistent"
            )

    @property
    def out_size(self) -> int:
        return self.w.shape[0]


@dataclass
class Conv2D:
    """2-D convolution: ``w`` of shape (c_out, c_in, k1, k2), per-filter bias."""

    w: np.ndarray
    b: np.ndarray
    activation: str = "none"
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        _check_activation(self.activation)
        if self.w.ndim != 4 or self.b.shape != (self.w.shape[0],):
            raise ShapeError(
                f"conv weights {self.w.shape} and bias {self.b.shape} are inconsistent"
            )

    @property
    def out_size(self) -> int:
        return self.w.shape[0]


@dataclass
class MaxPool2D:
    size: int = 2
    stride: int = 0  # 0 means "same as size"

    def __post_init__(self):
        if self.stride == 0:
            self.stride = self.size


@dataclass
class Flatten:
    """Reshape (C, H, W) to a vector in channel-major (channel, row, column) order."""


@dataclass
class Dropout:
    p: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.p < 1.0:
            raise ShapeError(f"dropout probability {self.p} outside [0, 1)")


Layer = Dense | Conv2D | MaxPool2D | Flatten | Dropout


def _check_activation(name: str):
    if name not in ACTIVATIONS:
        raise ShapeError(f"unknown activation {name!r}")


def apply_activation(name: str, z: np.ndarray) -> np.ndarray:
    if name == "none":
        return z
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    if name == "softmax":
        shifted = z - z.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=-1, keepdims=True)
    raise ShapeError(f"unknown activation {name!r}")


def activation_grad(name: str, z: np.ndarray, out: np.ndarray, dout: np.ndarray) -> np.ndarray:
    """Gradient through an elementwise activation (softmax handled by the loss)."""
    if name == "none":
        return dout
    if name == "relu":
        return dout * (z > 0)
    if name == "tanh":
        return dout * (1.0 - out * out)
    if name == "sigmoid":
        return dout * out * (1.0 - out)
    raise ShapeError(f"no elementwise gradient for activation {name!r}")


def dense_forward(layer: Dense, x: np.ndarray) -> np.ndarray:
    if x.ndim != 2 or x.shape[1] != layer.w.shape[1]:
        raise ShapeError(
            f"dense expects input width {layer.w.shape[1]}, got {x.shape}"
        )
    return x @ layer.w.T + layer.b


def dense_backward(layer: Dense, x: np.ndarray, dz: np.ndarray):
    dw = dz.T @ x
    db = dz.sum(axis=0)
    dx = dz @ layer.w
    return dx, dw, db


def conv2d_output_shape(layer: Conv2D, in_shape: tuple) -> tuple:
    c_in, h, w = in_shape
    c_out, c_k, k1, k2 = layer.w.shape
    if c_in != c_k:
        raise ShapeError(f"conv expects {c_k} input channels, got {c_in}")
    h_out = (h + 2 * layer.padding - k1) // layer.stride + 1
    w_out = (w + 2 * layer.padding - k2) // layer.stride + 1
    if h_out < 1 or w_out < 1:
        raise ShapeError(f"conv kernel {k1}x{k2} larger than padded input {in_shape}")
    return (c_out, h_out, w_out)


def conv2d_forward(layer: Conv2D, x: np.ndarray) -> np.ndarray:
    if x.ndim != 4:
        raise ShapeError(f"conv expects (B, C, H, W) input, got {x.shape}")
    _, h_out, w_out = conv2d_output_shape(layer, x.shape[1:])
    p, s = layer.padding, layer.stride
    if p:
        x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    c_out, _, k1, k2 = layer.w.shape
    out = np.zeros((x.shape[0], c_out, h_out, w_out), dtype=np.float32)
    for i in range(k1):
        for j in range(k2):
            window = x[:, :, i : i + s * h_out : s, j : j + s * w_out : s]
            out += np.einsum("oc,bchw->bohw", layer.w[:, :, i, j], window)
    out += layer.b[None, :, None, None]
    return out


def conv2d_backward(layer: Conv2D, x: np.ndarray, dz: np.ndarray):
    p, s = layer.padding, layer.stride
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    _, _, h_out, w_out = dz.shape
    k1, k2 = layer.w.shape[2], layer.w.shape[3]
    dw = np.zeros_like(layer.w)
    dxp = np.zeros_like(xp)
    for i in range(k1):
        for j in range(k2):
            window = xp[:, :, i : i + s * h_out : s, j : j + s * w_out : s]
            dw[:, :, i, j] = np.einsum("bohw,bchw->oc", dz, window)
            dxp[:, :, i : i + s * h_out : s, j : j + s * w_out : s] += np.einsum(
                "oc,bohw->bchw", layer.w[:, :, i, j], dz
            )
    db = dz.sum(axis=(0, 2, 3))
    dx = dxp[:, :, p : xp.shape[2] - p, p : xp.shape[3] - p] if p else dxp
    return dx, dw, db


def maxpool_forward(layer: MaxPool2D, x: np.ndarray):
    if layer.stride != layer.size:
        raise ShapeError("max-pool stride must equal the window size")
    k = layer.size
    b, c, h, w = x.shape
    h_out, w_out = h // k, w // k
    if h_out < 1 or w_out < 1:
        raise ShapeError(f"pool window {k} larger than input {x.shape}")
    trimmed = x[:, :, : h_out * k, : w_out * k]
    windows = trimmed.reshape(b, c, h_out, k, w_out, k).transpose(0, 1, 2, 4, 3, 5)
    flat = windows.reshape(b, c, h_out, w_out, k * k)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    return out, arg


def maxpool_backward(layer: MaxPool2D, x_shape: tuple, arg: np.ndarray, dz: np.ndarray):
    k = layer.size
    b, c, h, w = x_shape
    h_out, w_out = arg.shape[2], arg.shape[3]
    dflat = np.zeros((b, c, h_out, w_out, k * k), dtype=dz.dtype)
    np.put_along_axis(dflat, arg[..., None], dz[..., None], axis=-1)
    dwin = dflat.reshape(b, c, h_out, w_out, k, k).transpose(0, 1, 2, 4, 3, 5)
    dx = np.zeros(x_shape, dtype=dz.dtype)
    dx[:, :, : h_out * k, : w_out * k] = dwin.reshape(b, c, h_out * k, w_out * k)
    return dx


def dropout_mask(layer: Dropout, shape: tuple, rng: np.random.Generator) -> np.ndarray:
    """Inverted-scaling mask: kept units are multiplied by 1/(1-p)."""
    keep = rng.random(shape) >= layer.p
    return keep.astype(np.float32) / np.float32(1.0 - layer.p)
