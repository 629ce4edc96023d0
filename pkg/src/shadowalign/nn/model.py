"""Model container, forward pass with full traces, and manual backprop.

A model is an ordered list of layers over float32 arrays. The forward pass
records the output of every layer (the trace), which both the training loop
and the attack feature extractor consume. The backward pass produces exact
cross-entropy gradients for every weight and bias.

All public single-record operations are thin wrappers over batched kernels;
everything is a pure function of its inputs, so models can be shared freely
across worker processes.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..errors import NumericError, ShapeError
from .layers import (
    Conv2D,
    Dense,
    Dropout,
    Flatten,
    MaxPool2D,
    activation_grad,
    apply_activation,
    conv2d_backward,
    conv2d_forward,
    conv2d_output_shape,
    dense_backward,
    dense_forward,
    dropout_mask,
    maxpool_backward,
    maxpool_forward,
)

LOG_PROB_FLOOR = 1e-12  # keeps -log(p) finite for fully confident mistakes


@dataclass
class Model:
    layers: list
    input_shape: tuple
    num_classes: int
    arch_id: str = "custom"

    def __post_init__(self):
        validate_model(self)

    def param_layer_indices(self) -> list[int]:
        return [i for i, l in enumerate(self.layers) if isinstance(l, (Dense, Conv2D))]

    def param_layer(self, index: int):
        """Return (position in self.layers, layer) for the index-th parameterised layer."""
        indices = self.param_layer_indices()
        if index < 0:
            index += len(indices)
        if not 0 <= index < len(indices):
            raise ShapeError(f"parameterised layer index {index} out of range")
        pos = indices[index]
        return pos, self.layers[pos]

    @property
    def n_param_layers(self) -> int:
        return len(self.param_layer_indices())


def validate_model(model: Model):
    """Check that adjacent layer shapes compose and softmax sits only at the end."""
    shape = tuple(model.input_shape)
    param_indices = model.param_layer_indices()
    if not param_indices:
        raise ShapeError("model has no parameterised layers")
    for i, layer in enumerate(model.layers):
        if isinstance(layer, Dense):
            if len(shape) != 1:
                raise ShapeError("dense layer fed a non-flat input", layer=i)
            if layer.w.shape[1] != shape[0]:
                raise ShapeError(
                    f"dense expects width {layer.w.shape[1]}, gets {shape[0]}", layer=i
                )
            shape = (layer.w.shape[0],)
        elif isinstance(layer, Conv2D):
            if len(shape) != 3:
                raise ShapeError("conv layer fed a non-image input", layer=i)
            shape = conv2d_output_shape(layer, shape)
        elif isinstance(layer, MaxPool2D):
            if len(shape) != 3:
                raise ShapeError("pool layer fed a non-image input", layer=i)
            shape = (shape[0], shape[1] // layer.size, shape[2] // layer.size)
            if shape[1] < 1 or shape[2] < 1:
                raise ShapeError("pool output is empty", layer=i)
        elif isinstance(layer, Flatten):
            shape = (int(np.prod(shape)),)
        elif isinstance(layer, Dropout):
            pass
        else:
            raise ShapeError(f"unknown layer type {type(layer).__name__}", layer=i)
        if isinstance(layer, (Dense, Conv2D)) and layer.activation == "softmax":
            if i != param_indices[-1]:
                raise ShapeError("softmax allowed only on the final layer", layer=i)
    last = model.layers[param_indices[-1]]
    if last.out_size != model.num_classes:
        raise ShapeError(
            f"output size {last.out_size} != num_classes {model.num_classes}"
        )


def copy_model(model: Model) -> Model:
    layers = []
    for l in model.layers:
        if isinstance(l, (Dense, Conv2D)):
            layers.append(replace(l, w=l.w.copy(), b=l.b.copy()))
        else:
            layers.append(replace(l))
    return Model(layers, tuple(model.input_shape), model.num_classes, model.arch_id)


@dataclass
class ForwardTrace:
    """Per-layer outputs for one record: activations[0] is the input, the last
    entry the model output; logits are the pre-softmax values of the head."""

    activations: list
    logits: np.ndarray

    @property
    def output(self) -> np.ndarray:
        return self.activations[-1]


@dataclass
class BatchTrace:
    activations: list  # batch-first, one entry per model layer plus the input
    logits: np.ndarray
    caches: list  # per-layer backprop context (pre-activations, masks, argmax)


@dataclass
class GradientSet:
    """Cross-entropy gradients, one (dw, db) pair per parameterised layer."""

    weights: list
    biases: list


def _check_finite(arr: np.ndarray, layer: int, what: str):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {what}", layer=layer)


def forward_batch(
    model: Model,
    x: np.ndarray,
    dropout_rng: np.random.Generator | None = None,
    check_finite: bool = True,
) -> BatchTrace:
    """Run the network on a batch. ``dropout_rng`` enables masked (training)
    mode; ``None`` runs in deterministic evaluation mode."""
    x = np.ascontiguousarray(x, dtype=np.float32)
    if x.shape[1:] != tuple(model.input_shape):
        raise ShapeError(f"input shape {x.shape[1:]} != model input {model.input_shape}")
    if check_finite:
        _check_finite(x, -1, "input")
    activations = [x]
    caches = []
    logits = None
    param_indices = model.param_layer_indices()
    for i, layer in enumerate(model.layers):
        if isinstance(layer, Dense):
            z = dense_forward(layer, x)
            if layer.activation == "softmax":
                logits = z
            out = apply_activation(layer.activation, z)
            caches.append(("dense", x, z, out))
            x = out
        elif isinstance(layer, Conv2D):
            z = conv2d_forward(layer, x)
            out = apply_activation(layer.activation, z)
            caches.append(("conv", x, z, out))
            x = out
        elif isinstance(layer, MaxPool2D):
            out, arg = maxpool_forward(layer, x)
            caches.append(("pool", x.shape, arg))
            x = out
        elif isinstance(layer, Flatten):
            caches.append(("flatten", x.shape))
            x = x.reshape(x.shape[0], -1)
        elif isinstance(layer, Dropout):
            if dropout_rng is None:
                caches.append(("dropout", None))
            else:
                mask = dropout_mask(layer, x.shape, dropout_rng)
                caches.append(("dropout", mask))
                x = x * mask
        if check_finite:
            _check_finite(x, i, f"output of {type(layer).__name__}")
        activations.append(x)
    if logits is None:
        logits = activations[-1]
    return BatchTrace(activations, logits, caches)


def forward(
    model: Model, x: np.ndarray, dropout_rng: np.random.Generator | None = None
) -> ForwardTrace:
    """Single-record forward pass capturing every intermediate activation."""
    trace = forward_batch(model, np.asarray(x)[None], dropout_rng=dropout_rng)
    return ForwardTrace([a[0] for a in trace.activations], trace.logits[0])


def _validate_labels(y: np.ndarray, num_classes: int):
    if y.size and (y.min() < 0 or y.max() >= num_classes):
        raise ShapeError(
            f"class index outside [0, {num_classes}): {int(y.min())}..{int(y.max())}"
        )


def backward_from_trace(model: Model, trace: BatchTrace, y: np.ndarray) -> GradientSet:
    """Mean cross-entropy gradients for a batch, reusing the forward caches
    (and therefore any dropout masks drawn during the forward pass)."""
    y = np.asarray(y, dtype=np.int64)
    _validate_labels(y, model.num_classes)
    last_pos, last_layer = model.param_layer(model.n_param_layers - 1)
    if last_layer.activation != "softmax":
        raise ShapeError("cross-entropy backward requires a softmax head")
    if last_pos != len(model.layers) - 1:
        raise ShapeError("layers after the classification head are not supported")
    batch = trace.activations[0].shape[0]
    probs = trace.activations[-1]
    dout = probs.copy()
    dout[np.arange(batch), y] -= 1.0
    dout /= np.float32(batch)

    weights: list = [None] * model.n_param_layers
    biases: list = [None] * model.n_param_layers
    param_slot = model.n_param_layers - 1
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        cache = trace.caches[i]
        if isinstance(layer, Dense):
            _, x_in, z, out = cache
            if layer.activation == "softmax":
                dz = dout  # fused softmax + cross-entropy
            else:
                dz = activation_grad(layer.activation, z, out, dout)
            dout, dw, db = dense_backward(layer, x_in, dz)
            weights[param_slot], biases[param_slot] = dw, db
            param_slot -= 1
        elif isinstance(layer, Conv2D):
            _, x_in, z, out = cache
            dz = activation_grad(layer.activation, z, out, dout)
            dout, dw, db = conv2d_backward(layer, x_in, dz)
            weights[param_slot], biases[param_slot] = dw, db
            param_slot -= 1
        elif isinstance(layer, MaxPool2D):
            _, x_shape, arg = cache
            dout = maxpool_backward(layer, x_shape, arg, dout)
        elif isinstance(layer, Flatten):
            _, x_shape = cache
            dout = dout.reshape(x_shape)
        elif isinstance(layer, Dropout):
            _, mask = cache
            if mask is not None:
                dout = dout * mask
        _check_finite(dout, i, "gradient")
    return GradientSet(weights, biases)


def backward(model: Model, x: np.ndarray, y: int) -> GradientSet:
    """Per-record cross-entropy gradients with dropout off."""
    trace = forward_batch(model, np.asarray(x)[None], dropout_rng=None)
    return backward_from_trace(model, trace, np.asarray([y]))


def loss_batch(model: Model, trace: BatchTrace, y: np.ndarray) -> float:
    y = np.asarray(y, dtype=np.int64)
    _validate_labels(y, model.num_classes)
    probs = trace.activations[-1]
    p = np.maximum(probs[np.arange(len(y)), y], LOG_PROB_FLOOR)
    return float(np.mean(-np.log(p)))


def loss(model: Model, x: np.ndarray, y: int) -> float:
    """Cross-entropy of a single record: -log p(y|x), clamped at 1e-12."""
    trace = forward_batch(model, np.asarray(x)[None])
    return loss_batch(model, trace, np.asarray([y]))


def predict(model: Model, x: np.ndarray) -> np.ndarray:
    """Class predictions for a batch (evaluation mode)."""
    trace = forward_batch(model, x, dropout_rng=None, check_finite=False)
    return trace.activations[-1].argmax(axis=1)


def accuracy(model: Model, x: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(predict(model, x) == np.asarray(y)))


# ---------------------------------------------------------------------------
# Architecture builders


def build_mlp(
    sizes: list[int],
    num_classes: int,
    activation: str = "relu",
    dropout_p: float = 0.0,
) -> Model:
    """MLP template with zero weights. ``sizes`` is input plus hidden widths;
    the classification head is appended automatically. When ``dropout_p`` is
    positive a dropout layer follows the first hidden layer."""
    layers: list = []
    widths = list(sizes) + [num_classes]
    for i in range(len(widths) - 1):
        is_last = i == len(widths) - 2
        layers.append(
            Dense(
                w=np.zeros((widths[i + 1], widths[i]), dtype=np.float32),
                b=np.zeros(widths[i + 1], dtype=np.float32),
                activation="softmax" if is_last else activation,
            )
        )
        if i == 0 and dropout_p > 0 and not is_last:
            layers.append(Dropout(dropout_p))
    arch = "mlp-" + "-".join(str(w) for w in widths)
    return Model(layers, (sizes[0],), num_classes, arch_id=arch)


def build_cnn(
    image_size: int,
    num_classes: int,
    conv_filters: list[int] = (8, 16),
    fc_sizes: list[int] = (64,),
    kernel: int = 5,
    pool: int = 2,
    dropout_p: float = 0.2,
    in_channels: int = 1,
) -> Model:
    """Small CNN template: conv(+relu)+pool blocks, flatten, FC layers.

    Defaults follow the four-layer reference network: 5x5 kernels, stride 1,
    no padding, 2x2 max-pool after each conv, ReLU everywhere, and dropout
    after the first fully connected layer.
    """
    layers: list = []
    c_in = in_channels
    side = image_size
    for c_out in conv_filters:
        layers.append(
            Conv2D(
                w=np.zeros((c_out, c_in, kernel, kernel), dtype=np.float32),
                b=np.zeros(c_out, dtype=np.float32),
                activation="relu",
            )
        )
        side = side - kernel + 1
        layers.append(MaxPool2D(pool))
        side //= pool
        if side < 1:
            raise ShapeError("image too small for the conv stack")
        c_in = c_out
    layers.append(Flatten())
    width = c_in * side * side
    for i, fc in enumerate(fc_sizes):
        layers.append(
            Dense(
                w=np.zeros((fc, width), dtype=np.float32),
                b=np.zeros(fc, dtype=np.float32),
                activation="relu",
            )
        )
        if i == 0 and dropout_p > 0:
            layers.append(Dropout(dropout_p))
        width = fc
    layers.append(
        Dense(
            w=np.zeros((num_classes, width), dtype=np.float32),
            b=np.zeros(num_classes, dtype=np.float32),
            activation="softmax",
        )
    )
    arch = f"cnn-{image_size}px-" + "-".join(map(str, conv_filters)) + "-fc" + "-".join(
        map(str, fc_sizes)
    )
    return Model(layers, (in_channels, image_size, image_size), num_classes, arch_id=arch)
