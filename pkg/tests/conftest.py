"""Shared fixtures and independent oracles used across the suite."""

from __future__ import annotations

import itertools

import numpy as np
import pytest

from shadowalign.data import LabeledDataset
from shadowalign.nn import build_mlp, build_cnn, forward_batch
from shadowalign.training import init_weights


def rng(seed: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed))


@pytest.fixture
def small_mlp():
    """Randomly initialised 4-3-2 MLP with ReLU hidden layer."""
    return init_weights(build_mlp([4, 3], 2), seed=101)


@pytest.fixture
def mid_mlp():
    return init_weights(build_mlp([6, 8, 5], 3), seed=202)


@pytest.fixture
def small_cnn():
    """Two-conv CNN on 12x12 single-channel images."""
    return init_weights(
        build_cnn(12, 3, conv_filters=[4, 6], fc_sizes=[10], kernel=3, dropout_p=0.0),
        seed=303,
    )


# ---------------------------------------------------------------------------
# Oracles


def oracle_loss_f64(model, x, y) -> float:
    """Independent float64 re-implementation of the forward pass and the
    cross-entropy loss, used as the ground truth for finite differences."""
    from shadowalign.nn.layers import Conv2D, Dense, Dropout, Flatten, MaxPool2D

    h = np.asarray(x, dtype=np.float64)
    for layer in model.layers:
        if isinstance(layer, Dense):
            z = layer.w.astype(np.float64) @ h + layer.b.astype(np.float64)
            h = _oracle_activation(layer.activation, z)
        elif isinstance(layer, Conv2D):
            h = _oracle_conv(layer, h)
            h = _oracle_activation(layer.activation, h)
        elif isinstance(layer, MaxPool2D):
            k = layer.size
            c, hh, ww = h.shape
            h = h[:, : hh // k * k, : ww // k * k]
            h = h.reshape(c, hh // k, k, ww // k, k).max(axis=(2, 4))
        elif isinstance(layer, Flatten):
            h = h.reshape(-1)
        elif isinstance(layer, Dropout):
            pass
    return float(-np.log(max(h[y], 1e-300)))


def _oracle_activation(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    if name == "softmax":
        e = np.exp(z - z.max())
        return e / e.sum()
    return z


def _oracle_conv(layer, x):
    w = layer.w.astype(np.float64)
    b = layer.b.astype(np.float64)
    p, s = layer.padding, layer.stride
    if p:
        x = np.pad(x, ((0, 0), (p, p), (p, p)))
    c_out, c_in, k1, k2 = w.shape
    h_out = (x.shape[1] - k1) // s + 1
    w_out = (x.shape[2] - k2) // s + 1
    out = np.zeros((c_out, h_out, w_out))
    for co in range(c_out):
        for i in range(h_out):
            for j in range(w_out):
                patch = x[:, i * s : i * s + k1, j * s : j * s + k2]
                out[co, i, j] = (w[co] * patch).sum() + b[co]
    return out


def finite_difference_grads(model, x, y, eps=1e-3):
    """Central finite differences of the float64 oracle loss w.r.t. every
    weight and bias."""
    def central_diff(arr_flat, i):
        orig = arr_flat[i]
        arr_flat[i] = orig + eps
        hi = float(arr_flat[i])  # the step is quantised by float32 storage
        up = oracle_loss_f64(model, x, y)
        arr_flat[i] = orig - eps
        lo = float(arr_flat[i])
        down = oracle_loss_f64(model, x, y)
        arr_flat[i] = orig
        return (up - down) / (hi - lo)

    weights, biases = [], []
    for idx in range(model.n_param_layers):
        _, layer = model.param_layer(idx)
        dw = np.zeros(layer.w.size)
        flat = layer.w.reshape(-1)
        for i in range(flat.size):
            dw[i] = central_diff(flat, i)
        db = np.zeros(layer.b.size)
        for i in range(layer.b.size):
            db[i] = central_diff(layer.b, i)
        weights.append(dw.reshape(layer.w.shape))
        biases.append(db)
    return weights, biases


def brute_force_assignment(cost: np.ndarray):
    """Exhaustive minimum-cost assignment; returns (best mapping, best cost).
    Among ties the lexicographically smallest mapping wins."""
    n = cost.shape[0]
    best_map, best_cost = None, np.inf
    for perm in itertools.permutations(range(n)):
        c = float(sum(cost[i, perm[i]] for i in range(n)))
        if c < best_cost or (c == best_cost and (best_map is None or list(perm) < best_map)):
            best_cost = c
            best_map = list(perm)
    return np.asarray(best_map), best_cost


def linear_probe_accuracy(train: LabeledDataset, test: LabeledDataset) -> float:
    """Least-squares one-vs-all linear classifier; an independent check that a
    dataset is (or is not) linearly separable."""
    x = train.x.reshape(len(train), -1).astype(np.float64)
    x = np.column_stack([x, np.ones(len(x))])
    targets = np.eye(train.n_classes)[train.y]
    w, *_ = np.linalg.lstsq(x, targets, rcond=None)
    xt = test.x.reshape(len(test), -1).astype(np.float64)
    xt = np.column_stack([xt, np.ones(len(xt))])
    pred = (xt @ w).argmax(axis=1)
    return float(np.mean(pred == test.y))


def max_output_deviation(model_a, model_b, inputs: np.ndarray) -> float:
    out_a = forward_batch(model_a, inputs, check_finite=False).activations[-1]
    out_b = forward_batch(model_b, inputs, check_finite=False).activations[-1]
    return float(np.abs(out_a - out_b).max())


def random_inputs(model, n: int, seed: int = 11) -> np.ndarray:
    return rng(seed).standard_normal((n, *model.input_shape)).astype(np.float32)
