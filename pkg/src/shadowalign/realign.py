"""Re-aligning a shadow model's layers to a target model.

Each hidden layer is matched neuron-to-neuron (filter-to-filter) by solving a
minimum-cost assignment over one of three similarity costs:

* ``weight``       Euclidean distance between weight vectors — input weights
                   (with bias) when sweeping bottom-up, output weights when
                   sweeping top-down.
* ``activation``   Euclidean distance between activation series over a fixed
                   probe set (activation maps are flattened for filters).
* ``correlation``  negative Pearson correlation between the same series;
                   constant series correlate with nothing (cost 0).

The chosen permutation is applied with the compensating update to the next
layer, so the shadow model's function never changes. Sweeps are sequential:
bottom-up feeds each layer's permutation into the next layer's input weights,
top-down feeds it downward into output weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .assignment import solve_assignment
from .errors import ShapeError
from .nn.layers import Conv2D, Dense
from .nn.model import Model, copy_model, forward_batch
from .rng import SeedBundle
from .symmetry import Permutation, SymmetryOpLog, permute_layer


@dataclass(frozen=True)
class CostMatrix:
    """Square matcher costs; entry (i, j) scores shadow unit i against target unit j."""

    values: np.ndarray
    kind: str

    def __post_init__(self):
        v = self.values
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ShapeError(f"cost matrix must be square, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ShapeError("cost matrix contains non-finite entries")


@dataclass
class RealignPlan:
    """Ordered per-layer permutations; replaying on the original shadow model
    reproduces the re-aligned model."""

    steps: list = field(default_factory=list)  # (hidden layer index, Permutation)
    method: str = "weight"
    direction: str = "bottom_up"

    def apply(self, model: Model) -> Model:
        out = model
        for layer, perm in self.steps:
            out = permute_layer(out, layer, perm)
        return out

    def to_op_log(self) -> SymmetryOpLog:
        log = SymmetryOpLog()
        for layer, perm in self.steps:
            log.append("permute", layer, perm.mapping.tolist())
        return log

    def is_identity(self) -> bool:
        return all(perm.is_identity() for _, perm in self.steps)


def hungarian(cost: CostMatrix) -> Permutation:
    """Cost-minimising unit assignment (ties resolved lexicographically)."""
    return solve_assignment(cost.values)


def input_weight_features(model: Model, layer: int) -> np.ndarray:
    """Row d: the flattened incoming weights of unit d, bias included."""
    _, lyr = model.param_layer(layer)
    flat = lyr.w.reshape(lyr.w.shape[0], -1).astype(np.float64)
    return np.concatenate([flat, lyr.b[:, None].astype(np.float64)], axis=1)


def output_weight_features(model: Model, layer: int) -> np.ndarray:
    """Row d: the flattened weights leaving unit d into the next layer.

    At a conv-to-dense junction the dense columns feeding from filter d are
    the contiguous group given by the (channel, row, column) flatten order.
    """
    indices = model.param_layer_indices()
    if layer < 0:
        layer += len(indices)
    if layer >= len(indices) - 1:
        raise ShapeError("output weights undefined for the final layer")
    cur = model.layers[indices[layer]]
    nxt = model.layers[indices[layer + 1]]
    d = cur.out_size
    if isinstance(nxt, Dense):
        if isinstance(cur, Conv2D):
            d_out, d_in = nxt.w.shape
            if d_in % d:
                raise ShapeError(f"dense width {d_in} not divisible by {d} filters")
            grouped = nxt.w.reshape(d_out, d, d_in // d)
            return grouped.transpose(1, 0, 2).reshape(d, -1).astype(np.float64)
        return nxt.w.T.astype(np.float64)
    if isinstance(nxt, Conv2D):
        return nxt.w.transpose(1, 0, 2, 3).reshape(d, -1).astype(np.float64)
    raise ShapeError("unsupported layer pair for output weights")


def activation_series(model: Model, layer: int, probe_x: np.ndarray) -> np.ndarray:
    """Row d: unit d's activations over the probe records, flattened for filters."""
    pos, lyr = model.param_layer(layer)
    trace = forward_batch(model, probe_x, dropout_rng=None, check_finite=False)
    act = trace.activations[pos + 1]
    if act.ndim == 4:  # (R, C, H, W) -> (C, R*H*W)
        return act.transpose(1, 0, 2, 3).reshape(act.shape[1], -1).astype(np.float64)
    return act.T.astype(np.float64)


def _pairwise_euclidean(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise ShapeError(f"feature shapes differ: {a.shape} vs {b.shape}")
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt((diff * diff).sum(axis=2))


def correlation_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pearson correlation between every row of ``a`` and every row of ``b``;
    rows with zero variance yield correlation 0."""
    if a.shape != b.shape:
        raise ShapeError(f"series shapes differ: {a.shape} vs {b.shape}")
    if a.shape[1] < 2:
        raise ShapeError("correlation needs at least 2 probe values")
    ac = a - a.mean(axis=1, keepdims=True)
    bc = b - b.mean(axis=1, keepdims=True)
    an = np.sqrt((ac * ac).sum(axis=1))
    bn = np.sqrt((bc * bc).sum(axis=1))
    denom = an[:, None] * bn[None, :]
    rho = np.zeros((a.shape[0], b.shape[0]))
    ok = denom > 0
    raw = ac @ bc.T
    rho[ok] = raw[ok] / denom[ok]
    return np.clip(rho, -1.0, 1.0)


def sim_weight(model: Model, target: Model, layer: int, direction: str) -> CostMatrix:
    if direction == "input":
        f_m = input_weight_features(model, layer)
        f_t = input_weight_features(target, layer)
    elif direction == "output":
        f_m = output_weight_features(model, layer)
        f_t = output_weight_features(target, layer)
    else:
        raise ShapeError(f"direction must be input or output, got {direction!r}")
    return CostMatrix(_pairwise_euclidean(f_m, f_t), kind=f"weight_{direction}")


def sim_activation(model: Model, target: Model, layer: int, probe_x: np.ndarray) -> CostMatrix:
    if len(probe_x) == 0:
        raise ShapeError("activation matching needs a non-empty probe set")
    s_m = activation_series(model, layer, probe_x)
    s_t = activation_series(target, layer, probe_x)
    return CostMatrix(_pairwise_euclidean(s_m, s_t), kind="activation")


def sim_correlation(model: Model, target: Model, layer: int, probe_x: np.ndarray) -> CostMatrix:
    s_m = activation_series(model, layer, probe_x)
    s_t = activation_series(target, layer, probe_x)
    return CostMatrix(-correlation_matrix(s_m, s_t), kind="correlation")


METHODS = ("weight", "activation", "correlation")


def _layer_cost(model, target, layer, method, weight_direction, probe_x) -> CostMatrix:
    if method == "weight":
        return sim_weight(model, target, layer, weight_direction)
    if method == "activation":
        return sim_activation(model, target, layer, probe_x)
    if method == "correlation":
        return sim_correlation(model, target, layer, probe_x)
    raise ShapeError(f"unknown re-alignment method {method!r}")


def _check_same_arch(model: Model, target: Model):
    if len(model.layers) != len(target.layers):
        raise ShapeError("models have different layer counts")
    for i, (a, b) in enumerate(zip(model.layers, target.layers)):
        if type(a) is not type(b):
            raise ShapeError("models have different layer kinds", layer=i)
        if isinstance(a, (Dense, Conv2D)) and a.w.shape != b.w.shape:
            raise ShapeError("models have different weight shapes", layer=i)


def realign_bottom_up(
    model: Model,
    target: Model,
    method: str = "weight",
    probe_x: np.ndarray | None = None,
) -> tuple[Model, RealignPlan]:
    """Align hidden layers from the input upward. Weight matching uses input
    weights, which the previous step has already aligned."""
    _check_same_arch(model, target)
    plan = RealignPlan(method=method, direction="bottom_up")
    current = copy_model(model)
    for layer in range(model.n_param_layers - 1):
        cost = _layer_cost(current, target, layer, method, "input", probe_x)
        perm = hungarian(cost)
        current = permute_layer(current, layer, perm)
        plan.steps.append((layer, perm))
    return current, plan


def realign_top_down(
    model: Model,
    target: Model,
    method: str = "weight",
    probe_x: np.ndarray | None = None,
) -> tuple[Model, RealignPlan]:
    """Align hidden layers from the output downward. Weight matching uses
    output weights, which the previous step has already aligned."""
    _check_same_arch(model, target)
    plan = RealignPlan(method=method, direction="top_down")
    current = copy_model(model)
    for layer in range(model.n_param_layers - 2, -1, -1):
        cost = _layer_cost(current, target, layer, method, "output", probe_x)
        perm = hungarian(cost)
        current = permute_layer(current, layer, perm)
        plan.steps.append((layer, perm))
    return current, plan


def realign(
    model: Model,
    target: Model,
    method: str = "weight",
    direction: str = "bottom_up",
    probe_x: np.ndarray | None = None,
) -> tuple[Model, RealignPlan]:
    if direction == "bottom_up":
        return realign_bottom_up(model, target, method, probe_x)
    if direction == "top_down":
        return realign_top_down(model, target, method, probe_x)
    raise ShapeError(f"direction must be bottom_up or top_down, got {direction!r}")


def weight_sort_canonical(model: Model, include_bias: bool = True) -> Model:
    """Canonical form: hidden units sorted bottom-up by their input-weight sum
    (ascending, ties keep the original order). Function preserving."""
    current = copy_model(model)
    for layer in range(model.n_param_layers - 1):
        _, lyr = current.param_layer(layer)
        key = lyr.w.reshape(lyr.w.shape[0], -1).astype(np.float64).sum(axis=1)
        if include_bias:
            key = key + lyr.b.astype(np.float64)
        order = np.argsort(key, kind="stable")
        mapping = np.empty(len(order), dtype=np.int64)
        mapping[order] = np.arange(len(order))
        perm = Permutation(mapping)
        if not perm.is_identity():
            current = permute_layer(current, layer, perm)
    return current


def realign_after_init(
    template: Model,
    target: Model,
    seeds: SeedBundle,
    train_dataset,
    val_dataset,
    train_config,
) -> tuple[Model, RealignPlan, object]:
    """Initialise a shadow model, re-align the fresh weights to the trained
    target (top-down weight matching), then train from the aligned start."""
    from .training import init_weights, train as run_training

    fresh = init_weights(template, seeds.weight_init)
    aligned, plan = realign_top_down(fresh, target, method="weight")
    model, log = run_training(
        template, train_dataset, val_dataset, seeds, train_config, initial_model=aligned
    )
    return model, plan, log
