"""Record-level white-box features for membership inference.

Three feature kinds are extracted from a model for a labelled record (x, y),
always with dropout off:

* OA — the output activations of selected layers;
* G  — the cross-entropy gradients of selected layers' weights, with the bias
       gradients concatenated after the flattened weight gradients;
* IA — the per-unit contributions of the penultimate activations to the
       true-class logit, ``w[y, i] * a[i]`` over the classifier's inputs.
       Together with the class bias these sum exactly to the class-y logit.

``build_attack_dataset`` featurises a record pool against a list of models and
attaches membership labels, producing the arrays the meta-classifier trains on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..data import LabeledDataset, membership_labels
from ..errors import ShapeError
from ..nn.layers import Dense, activation_grad, apply_activation
from ..nn.model import Model, backward_from_trace, forward_batch


@dataclass(frozen=True)
class FeatureSpec:
    """Which features feed the meta-classifier. Layer indices count
    parameterised layers; negatives index from the output (-1 = head)."""

    oa_layers: tuple = ()
    grad_layers: tuple = ()
    include_input_activations: bool = False
    include_label: bool = True

    def normalized(self, model: Model) -> "FeatureSpec":
        n = model.n_param_layers
        return FeatureSpec(
            oa_layers=tuple(l % n for l in self.oa_layers),
            grad_layers=tuple(l % n for l in self.grad_layers),
            include_input_activations=self.include_input_activations,
            include_label=self.include_label,
        )

    def group_names(self) -> list[str]:
        names = [f"oa{l}" for l in self.oa_layers]
        names += [f"g{l}" for l in self.grad_layers]
        if self.include_input_activations:
            names.append("ia")
        return names


@dataclass
class RecordFeatures:
    """Feature groups of one record against one model."""

    groups: dict
    label: int
    member: int | None = None


def input_activation_features(model: Model, trace_activations: list, y: np.ndarray) -> np.ndarray:
    """Per-unit true-class logit contributions for a batch: rows are
    ``w_head[y_i] * penultimate_i``."""
    pos, head = model.param_layer(model.n_param_layers - 1)
    if not isinstance(head, Dense):
        raise ShapeError("input activations need a dense classification head")
    penult = trace_activations[pos]
    return head.w[y] * penult


def extract_features(model: Model, x: np.ndarray, y: int, spec: FeatureSpec) -> RecordFeatures:
    """Features of a single record; dropout is always off."""
    spec = spec.normalized(model)
    trace = forward_batch(model, np.asarray(x)[None], dropout_rng=None)
    y_arr = np.asarray([y], dtype=np.int64)
    groups: dict = {}
    for l in spec.oa_layers:
        pos, _ = model.param_layer(l)
        groups[f"oa{l}"] = trace.activations[pos + 1][0].ravel().copy()
    if spec.grad_layers:
        grads = backward_from_trace(model, trace, y_arr)
        for l in spec.grad_layers:
            groups[f"g{l}"] = np.concatenate(
                [grads.weights[l].ravel(), grads.biases[l].ravel()]
            ).astype(np.float32)
    if spec.include_input_activations:
        groups["ia"] = input_activation_features(model, trace.activations, y_arr)[0].copy()
    return RecordFeatures(groups=groups, label=int(y))


@dataclass
class AttackDataset:
    """Feature matrices for every (record, model) pair, model-major order:
    row ``m * n_records + r`` holds record r featurised against model m."""

    groups: dict  # name -> (n_models * n_records, dim) float32
    labels: np.ndarray  # class labels, int64
    members: np.ndarray  # membership bits, int8
    model_index: np.ndarray  # source model of each row
    record_ids: np.ndarray
    n_models: int
    n_records: int

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx: np.ndarray) -> "AttackDataset":
        idx = np.asarray(idx)
        return AttackDataset(
            {k: v[idx] for k, v in self.groups.items()},
            self.labels[idx],
            self.members[idx],
            self.model_index[idx],
            self.record_ids[idx],
            n_models=self.n_models,
            n_records=self.n_records,
        )


def _featurise_batch(model: Model, x: np.ndarray, y: np.ndarray, spec: FeatureSpec) -> dict:
    groups: dict = {name: [] for name in spec.group_names()}
    trace = forward_batch(model, x, dropout_rng=None)
    for l in spec.oa_layers:
        pos, _ = model.param_layer(l)
        act = trace.activations[pos + 1]
        groups[f"oa{l}"] = act.reshape(len(x), -1).copy()
    if spec.include_input_activations:
        groups["ia"] = input_activation_features(model, trace.activations, y).copy()
    if spec.grad_layers:
        per_layer: dict = {l: [] for l in spec.grad_layers}
        for i in range(len(x)):
            tr = forward_batch(model, x[i : i + 1], dropout_rng=None)
            grads = backward_from_trace(model, tr, y[i : i + 1])
            for l in spec.grad_layers:
                per_layer[l].append(
                    np.concatenate([grads.weights[l].ravel(), grads.biases[l].ravel()])
                )
        for l in spec.grad_layers:
            groups[f"g{l}"] = np.stack(per_layer[l]).astype(np.float32)
    return groups


def build_attack_dataset(
    models: list,
    member_id_sets: list,
    pool: LabeledDataset,
    spec: FeatureSpec,
) -> AttackDataset:
    """Featurise every pool record against every model, labelling each row
    with the record's membership in that model's training set."""
    if len(models) != len(member_id_sets):
        raise ShapeError("need one member-id set per model")
    if not models:
        raise ShapeError("need at least one model")
    spec = spec.normalized(models[0])
    all_groups: dict = {name: [] for name in spec.group_names()}
    members = []
    for model, member_ids in zip(models, member_id_sets):
        g = _featurise_batch(model, pool.x, pool.y, spec)
        for name in all_groups:
            all_groups[name].append(g[name])
        members.append(membership_labels(pool.ids, np.asarray(member_ids)))
    n_models, n_records = len(models), len(pool)
    return AttackDataset(
        groups={k: np.concatenate(v).astype(np.float32) for k, v in all_groups.items()},
        labels=np.tile(pool.y, n_models),
        members=np.concatenate(members),
        model_index=np.repeat(np.arange(n_models), n_records),
        record_ids=np.tile(pool.ids, n_models),
        n_models=n_models,
        n_records=n_records,
    )


def _canonical_sum(values: np.ndarray) -> np.float32:
    """Sum in value order rather than index order; the result is identical
    for any permutation of the inputs, bit for bit."""
    return np.sort(values).sum(dtype=np.float32)


def set_based_score_features(model: Model, x: np.ndarray, y: int) -> np.ndarray:
    """Per-unit feature vectors of the classifier's input layer.

    Row d describes how unit d of the penultimate layer acts on the record:
    its output activation, its contribution to the true-class logit, the
    gradients of its outgoing weights (one per class) and the gradient of its
    own bias — a vector of length n_classes + 3. The rows form a set: any
    permutation of the penultimate layer permutes the rows and nothing else,
    which this path guarantees bit-exactly by computing every sum over the
    permuted axis in canonical (value) order.
    """
    pos, head = model.param_layer(model.n_param_layers - 1)
    if not isinstance(head, Dense):
        raise ShapeError("set-based features need a dense classification head")
    if model.n_param_layers < 2:
        raise ShapeError("set-based features need at least two layers")
    penult_pos, penult = model.param_layer(model.n_param_layers - 2)
    if not isinstance(penult, Dense):
        raise ShapeError("set-based features need a dense penultimate layer")
    y = int(y)
    if not 0 <= y < model.num_classes:
        raise ShapeError(f"class index {y} outside [0, {model.num_classes})")
    trace = forward_batch(model, np.asarray(x)[None], dropout_rng=None)
    h_in = trace.activations[penult_pos][0]  # input to the penultimate layer

    # penultimate layer, one exact dot product per unit (row moves cannot
    # change per-unit arithmetic)
    z1 = np.array([np.dot(penult.w[d], h_in) for d in range(penult.out_size)],
                  dtype=np.float32) + penult.b
    h1 = apply_activation(penult.activation, z1)

    # head logits with the sum over penultimate units taken in value order,
    # so a permuted model produces bit-identical logits
    logits = np.array(
        [_canonical_sum(head.w[j] * h1) + head.b[j] for j in range(head.out_size)],
        dtype=np.float32,
    )
    shifted = logits - logits.max()
    e = np.exp(shifted)
    probs = e / e.sum()

    delta_head = probs.copy()
    delta_head[y] -= 1.0
    oa = h1
    ia = head.w[y] * h1
    out_w_grads = h1[:, None] * delta_head[None, :]  # (d_penult, n_classes)
    back = np.array(
        [np.dot(head.w[:, d], delta_head) for d in range(penult.out_size)],
        dtype=np.float32,
    )
    bias_grads = back * activation_grad(
        penult.activation, z1, h1, np.ones_like(z1)
    ).astype(np.float32)
    return np.column_stack([oa, ia, out_w_grads, bias_grads]).astype(np.float32)


def aggregate_set_features(embedded: np.ndarray) -> np.ndarray:
    """Order-independent sum of per-unit embeddings: rows are sorted
    lexicographically before summation so the result is bit-identical for any
    permutation of the input rows."""
    order = np.lexsort(embedded.T[::-1])
    return embedded[order].sum(axis=0)
