"""Misalignment metrics between two same-architecture models.

Three per-layer scores quantify how far a shadow model sits from a target
model in weight space and in behaviour:

* weight misalignment — Euclidean distance over the layer's weights and
  biases stacked together;
* activation misalignment — mean Euclidean distance between the layer's
  outputs over a fixed probe set;
* activation correlation — mean Pearson correlation between the activation
  series of units sitting at the same position (for filters, over a random
  sample of map pixels).

A random-permutation baseline contextualises the weight score: it measures
the distance between the target layer and a randomly permuted copy of itself.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .nn.model import Model, forward_batch
from .realign import correlation_matrix
from .symmetry import random_permutation


def wms(target: Model, model: Model, layer: int) -> float:
    """Euclidean distance between the layers' weights and biases."""
    _, lt = target.param_layer(layer)
    _, lm = model.param_layer(layer)
    if lt.w.shape != lm.w.shape or lt.b.shape != lm.b.shape:
        raise ShapeError(f"layer {layer} shapes differ between models")
    dw = (lt.w.astype(np.float64) - lm.w.astype(np.float64)).ravel()
    db = lt.b.astype(np.float64) - lm.b.astype(np.float64)
    return float(np.sqrt(np.dot(dw, dw) + np.dot(db, db)))


def _layer_activations(model: Model, layer: int, probe_x: np.ndarray) -> np.ndarray:
    pos, _ = model.param_layer(layer)
    trace = forward_batch(model, probe_x, dropout_rng=None, check_finite=False)
    return trace.activations[pos + 1]


def ams(target: Model, model: Model, layer: int, probe_x: np.ndarray) -> float:
    """Mean over probe records of the distance between layer outputs
    (filter maps are flattened channel-row-column)."""
    if len(probe_x) == 0:
        raise ShapeError("activation misalignment needs a non-empty probe set")
    at = _layer_activations(target, layer, probe_x).reshape(len(probe_x), -1)
    am = _layer_activations(model, layer, probe_x).reshape(len(probe_x), -1)
    return float(np.mean(np.linalg.norm(at.astype(np.float64) - am.astype(np.float64), axis=1)))


def cba(
    target: Model,
    model: Model,
    layer: int,
    probe_x: np.ndarray,
    pixels: int = 50,
    rng: np.random.Generator | None = None,
) -> float:
    """Mean per-position Pearson correlation between the two models' activation
    series. For filter maps, ``pixels`` coordinates are sampled without
    replacement and each (filter, pixel) series contributes one correlation."""
    if len(probe_x) < 2:
        raise ShapeError("correlation needs at least 2 probe records")
    at = _layer_activations(target, layer, probe_x)
    am = _layer_activations(model, layer, probe_x)
    if at.ndim == 4:
        r, c, h, w = at.shape
        flat_t = at.reshape(r, c, h * w)
        flat_m = am.reshape(r, c, h * w)
        n_pix = min(pixels, h * w)
        if rng is None:
            raise ShapeError("pixel sampling for filter maps needs an rng")
        coords = rng.choice(h * w, size=n_pix, replace=False)
        # series per (filter, pixel): shape (c * n_pix, r)
        st = flat_t[:, :, coords].reshape(r, -1).T.astype(np.float64)
        sm = flat_m[:, :, coords].reshape(r, -1).T.astype(np.float64)
    else:
        st = at.T.astype(np.float64)
        sm = am.T.astype(np.float64)
    rhos = _rowwise_correlation(st, sm)
    return float(rhos.mean())


def _rowwise_correlation(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ac = a - a.mean(axis=1, keepdims=True)
    bc = b - b.mean(axis=1, keepdims=True)
    an = np.sqrt((ac * ac).sum(axis=1))
    bn = np.sqrt((bc * bc).sum(axis=1))
    denom = an * bn
    rho = np.zeros(len(a))
    ok = denom > 0
    rho[ok] = (ac[ok] * bc[ok]).sum(axis=1) / denom[ok]
    return np.clip(rho, -1.0, 1.0)


def random_perm_baseline(
    target: Model, layer: int, trials: int, rng: np.random.Generator
) -> tuple[float, float]:
    """Mean and standard deviation of the weight misalignment between the
    target layer and randomly permuted copies of itself.

    The permutation here is a measuring stick, not a model transform, so it
    applies to any layer including the classification head; only the layer's
    own weights enter the score, so no compensation is needed."""
    if trials < 1:
        raise ShapeError("need at least one trial")
    _, lyr = target.param_layer(layer)
    w = lyr.w.reshape(lyr.w.shape[0], -1).astype(np.float64)
    b = lyr.b.astype(np.float64)
    scores = np.empty(trials)
    for t in range(trials):
        perm = random_permutation(lyr.out_size, rng)
        m = perm.mapping
        dw = (w - w[m]).ravel()
        db = b - b[m]
        scores[t] = np.sqrt(np.dot(dw, dw) + np.dot(db, db))
    return float(scores.mean()), float(scores.std())


@dataclass
class LayerMisalignment:
    layer: int
    wms: float
    ams: float
    cba: float
    baseline_wms_mean: float
    baseline_wms_sd: float


@dataclass
class MisalignmentReport:
    target_id: str
    model_id: str
    probe_size: int
    pixels: int
    probe_ids: list
    layers: list = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("model_id,layer,metric,value,baseline\n")
        for row in self.layers:
            base = f"{row.baseline_wms_mean:.6f}"
            buf.write(f"{self.model_id},{row.layer},wms,{row.wms:.6f},{base}\n")
            buf.write(f"{self.model_id},{row.layer},ams,{row.ams:.6f},\n")
            buf.write(f"{self.model_id},{row.layer},cba,{row.cba:.6f},\n")
        return buf.getvalue()


def misalignment_report(
    target: Model,
    model: Model,
    probe_x: np.ndarray,
    rng: np.random.Generator,
    pixels: int = 50,
    baseline_trials: int = 10,
    probe_ids: list | None = None,
    target_id: str = "target",
    model_id: str = "shadow",
) -> MisalignmentReport:
    """All three metrics plus the random-permutation baseline for every
    hidden and output layer of the pair."""
    report = MisalignmentReport(
        target_id=target_id,
        model_id=model_id,
        probe_size=len(probe_x),
        pixels=pixels,
        probe_ids=list(probe_ids) if probe_ids is not None else [],
    )
    for layer in range(target.n_param_layers):
        base_mean, base_sd = random_perm_baseline(target, layer, baseline_trials, rng)
        report.layers.append(
            LayerMisalignment(
                layer=layer,
                wms=wms(target, model, layer),
                ams=ams(target, model, layer, probe_x),
                cba=cba(target, model, layer, probe_x, pixels=pixels, rng=rng),
                baseline_wms_mean=base_mean,
                baseline_wms_sd=base_sd,
            )
        )
    return report
