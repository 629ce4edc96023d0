"""Seeded training: uniform init, Adam, step-decay learning rate.

The three randomness factors each consume their own stream from a SeedBundle:
weight initialisation, per-epoch batch shuffles, and dropout masks. Replaying
a bundle replays every draw bit-exactly, which is what makes the
change-one-factor-at-a-time studies meaningful.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .data import LabeledDataset
from .errors import ConfigError, TrainingDivergedError
from .nn.layers import Conv2D, Dense
from .nn.model import Model, backward_from_trace, copy_model, forward_batch, loss_batch
from .rng import SeedBundle


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    lr: float = 0.01
    lr_divisor: float = 2.0
    patience: int = 5  # epochs of non-increasing validation accuracy before decay
    min_lr: float = 1e-5
    max_epochs: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not self.lr > self.min_lr > 0:
            raise ConfigError("require lr > min_lr > 0")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")


@dataclass
class EpochRecord:
    epoch: int
    train_acc: float
    val_acc: float
    lr: float


@dataclass
class TrainLog:
    epochs: list = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("epoch,train_acc,val_acc,lr\n")
        for r in self.epochs:
            buf.write(f"{r.epoch},{r.train_acc:.6f},{r.val_acc:.6f},{r.lr:.8g}\n")
        return buf.getvalue()


def init_weights(template: Model, seed: int) -> Model:
    """Fresh model with weights uniform in +-1/sqrt(fan_in), zero biases.

    Draws come only from the weight-init stream, layer by layer in network
    order, so two models with equal seeds are bit-identical.
    """
    rng = np.random.Generator(np.random.Philox(key=seed & ((1 << 64) - 1)))
    model = copy_model(template)
    for layer in model.layers:
        if isinstance(layer, Dense):
            fan_in = layer.w.shape[1]
        elif isinstance(layer, Conv2D):
            fan_in = layer.w.shape[1] * layer.w.shape[2] * layer.w.shape[3]
        else:
            continue
        bound = 1.0 / np.sqrt(fan_in)
        layer.w[...] = rng.uniform(-bound, bound, size=layer.w.shape).astype(np.float32)
        layer.b[...] = 0.0
    return model


class _Adam:
    def __init__(self, model: Model, cfg: TrainConfig):
        self.cfg = cfg
        self.t = 0
        self.m = [
            (np.zeros_like(l.w), np.zeros_like(l.b))
            for l in model.layers
            if isinstance(l, (Dense, Conv2D))
        ]
        self.v = [
            (np.zeros_like(l.w), np.zeros_like(l.b))
            for l in model.layers
            if isinstance(l, (Dense, Conv2D))
        ]

    def step(self, model: Model, grads, lr: float):
        cfg = self.cfg
        self.t += 1
        b1t = 1.0 - cfg.beta1**self.t
        b2t = 1.0 - cfg.beta2**self.t
        slot = 0
        for layer in model.layers:
            if not isinstance(layer, (Dense, Conv2D)):
                continue
            for param, grad, m, v in (
                (layer.w, grads.weights[slot], self.m[slot][0], self.v[slot][0]),
                (layer.b, grads.biases[slot], self.m[slot][1], self.v[slot][1]),
            ):
                m *= cfg.beta1
                m += (1.0 - cfg.beta1) * grad
                v *= cfg.beta2
                v += (1.0 - cfg.beta2) * grad * grad
                update = (lr / b1t) * m / (np.sqrt(v / b2t) + cfg.adam_eps)
                param -= update.astype(np.float32)
            slot += 1


def _accuracy_eval(model: Model, ds: LabeledDataset) -> float:
    trace = forward_batch(model, ds.x, dropout_rng=None, check_finite=False)
    return float(np.mean(trace.activations[-1].argmax(axis=1) == ds.y))


def train(
    template: Model,
    dataset: LabeledDataset,
    val: LabeledDataset,
    seeds: SeedBundle,
    cfg: TrainConfig,
    initial_model: Model | None = None,
) -> tuple[Model, TrainLog]:
    """Train to the step-decay stopping rule; returns the final model and log.

    The learning rate halves after ``cfg.patience`` consecutive epochs whose
    validation accuracy does not strictly improve on the best seen; the
    counter resets on strict improvement and after each decay. Training stops
    once the rate falls below ``cfg.min_lr`` or at ``cfg.max_epochs``.
    ``initial_model`` overrides the weight-init draw (used by the
    realign-after-init pipeline); it must share the template architecture.
    """
    if len(dataset) == 0 or len(val) == 0:
        raise ConfigError("training and validation sets must be non-empty")
    if initial_model is not None:
        model = copy_model(initial_model)
    else:
        model = init_weights(template, seeds.weight_init)
    bo = seeds.batch_order_stream()
    ds_stream = seeds.dropout_stream()
    adam = _Adam(model, cfg)
    log = TrainLog()
    lr = cfg.lr
    best_val = -1.0
    stall = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = bo.permutation(len(dataset))
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            trace = forward_batch(model, dataset.x[idx], dropout_rng=ds_stream)
            batch_loss = loss_batch(model, trace, dataset.y[idx])
            if not np.isfinite(batch_loss):
                raise TrainingDivergedError(epoch)
            grads = backward_from_trace(model, trace, dataset.y[idx])
            adam.step(model, grads, lr)
        train_acc = _accuracy_eval(model, dataset)
        val_acc = _accuracy_eval(model, val)
        log.epochs.append(EpochRecord(epoch, train_acc, val_acc, lr))
        if val_acc > best_val:
            best_val = val_acc
            stall = 0
        else:
            stall += 1
        if stall >= cfg.patience:
            lr /= cfg.lr_divisor
            stall = 0
            if lr < cfg.min_lr:
                break
    return model, log
