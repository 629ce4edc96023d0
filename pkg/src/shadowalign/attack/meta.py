"""Membership meta-classifier over record-level features.

The network embeds each feature group separately and classifies the
concatenated embeddings:

* gradient groups go through a 1-D convolution (kernel 100, stride 100,
  4 channels), ReLU, dropout 0.2, then a 128-unit hidden layer and a 64-unit
  output;
* activation-style groups (OA, IA) go through the same 128 -> 64 MLP embedder
  without the convolution;
* per-unit set features are embedded by a shared 128 -> 64 MLP and summed
  (in canonical row order, so the sum is permutation invariant bit-for-bit);
* the class label is looked up in a learnable table of width 16;
* the head is an MLP with hidden sizes 128 and 64 and a 2-way softmax.

Training uses Adam on the binary cross-entropy with a halve-on-plateau
schedule: the rate starts at 1e-3, halves at every epoch end without a new
best validation accuracy, and training stops when it falls below 1e-4 (or at
100 epochs). Mini-batches always mix records of a single source model. The
returned parameters are the best-validation snapshot.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, ShapeError, TrainingDivergedError
from ..rng import derive_seed, stream
from .features import AttackDataset

LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class MetaClassifierConfig:
    lr: float = 1e-3
    lr_divisor: float = 2.0
    min_lr: float = 1e-4
    max_epochs: int = 100
    batch_size: int = 64
    dropout_p: float = 0.2
    conv_kernel: int = 100
    conv_stride: int = 100
    conv_channels: int = 4
    embed_hidden: int = 128
    embed_out: int = 64
    label_dim: int = 16
    head_hidden: tuple = (128, 64)
    seed: int = 0
    mode: str = "rotate"  # 'rotate' (disjoint pools) | 'balanced' (identical pools)

    def __post_init__(self):
        if self.mode not in ("rotate", "balanced"):
            raise ConfigError(f"unknown batching mode {self.mode!r}")


class _Param:
    __slots__ = ("value", "grad", "m", "v")

    def __init__(self, value: np.ndarray):
        self.value = value.astype(np.float32)
        self.grad = np.zeros_like(self.value)
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)


def _init_dense(rng, d_in, d_out):
    bound = 1.0 / np.sqrt(d_in)
    w = _Param(rng.uniform(-bound, bound, (d_out, d_in)).astype(np.float32))
    b = _Param(np.zeros(d_out, dtype=np.float32))
    return w, b


def _dense_fwd(w: _Param, b: _Param, x):
    return x @ w.value.T + b.value


def _dense_bwd(w: _Param, b: _Param, x, dout):
    w.grad += dout.T @ x
    b.grad += dout.sum(axis=0)
    return dout @ w.value


class _VecEmbed:
    """in -> hidden(ReLU) -> out, for activation-style feature vectors."""

    def __init__(self, rng, d_in, hidden, d_out):
        self.w1, self.b1 = _init_dense(rng, d_in, hidden)
        self.w2, self.b2 = _init_dense(rng, hidden, d_out)

    def params(self):
        return [self.w1, self.b1, self.w2, self.b2]

    def forward(self, x, train, rng):
        z1 = _dense_fwd(self.w1, self.b1, x)
        h = np.maximum(z1, 0)
        out = _dense_fwd(self.w2, self.b2, h)
        return out, (x, z1, h)

    def backward(self, cache, dout):
        x, z1, h = cache
        dh = _dense_bwd(self.w2, self.b2, h, dout)
        dz1 = dh * (z1 > 0)
        return _dense_bwd(self.w1, self.b1, x, dz1)


class _GradEmbed:
    """Strided 1-D convolution over the flattened gradient, then the MLP."""

    def __init__(self, rng, d_in, cfg: MetaClassifierConfig):
        self.kernel = cfg.conv_kernel
        self.stride = cfg.conv_stride
        self.channels = cfg.conv_channels
        self.dropout_p = cfg.dropout_p
        self.n_win = max(1, 1 + (max(d_in - self.kernel, 0) + self.stride - 1) // self.stride)
        self.padded = (self.n_win - 1) * self.stride + self.kernel
        bound = 1.0 / np.sqrt(self.kernel)
        self.k = _Param(rng.uniform(-bound, bound, (self.channels, self.kernel)).astype(np.float32))
        self.kb = _Param(np.zeros(self.channels, dtype=np.float32))
        self.d_in = d_in
        self.win_idx = (
            np.arange(self.n_win)[:, None] * self.stride + np.arange(self.kernel)[None, :]
        )
        flat = self.channels * self.n_win
        self.w1, self.b1 = _init_dense(rng, flat, cfg.embed_hidden)
        self.w2, self.b2 = _init_dense(rng, cfg.embed_hidden, cfg.embed_out)

    def params(self):
        return [self.k, self.kb, self.w1, self.b1, self.w2, self.b2]

    def forward(self, x, train, rng):
        b = len(x)
        padded = np.zeros((b, self.padded), dtype=np.float32)
        padded[:, : self.d_in] = x
        windows = padded[:, self.win_idx]  # (B, n_win, kernel)
        z = np.einsum("bwk,ck->bcw", windows, self.k.value) + self.kb.value[None, :, None]
        h = np.maximum(z, 0)
        if train and self.dropout_p > 0:
            mask = (rng.random(h.shape) >= self.dropout_p).astype(np.float32) / np.float32(
                1 - self.dropout_p
            )
            h = h * mask
        else:
            mask = None
        flat = h.reshape(b, -1)
        z1 = _dense_fwd(self.w1, self.b1, flat)
        h1 = np.maximum(z1, 0)
        out = _dense_fwd(self.w2, self.b2, h1)
        return out, (windows, z, mask, flat, z1, h1)

    def backward(self, cache, dout):
        windows, z, mask, flat, z1, h1 = cache
        dh1 = _dense_bwd(self.w2, self.b2, h1, dout)
        dz1 = dh1 * (z1 > 0)
        dflat = _dense_bwd(self.w1, self.b1, flat, dz1)
        dh = dflat.reshape(z.shape)
        if mask is not None:
            dh = dh * mask
        dz = dh * (z > 0)
        self.k.grad += np.einsum("bcw,bwk->ck", dz, windows)
        self.kb.grad += dz.sum(axis=(0, 2))
        return None  # gradients never flow into the raw features


class _SetEmbed:
    """Shared per-unit MLP whose outputs are summed in canonical order."""

    def __init__(self, rng, n_units, d_in, cfg: MetaClassifierConfig):
        self.n_units = n_units
        self.w1, self.b1 = _init_dense(rng, d_in, cfg.embed_hidden)
        self.w2, self.b2 = _init_dense(rng, cfg.embed_hidden, cfg.embed_out)

    def params(self):
        return [self.w1, self.b1, self.w2, self.b2]

    def forward(self, x, train, rng):
        b, d, f = x.shape
        flat_in = x.reshape(b * d, f)
        z1 = _dense_fwd(self.w1, self.b1, flat_in)
        h = np.maximum(z1, 0)
        emb = _dense_fwd(self.w2, self.b2, h).reshape(b, d, -1)
        out = np.empty((b, emb.shape[2]), dtype=np.float32)
        for i in range(b):
            order = np.lexsort(emb[i].T[::-1])
            out[i] = emb[i][order].sum(axis=0)
        return out, (flat_in, z1, h, b, d)

    def backward(self, cache, dout):
        flat_in, z1, h, b, d = cache
        demb = np.repeat(dout[:, None, :], d, axis=1).reshape(b * d, -1)
        dh = _dense_bwd(self.w2, self.b2, h, demb)
        dz1 = dh * (z1 > 0)
        _dense_bwd(self.w1, self.b1, flat_in, dz1)
        return None


class MetaClassifier:
    """Multi-branch membership classifier; see the module docstring."""

    def __init__(self, group_dims: dict, n_classes: int, cfg: MetaClassifierConfig):
        self.cfg = cfg
        self.n_classes = n_classes
        self.group_dims = dict(group_dims)
        rng = stream(derive_seed(cfg.seed, 0x494E49))  # init stream
        self.branches = {}
        total = 0
        for name in sorted(group_dims):
            dim = group_dims[name]
            if name.startswith("g"):
                branch = _GradEmbed(rng, int(dim), cfg)
            elif name == "set":
                n_units, d_in = dim
                branch = _SetEmbed(rng, int(n_units), int(d_in), cfg)
            else:
                branch = _VecEmbed(rng, int(dim), cfg.embed_hidden, cfg.embed_out)
            self.branches[name] = branch
            total += cfg.embed_out
        if cfg.label_dim > 0:
            bound = 1.0 / np.sqrt(cfg.label_dim)
            self.label_table = _Param(
                rng.uniform(-bound, bound, (n_classes, cfg.label_dim)).astype(np.float32)
            )
            total += cfg.label_dim
        else:
            self.label_table = None
        self.head = []
        d = total
        for hdim in cfg.head_hidden:
            self.head.append(_init_dense(rng, d, hdim))
            d = hdim
        self.head.append(_init_dense(rng, d, 2))

    # -- parameters -------------------------------------------------------
    def params(self):
        out = []
        for name in sorted(self.branches):
            out.extend(self.branches[name].params())
        if self.label_table is not None:
            out.append(self.label_table)
        for w, b in self.head:
            out.extend([w, b])
        return out

    def snapshot(self):
        return [p.value.copy() for p in self.params()]

    def restore(self, snap):
        for p, v in zip(self.params(), snap):
            p.value = v.copy()

    # -- forward / backward ------------------------------------------------
    def forward(self, groups: dict, labels: np.ndarray, train: bool, rng=None):
        embs, caches = [], {}
        for name in sorted(self.branches):
            if name not in groups:
                raise ShapeError(f"feature group {name!r} missing from batch")
            emb, cache = self.branches[name].forward(groups[name], train, rng)
            embs.append(emb)
            caches[name] = (emb.shape[1], cache)
        if self.label_table is not None:
            embs.append(self.label_table.value[labels])
        h = np.concatenate(embs, axis=1)
        head_cache = []
        for i, (w, b) in enumerate(self.head):
            z = _dense_fwd(w, b, h)
            if i < len(self.head) - 1:
                out = np.maximum(z, 0)
            else:
                out = z
            head_cache.append((h, z))
            h = out
        logits = h
        shifted = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        probs = e / e.sum(axis=1, keepdims=True)
        return probs, (caches, head_cache, labels)

    def backward(self, cache, probs, member_bits: np.ndarray):
        caches, head_cache, labels = cache
        b = len(member_bits)
        dlogits = probs.copy()
        dlogits[np.arange(b), member_bits.astype(np.int64)] -= 1.0
        dlogits /= np.float32(b)
        dout = dlogits
        for i in range(len(self.head) - 1, -1, -1):
            w, bias = self.head[i]
            h, z = head_cache[i]
            if i < len(self.head) - 1:
                dout = dout * (z > 0)
            dout = _dense_bwd(w, bias, h, dout)
        offset = 0
        for name in sorted(self.branches):
            width, branch_cache = caches[name]
            self.branches[name].backward(branch_cache, dout[:, offset : offset + width])
            offset += width
        if self.label_table is not None:
            dlab = dout[:, offset : offset + self.cfg.label_dim]
            np.add.at(self.label_table.grad, labels, dlab)

    # -- scoring ------------------------------------------------------------
    def score(self, dataset: AttackDataset) -> np.ndarray:
        """Member-class probability for every row."""
        probs, _ = self.forward(dataset.groups, dataset.labels, train=False)
        return probs[:, 1]

    def accuracy(self, dataset: AttackDataset) -> float:
        scores = self.score(dataset)
        return float(np.mean((scores >= 0.5) == (dataset.members == 1)))


def mc_score(mc: MetaClassifier, features: dict, label: int) -> float:
    """Membership probability of a single record's feature groups."""
    groups = {k: np.asarray(v, dtype=np.float32)[None] for k, v in features.items()}
    for name, dim in mc.group_dims.items():
        if name not in groups:
            raise ShapeError(f"feature group {name!r} missing")
        expected = tuple(dim) if isinstance(dim, tuple) else (dim,)
        if groups[name].shape[1:] != expected:
            raise ShapeError(
                f"group {name!r} has shape {groups[name].shape[1:]}, expected {expected}"
            )
    probs, _ = mc.forward(groups, np.asarray([label]), train=False)
    return float(probs[0, 1])


def _adam_step(params, lr, t, beta1=0.9, beta2=0.999, eps=1e-8):
    b1t = 1.0 - beta1**t
    b2t = 1.0 - beta2**t
    for p in params:
        p.m *= beta1
        p.m += (1 - beta1) * p.grad
        p.v *= beta2
        p.v += (1 - beta2) * p.grad * p.grad
        p.value -= ((lr / b1t) * p.m / (np.sqrt(p.v / b2t) + eps)).astype(np.float32)
        p.grad[...] = 0.0


def _batches_rotate(train: AttackDataset, cfg, rng):
    """Disjoint-pool regime: shuffle records each epoch, rotate through the
    source models batch by batch, reshuffling the model order each cycle."""
    n_rec, n_mod = train.n_records, train.n_models
    rec_order = rng.permutation(n_rec)
    model_order = rng.permutation(n_mod)
    slot = 0
    for start in range(0, n_rec, cfg.batch_size):
        if n_mod > 1 and slot == n_mod:
            model_order = rng.permutation(n_mod)
            slot = 0
        m = model_order[slot % n_mod]
        slot += 1
        idx = m * n_rec + rec_order[start : start + cfg.batch_size]
        yield idx


def _batches_balanced(train: AttackDataset, cfg, rng, member_rows, nonmember_rows):
    """Identical-pool regime: per batch pick one model, then a balanced draw of
    its member and non-member rows."""
    n_batches = max(1, train.n_records // cfg.batch_size)
    half = max(1, cfg.batch_size // 2)
    for _ in range(n_batches):
        m = int(rng.integers(train.n_models))
        mem = rng.choice(member_rows[m], size=min(half, len(member_rows[m])), replace=False)
        non = rng.choice(nonmember_rows[m], size=min(half, len(nonmember_rows[m])), replace=False)
        yield np.concatenate([mem, non])


def train_meta_classifier(
    train: AttackDataset,
    val: AttackDataset,
    cfg: MetaClassifierConfig,
    n_classes: int,
) -> MetaClassifier:
    """Train on features grouped by source model, early-stopped on a held-out
    model's features; returns the best-validation snapshot."""
    if len(train) == 0 or len(val) == 0:
        raise ConfigError("train and validation feature sets must be non-empty")
    if val.n_models != 1:
        raise ConfigError("validation features must come from exactly one model")
    group_dims = {}
    for name, arr in train.groups.items():
        group_dims[name] = arr.shape[1] if arr.ndim == 2 else tuple(arr.shape[1:])
    mc = MetaClassifier(group_dims, n_classes, cfg)
    batch_rng = stream(derive_seed(cfg.seed, 0x424154))  # batch sampling
    drop_rng = stream(derive_seed(cfg.seed, 0x44524F))  # dropout masks
    member_rows = nonmember_rows = None
    if cfg.mode == "balanced":
        member_rows = [
            np.nonzero((train.model_index == m) & (train.members == 1))[0]
            for m in range(train.n_models)
        ]
        nonmember_rows = [
            np.nonzero((train.model_index == m) & (train.members == 0))[0]
            for m in range(train.n_models)
        ]
        if any(len(r) == 0 for r in member_rows + nonmember_rows):
            raise ConfigError("balanced batching needs members and non-members per model")
    lr = cfg.lr
    best_acc = -1.0
    best_snap = mc.snapshot()
    t = 0
    for _epoch in range(1, cfg.max_epochs + 1):
        if cfg.mode == "rotate":
            batches = _batches_rotate(train, cfg, batch_rng)
        else:
            batches = _batches_balanced(train, cfg, batch_rng, member_rows, nonmember_rows)
        for idx in batches:
            sub_groups = {k: v[idx] for k, v in train.groups.items()}
            probs, cache = mc.forward(sub_groups, train.labels[idx], train=True, rng=drop_rng)
            p_true = np.maximum(
                probs[np.arange(len(idx)), train.members[idx].astype(np.int64)], LOG_FLOOR
            )
            if not np.isfinite(p_true).all():
                raise TrainingDivergedError(_epoch)
            mc.backward(cache, probs, train.members[idx])
            t += 1
            _adam_step(mc.params(), lr, t)
        val_acc = mc.accuracy(val)
        if val_acc > best_acc:
            best_acc = val_acc
            best_snap = mc.snapshot()
        else:
            lr /= cfg.lr_divisor
            if lr < cfg.min_lr:
                break
    mc.restore(best_snap)
    return mc
