"""Function-preserving weight-space transforms.

Permuting the neurons (filters) of a hidden layer, positively rescaling a
ReLU neuron, or flipping the sign of a tanh neuron leaves the network function
unchanged provided the neighbouring layer is adjusted to compensate. The
output classification layer is never transformed: its coordinates carry fixed
class semantics.

All transforms return a new model; the original is never mutated. Applied
operations can be recorded in a SymmetryOpLog and replayed bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .nn.layers import Conv2D, Dense
from .nn.model import Model, copy_model


@dataclass(frozen=True)
class Permutation:
    """Bijection over neuron/filter indices: mapping[d] is the destination of d."""

    mapping: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mapping, dtype=np.int64)
        object.__setattr__(self, "mapping", m)
        if m.ndim != 1 or not np.array_equal(np.sort(m), np.arange(len(m))):
            raise ShapeError("permutation mapping is not a bijection")

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        return cls(np.arange(n, dtype=np.int64))

    @property
    def size(self) -> int:
        return len(self.mapping)

    def inverse(self) -> "Permutation":
        inv = np.empty_like(self.mapping)
        inv[self.mapping] = np.arange(self.size)
        return Permutation(inv)

    def compose(self, first: "Permutation") -> "Permutation":
        """self o first: apply ``first``, then ``self``."""
        return Permutation(self.mapping[first.mapping])

    def is_identity(self) -> bool:
        return bool(np.array_equal(self.mapping, np.arange(self.size)))


def random_permutation(size: int, rng: np.random.Generator) -> Permutation:
    if size < 1:
        raise ShapeError("permutation size must be >= 1")
    return Permutation(rng.permutation(size))


def _hidden_layer_positions(model: Model, layer: int) -> tuple[int, int]:
    """Positions in model.layers of hidden param layer ``layer`` and its successor."""
    indices = model.param_layer_indices()
    if layer < 0:
        layer += len(indices)
    if layer == len(indices) - 1:
        raise ShapeError("the output classification layer cannot be transformed")
    if not 0 <= layer < len(indices) - 1:
        raise ShapeError(f"hidden layer index {layer} out of range")
    return indices[layer], indices[layer + 1]


def _scatter_input_side(cur, nxt, write):
    """Apply ``write(view)`` to the columns of the next layer's weights, where
    ``view`` exposes one axis indexed by the current layer's neurons/filters.

    At a conv-to-dense junction the dense columns are grouped by input filter,
    mirroring the (channel, row, column) flatten order.
    """
    if isinstance(cur, Conv2D) and isinstance(nxt, Dense):
        channels = cur.w.shape[0]
        d_out, d_in = nxt.w.shape
        if d_in % channels:
            raise ShapeError(
                f"dense input width {d_in} not divisible by {channels} filters"
            )
        view = nxt.w.reshape(d_out, channels, d_in // channels)
        write(view, axis=1)
        nxt.w = view.reshape(d_out, d_in)
    elif isinstance(nxt, Dense):
        write(nxt.w, axis=1)
    elif isinstance(cur, Conv2D) and isinstance(nxt, Conv2D):
        write(nxt.w, axis=1)
    else:
        raise ShapeError("dense-to-conv transitions are not supported")


def permute_layer(model: Model, layer: int, perm: Permutation, log: "SymmetryOpLog | None" = None) -> Model:
    """Send neuron/filter d of hidden layer ``layer`` to position perm.mapping[d].

    Rows of the layer's weights and bias move with the neuron; the columns of
    the next layer's weights are permuted to compensate, with conv-to-dense
    junctions handled by permuting column groups.
    """
    pos, nxt_pos = _hidden_layer_positions(model, layer)
    out = copy_model(model)
    cur, nxt = out.layers[pos], out.layers[nxt_pos]
    if perm.size != cur.out_size:
        raise ShapeError(f"permutation size {perm.size} != layer width {cur.out_size}")
    m = perm.mapping
    new_w = np.empty_like(cur.w)
    new_w[m] = cur.w
    new_b = np.empty_like(cur.b)
    new_b[m] = cur.b
    cur.w, cur.b = new_w, new_b

    def write(view, axis):
        moved = np.empty_like(view)
        idx = [slice(None)] * view.ndim
        idx[axis] = m
        moved[tuple(idx)] = view
        view[...] = moved

    _scatter_input_side(cur, nxt, write)
    if log is not None:
        log.append("permute", layer, m.tolist())
    return out


def rescale_neurons(
    model: Model, layer: int, factors: np.ndarray, log: "SymmetryOpLog | None" = None
) -> Model:
    """Multiply each neuron's input weights and bias by a positive factor and
    its output weights by the reciprocal. Valid only for ReLU or linear units."""
    pos, nxt_pos = _hidden_layer_positions(model, layer)
    factors = np.asarray(factors, dtype=np.float32)
    out = copy_model(model)
    cur, nxt = out.layers[pos], out.layers[nxt_pos]
    if cur.activation not in ("relu", "none"):
        raise ShapeError(f"rescaling needs ReLU or linear units, layer uses {cur.activation}")
    if factors.shape != (cur.out_size,):
        raise ShapeError(f"need {cur.out_size} factors, got {factors.shape}")
    if np.any(factors <= 0):
        raise ShapeError("rescale factors must be positive")
    _scale_in_out(cur, nxt, factors)
    if log is not None:
        log.append("rescale", layer, factors.tolist())
    return out


def flip_signs(
    model: Model, layer: int, signs: np.ndarray, log: "SymmetryOpLog | None" = None
) -> Model:
    """Multiply a tanh neuron's input weights, bias and output weights by -1."""
    pos, nxt_pos = _hidden_layer_positions(model, layer)
    signs = np.asarray(signs, dtype=np.float32)
    out = copy_model(model)
    cur, nxt = out.layers[pos], out.layers[nxt_pos]
    if cur.activation != "tanh":
        raise ShapeError(f"sign flips need tanh units, layer uses {cur.activation}")
    if signs.shape != (cur.out_size,):
        raise ShapeError(f"need {cur.out_size} signs, got {signs.shape}")
    if not np.all(np.abs(signs) == 1):
        raise ShapeError("signs must be +-1")
    _scale_in_out(cur, nxt, signs)
    if log is not None:
        log.append("flip", layer, signs.tolist())
    return out


def _scale_in_out(cur, nxt, factors: np.ndarray):
    shape = (-1,) + (1,) * (cur.w.ndim - 1)
    cur.w *= factors.reshape(shape)
    cur.b *= factors
    inv = (1.0 / factors).astype(np.float32)

    def write(view, axis):
        shape = [1] * view.ndim
        shape[axis] = -1
        view *= inv.reshape(shape)

    _scatter_input_side(cur, nxt, write)


@dataclass
class SymmetryOpLog:
    """Replayable audit trail of applied transforms."""

    entries: list = field(default_factory=list)

    def append(self, kind: str, layer: int, params: list):
        self.entries.append((kind, int(layer), list(params)))

    def replay(self, model: Model) -> Model:
        out = model
        for kind, layer, params in self.entries:
            if kind == "permute":
                out = permute_layer(out, layer, Permutation(np.asarray(params, dtype=np.int64)))
            elif kind == "rescale":
                out = rescale_neurons(out, layer, np.asarray(params, dtype=np.float32))
            elif kind == "flip":
                out = flip_signs(out, layer, np.asarray(params, dtype=np.float32))
            else:
                raise ShapeError(f"unknown symmetry op {kind!r}")
        return out

    def to_text(self) -> str:
        lines = []
        for kind, layer, params in self.entries:
            if kind == "permute":
                body = ",".join(str(int(p)) for p in params)
            else:
                body = ",".join(repr(float(p)) for p in params)
            lines.append(f"{kind} {layer} {body}")
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def from_text(cls, text: str) -> "SymmetryOpLog":
        log = cls()
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            kind, layer, body = line.split(" ", 2)
            if kind == "permute":
                params = [int(p) for p in body.split(",")]
            else:
                params = [float(p) for p in body.split(",")]
            log.append(kind, int(layer), params)
        return log
