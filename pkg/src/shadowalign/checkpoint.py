"""Binary checkpoint container for models and datasets.

Layout, all integers little-endian:

    magic           8 bytes  b"SHDRALN1"
    version         u16      currently 1
    arch block      u32 length + UTF-8 JSON (layer descriptors, input shape,
                             class count, architecture id)
    tensor count    u32
    per tensor:     name (u16 length + UTF-8), dtype tag (4 bytes, b"f32 "
                    or b"i64 "), rank (u8), dims (u32 each), raw payload
    metadata block  u32 length + UTF-8 JSON (seeds, train-log digest, extras)

Model weights are always float32; the integer dtype exists for dataset labels
and record ids stored in the same container. Round-trips are bit-exact, and
malformed files fail with a CheckpointError describing the first bad field.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .data import LabeledDataset
from .errors import CheckpointError
from .nn.layers import Conv2D, Dense, Dropout, Flatten, MaxPool2D
from .nn.model import Model
from .rng import SeedBundle

MAGIC = b"SHDRALN1"
VERSION = 1
_DTYPES = {b"f32 ": np.dtype("<f4"), b"i64 ": np.dtype("<i8")}
_TAGS = {v: k for k, v in _DTYPES.items()}


def _layer_descriptor(layer) -> dict:
    if isinstance(layer, Dense):
        return {"kind": "dense", "activation": layer.activation, "shape": list(layer.w.shape)}
    if isinstance(layer, Conv2D):
        return {
            "kind": "conv2d",
            "activation": layer.activation,
            "shape": list(layer.w.shape),
            "stride": layer.stride,
            "padding": layer.padding,
        }
    if isinstance(layer, MaxPool2D):
        return {"kind": "maxpool2d", "size": layer.size}
    if isinstance(layer, Flatten):
        return {"kind": "flatten"}
    if isinstance(layer, Dropout):
        return {"kind": "dropout", "p": layer.p}
    raise CheckpointError(f"cannot serialise layer type {type(layer).__name__}")


def _layer_from_descriptor(desc: dict):
    kind = desc["kind"]
    if kind == "dense":
        shape = desc["shape"]
        return Dense(
            w=np.zeros(shape, dtype=np.float32),
            b=np.zeros(shape[0], dtype=np.float32),
            activation=desc["activation"],
        )
    if kind == "conv2d":
        shape = desc["shape"]
        return Conv2D(
            w=np.zeros(shape, dtype=np.float32),
            b=np.zeros(shape[0], dtype=np.float32),
            activation=desc["activation"],
            stride=desc["stride"],
            padding=desc["padding"],
        )
    if kind == "maxpool2d":
        return MaxPool2D(desc["size"])
    if kind == "flatten":
        return Flatten()
    if kind == "dropout":
        return Dropout(desc["p"])
    raise CheckpointError(f"unknown layer kind {kind!r} in checkpoint")


def _write_block(out: list, payload: bytes):
    out.append(struct.pack("<I", len(payload)))
    out.append(payload)


def _write_tensor(out: list, name: str, arr: np.ndarray):
    tag = _TAGS.get(arr.dtype.newbyteorder("<"))
    if tag is None:
        raise CheckpointError(f"unsupported tensor dtype {arr.dtype}")
    name_b = name.encode("utf-8")
    out.append(struct.pack("<H", len(name_b)))
    out.append(name_b)
    out.append(tag)
    out.append(struct.pack("<B", arr.ndim))
    for d in arr.shape:
        out.append(struct.pack("<I", d))
    out.append(np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes())


def _serialise(arch: dict, tensors: list, meta: dict) -> bytes:
    out: list = [MAGIC, struct.pack("<H", VERSION)]
    _write_block(out, json.dumps(arch, sort_keys=True).encode("utf-8"))
    out.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors:
        _write_tensor(out, name, arr)
    _write_block(out, json.dumps(meta, sort_keys=True).encode("utf-8"))
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"truncated checkpoint: unexpected end of file in {what}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u8(self, what):
        return struct.unpack("<B", self.take(1, what))[0]

    def u16(self, what):
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def block(self, what) -> bytes:
        return self.take(self.u32(what), what)

    def done(self):
        if self.pos != len(self.data):
            raise CheckpointError(f"{len(self.data) - self.pos} trailing bytes after checkpoint")


def _deserialise(data: bytes):
    r = _Reader(data)
    if r.take(8, "magic") != MAGIC:
        raise CheckpointError(f"bad magic: expected {MAGIC!r}")
    version = r.u16("version")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    try:
        arch = json.loads(r.block("architecture block").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"malformed architecture block: {exc}") from exc
    n_tensors = r.u32("tensor count")
    tensors = []
    for t in range(n_tensors):
        name = r.take(r.u16(f"tensor {t} name"), f"tensor {t} name").decode("utf-8")
        tag = r.take(4, f"tensor {t} dtype")
        if tag not in _DTYPES:
            raise CheckpointError(f"tensor {name!r}: unknown dtype tag {tag!r}")
        ndim = r.u8(f"tensor {t} rank")
        shape = tuple(r.u32(f"tensor {t} dims") for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        payload = r.take(count * _DTYPES[tag].itemsize, f"tensor {name!r} payload")
        arr = np.frombuffer(payload, dtype=_DTYPES[tag]).reshape(shape).copy()
        tensors.append((name, arr))
    try:
        meta = json.loads(r.block("metadata block").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"malformed metadata block: {exc}") from exc
    r.done()
    return arch, tensors, meta


def save_checkpoint(
    model: Model,
    seeds: SeedBundle | None,
    path: str,
    train_log_csv: str | None = None,
    extra_meta: dict | None = None,
):
    arch = {
        "arch_id": model.arch_id,
        "input_shape": list(model.input_shape),
        "num_classes": model.num_classes,
        "layers": [_layer_descriptor(l) for l in model.layers],
    }
    tensors = []
    for i, layer in enumerate(model.layers):
        if isinstance(layer, (Dense, Conv2D)):
            tensors.append((f"layer{i}.w", layer.w))
            tensors.append((f"layer{i}.b", layer.b))
    meta: dict = dict(extra_meta or {})
    if seeds is not None:
        meta["seeds"] = seeds.as_dict()
    if train_log_csv is not None:
        meta["train_log_sha256"] = hashlib.sha256(train_log_csv.encode("utf-8")).hexdigest()
    with open(path, "wb") as fh:
        fh.write(_serialise(arch, tensors, meta))


def load_checkpoint(path: str) -> tuple[Model, dict]:
    with open(path, "rb") as fh:
        data = fh.read()
    arch, tensors, meta = _deserialise(data)
    layers = [_layer_from_descriptor(d) for d in arch["layers"]]
    model = Model(
        layers,
        tuple(arch["input_shape"]),
        arch["num_classes"],
        arch_id=arch.get("arch_id", "custom"),
    )
    by_name = dict(tensors)
    for i, layer in enumerate(model.layers):
        if not isinstance(layer, (Dense, Conv2D)):
            continue
        for suffix, target in (("w", layer.w), ("b", layer.b)):
            name = f"layer{i}.{suffix}"
            if name not in by_name:
                raise CheckpointError(f"missing tensor {name!r}")
            arr = by_name[name]
            if arr.shape != target.shape:
                raise CheckpointError(
                    f"tensor {name!r} shape {arr.shape} does not match architecture {target.shape}"
                )
            target[...] = arr
    return model, meta


def save_dataset(dataset: LabeledDataset, path: str):
    arch = {"kind": "dataset", "n_classes": dataset.n_classes, "x_shape": list(dataset.x.shape)}
    tensors = [
        ("x", dataset.x.astype("<f4")),
        ("y", dataset.y.astype("<i8")),
        ("ids", dataset.ids.astype("<i8")),
    ]
    with open(path, "wb") as fh:
        fh.write(_serialise(arch, tensors, {"kind": "dataset"}))


def load_dataset(path: str) -> LabeledDataset:
    with open(path, "rb") as fh:
        data = fh.read()
    arch, tensors, _meta = _deserialise(data)
    if arch.get("kind") != "dataset":
        raise CheckpointError("file does not contain a dataset")
    by_name = dict(tensors)
    for required in ("x", "y", "ids"):
        if required not in by_name:
            raise CheckpointError(f"dataset file missing tensor {required!r}")
    return LabeledDataset(
        x=by_name["x"].astype(np.float32),
        y=by_name["y"].astype(np.int64),
        ids=by_name["ids"].astype(np.int64),
        n_classes=int(arch["n_classes"]),
    )
