"""Checkpoint container: bit-exact round trips and rejection of bad files."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import max_output_deviation, random_inputs

from shadowalign.checkpoint import (
    MAGIC,
    load_checkpoint,
    load_dataset,
    save_checkpoint,
    save_dataset,
)
from shadowalign.data import SyntheticSpec, gen_synthetic
from shadowalign.errors import CheckpointError
from shadowalign.nn import build_cnn, build_mlp
from shadowalign.rng import SeedBundle, stream
from shadowalign.training import init_weights


def test_round_trip_bit_exact(tmp_path, mid_mlp):
    path = tmp_path / "m.ckpt"
    save_checkpoint(mid_mlp, SeedBundle(1, 2, 3), str(path), train_log_csv="epoch\n1\n")
    loaded, meta = load_checkpoint(str(path))
    for la, lb in zip(mid_mlp.layers, loaded.layers):
        if hasattr(la, "w"):
            np.testing.assert_array_equal(la.w, lb.w)
            np.testing.assert_array_equal(la.b, lb.b)
    assert meta["seeds"] == {"weight_init": 1, "batch_order": 2, "dropout": 3}
    assert len(meta["train_log_sha256"]) == 64


def test_round_trip_preserves_forward_outputs(tmp_path, small_cnn):
    path = tmp_path / "c.ckpt"
    save_checkpoint(small_cnn, None, str(path))
    loaded, _ = load_checkpoint(str(path))
    assert max_output_deviation(small_cnn, loaded, random_inputs(small_cnn, 20)) == 0.0


def test_double_round_trip_identical_bytes(tmp_path, mid_mlp):
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(mid_mlp, SeedBundle(4, 5, 6), str(p1))
    loaded, _ = load_checkpoint(str(p1))
    save_checkpoint(loaded, SeedBundle(4, 5, 6), str(p2))
    assert p1.read_bytes() == p2.read_bytes()


def test_bad_magic_rejected(tmp_path, mid_mlp):
    path = tmp_path / "m.ckpt"
    save_checkpoint(mid_mlp, None, str(path))
    data = bytearray(path.read_bytes())
    data[:8] = b"NOTMAGIC"
    path.write_bytes(bytes(data))
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(str(path))


def test_unknown_version_rejected(tmp_path, mid_mlp):
    path = tmp_path / "m.ckpt"
    save_checkpoint(mid_mlp, None, str(path))
    data = bytearray(path.read_bytes())
    data[8:10] = (9).to_bytes(2, "little")
    path.write_bytes(bytes(data))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(str(path))


@settings(max_examples=20, deadline=None)
@given(st.integers(20, 2000))
def test_truncation_always_detected(tmp_path_factory, cut):
    tmp = tmp_path_factory.mktemp("trunc")
    model = init_weights(build_mlp([4, 3], 2), 1)
    path = tmp / "m.ckpt"
    save_checkpoint(model, SeedBundle(1, 2, 3), str(path))
    data = path.read_bytes()
    cut = min(cut, len(data) - 1)
    path.write_bytes(data[:cut])
    with pytest.raises(CheckpointError):
        load_checkpoint(str(path))


def test_trailing_garbage_rejected(tmp_path, mid_mlp):
    path = tmp_path / "m.ckpt"
    save_checkpoint(mid_mlp, None, str(path))
    path.write_bytes(path.read_bytes() + b"extra")
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(str(path))


def test_shape_payload_mismatch_rejected(tmp_path, mid_mlp):
    path = tmp_path / "m.ckpt"
    save_checkpoint(mid_mlp, None, str(path))
    data = bytearray(path.read_bytes())
    # corrupt the first tensor's first dimension (u32 after name + dtype + rank)
    idx = data.find(b"layer0.w") + len("layer0.w") + 4 + 1
    data[idx : idx + 4] = (999).to_bytes(4, "little")
    path.write_bytes(bytes(data))
    with pytest.raises(CheckpointError):
        load_checkpoint(str(path))


def test_magic_bytes_value():
    assert MAGIC == b"SHDRALN1"


def test_dataset_round_trip(tmp_path):
    ds = gen_synthetic(SyntheticSpec("blobs", 3, 20, dim=5), stream(7))
    path = tmp_path / "d.bin"
    save_dataset(ds, str(path))
    loaded = load_dataset(str(path))
    np.testing.assert_array_equal(ds.x, loaded.x)
    np.testing.assert_array_equal(ds.y, loaded.y)
    np.testing.assert_array_equal(ds.ids, loaded.ids)
    assert loaded.n_classes == 3


def test_model_file_is_not_a_dataset(tmp_path, mid_mlp):
    path = tmp_path / "m.ckpt"
    save_checkpoint(mid_mlp, None, str(path))
    with pytest.raises(CheckpointError):
        load_dataset(str(path))
