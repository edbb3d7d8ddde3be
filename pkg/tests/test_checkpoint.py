import struct

import numpy as np
import pytest

from wqimpute import checkpoint as CK
from wqimpute import cp, metrics
from wqimpute.data import SplitSpec, normalize, split_entries
from wqimpute.errors import CheckpointError
from wqimpute.training import TrainConfig, train_nlr


def _trained(tmp_path, model_kind, seed=0):
    dims = (6, 3, 12)
    tensor, _ = metrics.synth_generate(dims, rank=2, observed_fraction=0.6,
                                       noise=0.01, nonlinear=True, seed=seed)
    spec = SplitSpec(ratios=(6, 2, 2), seed=seed)
    split = split_entries(tensor, spec)
    norm, scaler = normalize(tensor, split)
    train = norm.entries(split.train)
    val = norm.entries(split.val)
    if model_kind == "cp":
        cfg = TrainConfig(rank=3, learning_rate=0.05, epochs=5, tolerance=0.0,
                          batch_size=32, optimizer="sgd", seed=seed)
        model, trace = cp.cp_train(train, val, dims, cfg)
    else:
        cfg = TrainConfig(rank=7, window=2, channels=(2, 2, 2),
                          learning_rate=1e-2, epochs=5, tolerance=0.0,
                          batch_size=32, seed=seed)
        model, trace = train_nlr(train, val, dims, cfg)
    ckpt = CK.checkpoint_from_training(model_kind, model, norm, cfg, spec,
                                       scaler, trace)
    path = tmp_path / f"{model_kind}.ckpt"
    CK.save_checkpoint(ckpt, path)
    return ckpt, path, norm


@pytest.mark.parametrize("model_kind", ["cp", "nlr-cnn"])
def test_save_load_roundtrip(tmp_path, model_kind):
    ckpt, path, _ = _trained(tmp_path, model_kind)
    loaded = CK.load_checkpoint(path)
    assert loaded.model_kind == model_kind
    assert loaded.dims == ckpt.dims
    assert loaded.config == ckpt.config
    assert loaded.split == ckpt.split
    assert loaded.station_ids == ckpt.station_ids
    assert loaded.parameter_names == ckpt.parameter_names
    assert loaded.time_stamps == ckpt.time_stamps
    assert loaded.trace_summary == ckpt.trace_summary
    assert np.array_equal(loaded.scaler.mins, ckpt.scaler.mins)
    for name, arr in ckpt.arrays.items():
        assert np.array_equal(loaded.arrays[name], arr), name


@pytest.mark.parametrize("model_kind", ["cp", "nlr-cnn"])
def test_save_of_loaded_checkpoint_is_byte_identical(tmp_path, model_kind):
    _, path, _ = _trained(tmp_path, model_kind)
    loaded = CK.load_checkpoint(path)
    again = tmp_path / "again.ckpt"
    CK.save_checkpoint(loaded, again)
    assert path.read_bytes() == again.read_bytes()


def test_rebuilt_model_predicts_identically(tmp_path):
    ckpt, path, norm = _trained(tmp_path, "nlr-cnn")
    loaded = CK.load_checkpoint(path)
    model = loaded.build_model()
    e = norm.entries()
    a = model.predict_batch(e.i, e.j, e.k)
    b = loaded.build_model().predict_batch(e.i, e.j, e.k)
    assert np.array_equal(a, b)
    assert model.cnn.use_pool == (loaded.config.rank >= 10)

    cp_ckpt, cp_path, _ = _trained(tmp_path, "cp")
    cp_model = CK.load_checkpoint(cp_path).build_model()
    assert np.array_equal(cp_model.S, cp_ckpt.arrays["S"])


def test_version_mismatch_rejected(tmp_path):
    _, path, _ = _trained(tmp_path, "cp")
    raw = bytearray(path.read_bytes())
    raw[4:8] = struct.pack("<I", 99)
    bad = tmp_path / "v99.ckpt"
    bad.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="unsupported checkpoint version 99"):
        CK.load_checkpoint(bad)


def test_bad_magic_rejected(tmp_path):
    p = tmp_path / "junk.ckpt"
    p.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(CheckpointError, match="bad magic"):
        CK.load_checkpoint(p)


def test_truncated_file_rejected(tmp_path):
    _, path, _ = _trained(tmp_path, "cp")
    raw = path.read_bytes()
    for cut in (4, 12, len(raw) - 5):
        p = tmp_path / f"cut{cut}.ckpt"
        p.write_bytes(raw[:cut])
        with pytest.raises(CheckpointError, match="truncated"):
            CK.load_checkpoint(p)


def test_trailing_garbage_rejected(tmp_path):
    _, path, _ = _trained(tmp_path, "cp")
    p = tmp_path / "trail.ckpt"
    p.write_bytes(path.read_bytes() + b"\x00" * 8)
    with pytest.raises(CheckpointError, match="trailing"):
        CK.load_checkpoint(p)


def test_corrupt_header_rejected(tmp_path):
    _, path, _ = _trained(tmp_path, "cp")
    raw = bytearray(path.read_bytes())
    raw[20] = 0xFF  # stomp on the JSON header
    p = tmp_path / "hdr.ckpt"
    p.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError):
        CK.load_checkpoint(p)


def test_save_refuses_incomplete_sections(tmp_path):
    ckpt, _, _ = _trained(tmp_path, "nlr-cnn")
    del ckpt.arrays["conv2_k"]
    with pytest.raises(CheckpointError, match="missing sections"):
        CK.save_checkpoint(ckpt, tmp_path / "x.ckpt")


def test_unknown_model_kind_rejected(tmp_path):
    ckpt, _, _ = _trained(tmp_path, "cp")
    ckpt.model_kind = "mystery"
    with pytest.raises(CheckpointError, match="unknown model kind"):
        CK.save_checkpoint(ckpt, tmp_path / "x.ckpt")
    with pytest.raises(CheckpointError, match="unknown model kind"):
        ckpt.build_model()


def test_float_fields_survive_json_exactly(tmp_path):
    ckpt, path, _ = _trained(tmp_path, "nlr-cnn", seed=3)
    loaded = CK.load_checkpoint(path)
    assert loaded.trace_summary["best_val_rmse"] == ckpt.trace_summary["best_val_rmse"]
    assert loaded.config.learning_rate == ckpt.config.learning_rate
    assert loaded.config.tolerance == ckpt.config.tolerance
