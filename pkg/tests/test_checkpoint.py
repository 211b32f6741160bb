import struct

import numpy as np
import pytest

from ampose.checkpoint import (
    FORMAT_VERSION,
    MAGIC,
    Checkpoint,
    CheckpointError,
    checkpoint_bytes,
    load_checkpoint,
    parse_checkpoint,
    save_checkpoint,
)
from ampose.model import build_model
from ampose.training import AdamState, TrainConfig, adam_step, make_checkpoint, restore


@pytest.fixture
def ckpt(tiny_model, rng):
    state = AdamState()
    for _ in range(2):
        adam_step(tiny_model.params, {k: rng.normal(size=v.shape) for k, v in tiny_model.params.items()}, state, 1e-3)
    return make_checkpoint(tiny_model, state, TrainConfig(epochs=2), {"epoch": 1, "batch": 0, "step": 2})


def test_round_trip_exact(ckpt, tmp_path):
    save_checkpoint(ckpt, tmp_path / "a.ckpt")
    back = load_checkpoint(tmp_path / "a.ckpt")
    for group in ("params", "adam_m", "adam_v"):
        a, b = getattr(ckpt, group), getattr(back, group)
        assert a.keys() == b.keys()
        for k in a:
            assert a[k].tobytes() == b[k].tobytes()
    assert back.adam_step == 2 and back.progress == ckpt.progress
    assert back.model_config == ckpt.model_config and back.train_config == ckpt.train_config


def test_save_load_save_byte_identical(ckpt, tmp_path):
    save_checkpoint(ckpt, tmp_path / "a.ckpt")
    save_checkpoint(load_checkpoint(tmp_path / "a.ckpt"), tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_restore_rebuilds_model(ckpt, tiny_model, rng):
    model, state, cfg = restore(parse_checkpoint(checkpoint_bytes(ckpt)))
    x = rng.normal(size=(5, 2))
    assert model.forward(x).tobytes() == tiny_model.forward(x).tobytes()
    assert state.step == 2 and cfg.epochs == 2


def test_float32_export_is_close(ckpt):
    back = parse_checkpoint(checkpoint_bytes(ckpt, "<f4"))
    for k, v in ckpt.params.items():
        np.testing.assert_allclose(back.params[k], v, rtol=1e-6, atol=1e-7)
    assert back.params[k].dtype == np.float64


def test_truncated_by_one_byte(ckpt, tmp_path):
    blob = checkpoint_bytes(ckpt)
    (tmp_path / "t.ckpt").write_bytes(blob[:-1])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(tmp_path / "t.ckpt")


@pytest.mark.parametrize("cut", [0, 5, 30])
def test_truncated_early(ckpt, cut):
    with pytest.raises(CheckpointError, match="truncated"):
        parse_checkpoint(checkpoint_bytes(ckpt)[:cut])


def test_version_mismatch(ckpt):
    blob = bytearray(checkpoint_bytes(ckpt))
    struct.pack_into("<I", blob, 8, FORMAT_VERSION + 1)
    with pytest.raises(CheckpointError, match="version"):
        parse_checkpoint(bytes(blob))


def test_digest_mismatch(ckpt):
    blob = bytearray(checkpoint_bytes(ckpt))
    blob[-3] ^= 0xFF
    with pytest.raises(CheckpointError, match="digest"):
        parse_checkpoint(bytes(blob))


def test_bad_magic(ckpt):
    blob = checkpoint_bytes(ckpt)
    with pytest.raises(CheckpointError, match="magic"):
        parse_checkpoint(b"NOTACKPT" + blob[len(MAGIC):])


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError, match="not found"):
        load_checkpoint(tmp_path / "none.ckpt")


def test_minimal_checkpoint(tiny_config):
    m = build_model(tiny_config)
    back = parse_checkpoint(checkpoint_bytes(Checkpoint(tiny_config.to_dict(), m.params)))
    assert back.adam_m == {} and back.adam_step == 0
