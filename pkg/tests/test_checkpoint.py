import numpy as np
import pytest

from pdrlm import model as M
from pdrlm.checkpoint import (CheckpointError, head_payload_size,
                              load_checkpoint, save_checkpoint,
                              strip_checkpoint)
from pdrlm.config import RunConfig, config_text
from pdrlm.optim import OptimizerState


def make_model(seed=0, tied=True):
    return M.init_params(11, (6, 6, 4), 4, np.random.default_rng(seed),
                         tied=tied)


def cfg_txt():
    return config_text(RunConfig(layer_dims=(6, 6, 4), emb_dim=4))


def test_round_trip_bitwise(tmp_path):
    params, head = make_model()
    opt = OptimizerState(lr=2.0, weight_decay=1e-6, clip=0.25, step=17,
                         val_history=[3.0, 2.5])
    path = tmp_path / "a.ckpt"
    save_checkpoint(path, cfg_txt(), params, head, opt)
    raw1 = path.read_bytes()

    data = load_checkpoint(path)
    assert data.config_txt == cfg_txt()
    assert data.optim["step"] == 17
    assert data.optim["val_history"] == [3.0, 2.5]
    for a, b in zip(params.all() + head.all(),
                    data.params.all() + data.head.all()):
        assert a.name == b.name and a.decay == b.decay
        np.testing.assert_array_equal(a.data, b.data)

    path2 = tmp_path / "b.ckpt"
    save_checkpoint(path2, data.config_txt, data.params, data.head,
                    data.optim)
    assert path2.read_bytes() == raw1


def test_untied_round_trip(tmp_path):
    params, head = make_model(tied=False)
    path = tmp_path / "u.ckpt"
    save_checkpoint(path, cfg_txt(), params, head)
    data = load_checkpoint(path)
    assert data.params.decoder is not None
    np.testing.assert_array_equal(data.params.decoder.data,
                                  params.decoder.data)


def test_corrupt_byte_fails_checksum(tmp_path):
    params, head = make_model()
    path = tmp_path / "a.ckpt"
    save_checkpoint(path, cfg_txt(), params, head)
    raw = bytearray(path.read_bytes())
    raw[len(raw) // 2] ^= 0x01
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="checksum"):
        load_checkpoint(path)


def test_truncated_file_rejected(tmp_path):
    params, head = make_model()
    path = tmp_path / "a.ckpt"
    save_checkpoint(path, cfg_txt(), params, head)
    path.write_bytes(path.read_bytes()[:40])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_version_mismatch_refused(tmp_path):
    import hashlib
    params, head = make_model()
    path = tmp_path / "a.ckpt"
    save_checkpoint(path, cfg_txt(), params, head)
    raw = bytearray(path.read_bytes())
    raw[6] = 99  # format version field, little-endian u32 after magic
    body = bytes(raw[:-32])
    path.write_bytes(body + hashlib.sha256(body).digest())
    with pytest.raises(CheckpointError, match="version 99"):
        load_checkpoint(path)


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "x.ckpt"
    path.write_bytes(b"NOTMAGIC" + b"\0" * 64)
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_strip_removes_head_and_is_idempotent(tmp_path):
    params, head = make_model()
    src = tmp_path / "full.ckpt"
    save_checkpoint(src, cfg_txt(), params, head)
    out1 = tmp_path / "s1.ckpt"
    out2 = tmp_path / "s2.ckpt"
    assert strip_checkpoint(src, out1) is True
    assert strip_checkpoint(out1, out2) is False  # already stripped
    assert out1.read_bytes() == out2.read_bytes()
    data = load_checkpoint(out1)
    assert data.head is None
    for a, b in zip(params.all(), data.params.all()):
        np.testing.assert_array_equal(a.data, b.data)


def test_stripped_file_smaller_by_exact_head_payload(tmp_path):
    params, head = make_model()
    src = tmp_path / "full.ckpt"
    out = tmp_path / "inf.ckpt"
    save_checkpoint(src, cfg_txt(), params, head)
    strip_checkpoint(src, out)
    delta = src.stat().st_size - out.stat().st_size
    assert delta == head_payload_size(head)


def test_load_stripped_signals_absent_head(tmp_path):
    params, head = make_model()
    src = tmp_path / "full.ckpt"
    out = tmp_path / "inf.ckpt"
    save_checkpoint(src, cfg_txt(), params, head)
    strip_checkpoint(src, out)
    assert load_checkpoint(out).head is None
    assert load_checkpoint(src).head is not None
