import struct

import numpy as np
import pytest

from fanet.checkpoint import MAGIC, load_checkpoint, save_checkpoint
from fanet.errors import ParseError


def test_roundtrip_bit_exact(tmp_path, rand64):
    tensors = {
        "stem.weight": rand64.rand(8, 3, 5, 5).astype(np.float32),
        "stage1.block0.ln1.gamma": rand64.rand(8).astype(np.float32),
        "scalar": np.float32(3.25).reshape(()),
    }
    path = tmp_path / "model.fant"
    save_checkpoint(path, tensors)
    loaded = load_checkpoint(path)
    assert list(loaded) == list(tensors)
    for name in tensors:
        assert loaded[name].dtype == np.float32
        assert np.array_equal(loaded[name], tensors[name])
    # writing again produces byte-identical files
    again = tmp_path / "model2.fant"
    save_checkpoint(again, tensors)
    assert path.read_bytes() == again.read_bytes()


def test_header_layout(tmp_path):
    path = tmp_path / "one.fant"
    save_checkpoint(path, {"w": np.array([1.0, 2.0], dtype=np.float32)})
    raw = path.read_bytes()
    assert raw[:4] == MAGIC
    version, count = struct.unpack("<II", raw[4:12])
    assert version == 1 and count == 1
    (name_len,) = struct.unpack("<H", raw[12:14])
    assert raw[14 : 14 + name_len] == b"w"
    assert raw[15] == 1  # rank
    (dim,) = struct.unpack("<I", raw[16:20])
    assert dim == 2
    assert np.frombuffer(raw[20:], dtype="<f4").tolist() == [1.0, 2.0]


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.fant"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(ParseError, match="magic"):
        load_checkpoint(path)


def test_truncated_payload_reports_offset(tmp_path):
    path = tmp_path / "trunc.fant"
    save_checkpoint(path, {"w": np.arange(10, dtype=np.float32)})
    raw = path.read_bytes()
    path.write_bytes(raw[:-8])
    with pytest.raises(ParseError, match="offset"):
        load_checkpoint(path)


def test_trailing_garbage_rejected(tmp_path):
    path = tmp_path / "extra.fant"
    save_checkpoint(path, {"w": np.arange(4, dtype=np.float32)})
    path.write_bytes(path.read_bytes() + b"xx")
    with pytest.raises(ParseError, match="trailing"):
        load_checkpoint(path)
