import numpy as np
import pytest
import torch

from bgcrack.checkpoint import MAGIC, load_checkpoint, save_checkpoint
from bgcrack.decoder import BGCrack

from conftest import small_model_config


def test_roundtrip_preserves_tensors_and_config(tmp_path):
    torch.manual_seed(0)
    model = BGCrack(small_model_config())
    config = {"model": model.cfg.to_dict(), "note": "roundtrip"}
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, model.state_dict(), config)

    state, loaded_config = load_checkpoint(path)
    assert loaded_config == config
    original = model.state_dict()
    assert set(state) == set(original)
    for name, tensor in original.items():
        assert state[name].dtype == tensor.dtype, name
        assert torch.equal(state[name], tensor), name


def test_roundtrip_loads_back_into_model(tmp_path):
    torch.manual_seed(1)
    model = BGCrack(small_model_config())
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, model.state_dict(), {"model": model.cfg.to_dict()})

    torch.manual_seed(2)
    other = BGCrack(small_model_config())
    state, _ = load_checkpoint(path)
    other.load_state_dict(state, strict=True)
    x = torch.rand(1, 3, 64, 64)
    model.eval(), other.eval()
    assert torch.equal(model(x).prob_body, other(x).prob_body)


def test_state_mismatch_is_an_error(tmp_path):
    torch.manual_seed(3)
    ablated = BGCrack(small_model_config(use_edge=False))
    path = tmp_path / "ablated.ckpt"
    save_checkpoint(path, ablated.state_dict(), {"model": ablated.cfg.to_dict()})
    state, _ = load_checkpoint(path)
    full = BGCrack(small_model_config())
    with pytest.raises(RuntimeError):
        full.load_state_dict(state, strict=True)


def test_rejects_foreign_files(tmp_path):
    path = tmp_path / "not_a_checkpoint.bin"
    path.write_bytes(b"PNG....definitely not" + b"\x00" * 32)
    with pytest.raises(ValueError):
        load_checkpoint(path)


def test_header_is_json_with_shapes(tmp_path):
    import json
    import struct

    path = tmp_path / "tiny.ckpt"
    state = {"weight": torch.arange(6, dtype=torch.float32).reshape(2, 3),
             "steps": torch.tensor(7, dtype=torch.int64)}
    save_checkpoint(path, state, {"k": "v"})
    raw = path.read_bytes()
    assert raw[:len(MAGIC)] == MAGIC
    (header_len,) = struct.unpack("<Q", raw[len(MAGIC):len(MAGIC) + 8])
    header = json.loads(raw[len(MAGIC) + 8:len(MAGIC) + 8 + header_len])
    assert header["config"] == {"k": "v"}
    assert header["tensors"]["weight"]["shape"] == [2, 3]
    assert header["tensors"]["weight"]["dtype"] == "float32"
    assert header["tensors"]["steps"]["dtype"] == "int64"
    payload = raw[len(MAGIC) + 8 + header_len:]
    begin, end = header["tensors"]["weight"]["offset"]
    np.testing.assert_array_equal(
        np.frombuffer(payload[begin:end], dtype=np.float32).reshape(2, 3),
        np.arange(6, dtype=np.float32).reshape(2, 3))
