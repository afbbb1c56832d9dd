"""Checkpoint container: a flat map of named arrays behind a JSON header.

Layout: 8-byte magic, little-endian uint64 header length, UTF-8 JSON header
(config echo plus per-tensor name/dtype/shape/offset), then the raw
little-endian array bytes.
"""

import json
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"BGCK0001"


def save_checkpoint(path, state_dict, config):
    tensors = {}
    chunks = []
    offset = 0
    for name, value in state_dict.items():
        arr = value.detach().cpu().numpy() if isinstance(value, torch.Tensor) else np.asarray(value)
        shape = list(arr.shape)  # before ascontiguousarray, which promotes 0-dim to 1-dim
        arr = np.ascontiguousarray(arr)
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        raw = arr.tobytes()
        tensors[name] = {"dtype": arr.dtype.name, "shape": shape,
                         "offset": [offset, offset + len(raw)]}
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"config": config, "tensors": tensors}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for raw in chunks:
            fh.write(raw)


def load_checkpoint(path):
    """Returns (state_dict of torch tensors, config dict)."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path} is not a checkpoint file")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        payload = fh.read()
    state = {}
    for name, meta in header["tensors"].items():
        begin, end = meta["offset"]
        arr = np.frombuffer(payload[begin:end], dtype=np.dtype(meta["dtype"]))
        state[name] = torch.from_numpy(arr.reshape(meta["shape"]).copy())
    return state, header["config"]
