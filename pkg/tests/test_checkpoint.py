import struct

import json
import numpy as np
import pytest
import torch
import torch.nn as nn

from voin.checkpoint import (MAGIC, CheckpointError, load_checkpoint,
                             load_into, save_checkpoint)


def _net(seed, bias=True):
    torch.manual_seed(seed)
    return nn.Linear(3, 2, bias=bias)


def test_round_trip(tmp_path):
    path = tmp_path / "a.ckpt"
    src = _net(0)
    save_checkpoint(path, {"net": src}, meta={"step": 7, "seed": 12})
    dst = _net(1)
    meta = load_into(path, {"net": dst})
    assert meta == {"step": 7, "seed": 12}
    for k, v in src.state_dict().items():
        assert torch.equal(dst.state_dict()[k], v)


def test_plain_state_dict_round_trip(tmp_path, rng):
    path = tmp_path / "raw.ckpt"
    state = {"w": rng.random((2, 3)).astype(np.float32),
             "idx": np.arange(4, dtype=np.int64)}
    save_checkpoint(path, {"m": state})
    arrays, meta = load_checkpoint(path)
    assert meta == {}
    assert np.array_equal(arrays["m.w"], state["w"])
    assert np.array_equal(arrays["m.idx"], state["idx"])
    assert arrays["m.idx"].dtype == np.int64


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_unsupported_version(tmp_path):
    manifest = json.dumps({"version": 99, "meta": {}, "arrays": []}).encode()
    path = tmp_path / "v99.ckpt"
    path.write_bytes(MAGIC + struct.pack("<I", len(manifest)) + manifest)
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(path)


def test_truncated_payload(tmp_path):
    path = tmp_path / "cut.ckpt"
    save_checkpoint(path, {"net": _net(0)})
    blob = path.read_bytes()
    path.write_bytes(blob[:-3])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)


def test_missing_and_unexpected_arrays_named(tmp_path):
    path = tmp_path / "nb.ckpt"
    save_checkpoint(path, {"net": _net(0, bias=False)})
    with pytest.raises(CheckpointError, match=r"missing.*bias"):
        load_into(path, {"net": _net(1)})
    save_checkpoint(path, {"net": _net(0)})
    with pytest.raises(CheckpointError, match=r"unexpected.*bias"):
        load_into(path, {"net": _net(1, bias=False)})


def test_save_is_byte_deterministic(tmp_path):
    a, b = _net(3), _net(4)
    p1, p2 = tmp_path / "1.ckpt", tmp_path / "2.ckpt"
    save_checkpoint(p1, {"a": a, "b": b}, meta={"step": 1})
    save_checkpoint(p2, {"b": b, "a": a}, meta={"step": 1})
    assert p1.read_bytes() == p2.read_bytes()
