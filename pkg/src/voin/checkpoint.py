"""Single-file binary checkpoints.

Layout: magic, little-endian u32 manifest length, JSON manifest, then the
raw array payload. The manifest lists every array's name, shape, dtype and
byte offset, so files are self-describing and diffable with a hex dump.
"""

import json
import struct

import numpy as np
import torch

MAGIC = b"VCKP"
VERSION = 1


class CheckpointError(Exception):
    pass


def _collect_arrays(modules):
    arrays = {}
    for mod_name, module in modules.items():
        state = module.state_dict() if hasattr(module, "state_dict") else module
        for key, value in state.items():
            if isinstance(value, torch.Tensor):
                value = value.detach().cpu().numpy()
            arrays["%s.%s" % (mod_name, key)] = np.asarray(value)
    return arrays


def save_checkpoint(path, modules, meta=None):
    """modules: dict of name -> nn.Module (or plain state dict)."""
    arrays = _collect_arrays(modules)
    entries = []
    payload = bytearray()
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        raw = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        entries.append({"name": name, "shape": list(arr.shape),
                        "dtype": str(arr.dtype), "offset": len(payload),
                        "size": len(raw)})
        payload.extend(raw)
    manifest = json.dumps({"version": VERSION, "meta": meta or {},
                           "arrays": entries}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(manifest)))
        fh.write(manifest)
        fh.write(payload)


def load_checkpoint(path):
    """Returns (dict name -> np array, meta dict)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise CheckpointError("%s: bad checkpoint magic %r" % (path, blob[:4]))
    (mlen,) = struct.unpack("<I", blob[4:8])
    manifest = json.loads(blob[8:8 + mlen].decode())
    if manifest.get("version") != VERSION:
        raise CheckpointError("%s: unsupported version %r"
                              % (path, manifest.get("version")))
    base = 8 + mlen
    arrays = {}
    for e in manifest["arrays"]:
        start = base + e["offset"]
        raw = blob[start:start + e["size"]]
        if len(raw) != e["size"]:
            raise CheckpointError("%s: truncated payload for %s" % (path, e["name"]))
        dt = np.dtype(e["dtype"]).newbyteorder("<")
        arrays[e["name"]] = np.frombuffer(raw, dtype=dt).reshape(e["shape"]).copy()
    return arrays, manifest.get("meta", {})


def load_into(path, modules):
    """Restore each module's parameters; names must match exactly."""
    arrays, meta = load_checkpoint(path)
    for mod_name, module in modules.items():
        prefix = mod_name + "."
        state = {k[len(prefix):]: torch.from_numpy(v)
                 for k, v in arrays.items() if k.startswith(prefix)}
        want = set(module.state_dict().keys())
        have = set(state.keys())
        if want - have:
            raise CheckpointError("%s: missing arrays for %s: %s"
                                  % (path, mod_name, sorted(want - have)))
        if have - want:
            raise CheckpointError("%s: unexpected arrays for %s: %s"
                                  % (path, mod_name, sorted(have - want)))
        module.load_state_dict(state)
    return meta
