"""Checkpoint = directory with ``manifest.json`` and a flat little-endian fp64 ``params.bin``."""
import hashlib
import json
import os

import numpy as np

from .errors import LoadError, SchemaError

FORMAT = "kgae-checkpoint/1"
LOSS_CONVENTION = "cross-entropy mean over non-pad target tokens"


def save_checkpoint(path, params, meta=None):
    """Write ``params`` (name -> Tensor or array) plus free-form ``meta``."""
    os.makedirs(path, exist_ok=True)
    entries, offset = {}, 0
    with open(os.path.join(path, "params.bin"), "wb") as fh:
        for name, p in params.items():
            arr = np.ascontiguousarray(getattr(p, "data", p), dtype="<f8")
            fh.write(arr.tobytes())
            entries[name] = {"shape": list(arr.shape), "dtype": "<f8", "offset": offset}
            offset += arr.nbytes
    manifest = {"format": FORMAT, "loss_convention": LOSS_CONVENTION, "params": entries}
    manifest.update(meta or {})
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return manifest


def read_checkpoint(path):
    """(manifest, name -> ndarray)."""
    with open(os.path.join(path, "manifest.json")) as fh:
        manifest = json.load(fh)
    if manifest.get("format") != FORMAT:
        raise SchemaError(f"{path}: not a {FORMAT} checkpoint")
    blob = np.fromfile(os.path.join(path, "params.bin"), dtype=np.uint8)
    arrays = {}
    for name, e in manifest["params"].items():
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        start = e["offset"]
        arrays[name] = blob[start:start + 8 * n].view("<f8").reshape(e["shape"]).copy()
    return manifest, arrays


def load_into(params, arrays):
    """Copy ``arrays`` into the matching tensors; every parameter must be present."""
    missing = [k for k in params if k not in arrays]
    if missing:
        raise LoadError(missing)
    for name, p in params.items():
        if p.data.shape != arrays[name].shape:
            raise SchemaError(f"parameter {name}: checkpoint shape {arrays[name].shape} != model shape {p.data.shape}")
        p.data[...] = arrays[name]


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def checkpoint_digest(path):
    """Hash of the parameter blob and manifest together."""
    return hashlib.sha256((file_digest(os.path.join(path, "params.bin")) +
                           file_digest(os.path.join(path, "manifest.json"))).encode()).hexdigest()
