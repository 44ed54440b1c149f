"""Parameter checkpoint files.

Layout (UTF-8 JSON, keys sorted, one document per file)::

    {
      "format": "trajgan-params",
      "version": 1,
      "meta": {...},                       # free-form, e.g. model config, epoch
      "params": {
        "<module>.<layer>.<matrix>": {"shape": [d0, d1, ...], "values": [row-major floats]},
        ...
      },
      "optimizers": {                      # optional Adam state per network
        "<network>": {"step": n, "lr": .., "beta1": .., "beta2": .., "eps": ..,
                      "m": {<param map>}, "v": {<param map>}}
      }
    }

Floats are written with the shortest repr that round-trips exactly, so a
save/load cycle is lossless and identical inputs give byte-identical files.
"""
from __future__ import annotations

import json

import numpy as np

from .optim import AdamState
from .tensor import UsageError

FORMAT = "trajgan-params"
VERSION = 1


class CheckpointError(UsageError):
    pass


def _encode_map(arrays):
    out = {}
    for name, a in arrays.items():
        arr = np.asarray(getattr(a, "data", a), dtype=np.float64)
        out[name] = {"shape": list(arr.shape), "values": arr.ravel().tolist()}
    return out


def _decode_map(block):
    out = {}
    for name, entry in block.items():
        shape = tuple(entry["shape"])
        vals = np.asarray(entry["values"], dtype=np.float64)
        if vals.size != int(np.prod(shape, dtype=np.int64)):
            raise CheckpointError(f"{name}: {vals.size} values do not fill shape {shape}")
        out[name] = vals.reshape(shape)
    return out


def dumps(params, meta=None, optimizers=None):
    doc = {"format": FORMAT, "version": VERSION, "meta": meta or {}, "params": _encode_map(params)}
    if optimizers:
        doc["optimizers"] = {
            net: {
                "step": st.step, "lr": st.lr, "beta1": st.beta1, "beta2": st.beta2, "eps": st.eps,
                "m": _encode_map(st.m), "v": _encode_map(st.v),
            }
            for net, st in optimizers.items()
        }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def save(path, params, meta=None, optimizers=None):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(params, meta, optimizers))


def loads(text):
    """Parse a checkpoint string into ``(params, meta, optimizers)``; params are ndarrays."""
    doc = json.loads(text)
    if doc.get("format") != FORMAT:
        raise CheckpointError(f"not a {FORMAT} file")
    if doc.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc.get('version')}")
    optimizers = {}
    for net, blk in doc.get("optimizers", {}).items():
        optimizers[net] = AdamState(
            lr=blk["lr"], beta1=blk["beta1"], beta2=blk["beta2"], eps=blk["eps"],
            step=blk["step"], m=_decode_map(blk["m"]), v=_decode_map(blk["v"]),
        )
    return _decode_map(doc["params"]), doc.get("meta", {}), optimizers


def load(path):
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())
