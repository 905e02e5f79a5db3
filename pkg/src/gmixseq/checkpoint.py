"""Binary model checkpoints.

Layout (integers little-endian)::

    b"GMXC" | u32 version | u64 header_len | header (UTF-8 JSON)
    payload: float64 LE tensors, concatenated in header order
    sha256 digest (32 bytes) of everything before it

The header records the model kind and config, seed, training-step counter,
one entry per tensor (name, shape) and, when present, the Adam
hyperparameters. Adam's moment buffers are stored as tensors named
``adam.m.<param>`` / ``adam.v.<param>``.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np

from . import gmeg, nfmg
from .nn import Adam

MAGIC = b"GMXC"
VERSION = 1
_DIGEST = 32


class CheckpointError(ValueError):
    pass


_KINDS = {
    "gmeg": (gmeg.GmegModel, gmeg.GmegConfig),
    "nfmg": (nfmg.NfmgModel, nfmg.NfmgConfig),
}


def to_bytes(model, step: int | None = None) -> bytes:
    if model.kind not in _KINDS:
        raise CheckpointError(f"unknown model kind {model.kind!r}")
    named = list(model.named_parameters())
    tensors = [(name, p.data) for name, p in named]
    opt = getattr(model, "optimizer", None)
    opt_head = None
    if opt is not None:
        opt_head = {"lr": opt.lr, "betas": list(opt.betas), "eps": opt.eps, "t": opt.t}
        tensors += [(f"adam.m.{name}", m) for (name, _), m in zip(named, opt.m)]
        tensors += [(f"adam.v.{name}", v) for (name, _), v in zip(named, opt.v)]
    if step is None:
        step = opt.t if opt is not None else getattr(model, "step", 0)
    header = {
        "kind": model.kind,
        "config": model.cfg.to_dict(),
        "seed": model.cfg.seed,
        "step": int(step),
        "optimizer": opt_head,
        "tensors": [{"name": n, "shape": list(a.shape)} for n, a in tensors],
    }
    head = json.dumps(header, sort_keys=True).encode()
    body = b"".join([MAGIC, struct.pack("<IQ", VERSION, len(head)), head]
                    + [np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in tensors])
    return body + hashlib.sha256(body).digest()


def read_header(buf: bytes) -> dict:
    """Validate magic, version and checksum; return the parsed header."""
    if len(buf) < 16 + _DIGEST or buf[:4] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic or too short)")
    body, digest = buf[:-_DIGEST], buf[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checksum mismatch: file is corrupt or truncated")
    version, head_len = struct.unpack_from("<IQ", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    try:
        return json.loads(body[16:16 + head_len])
    except ValueError as exc:
        raise CheckpointError(f"unreadable checkpoint header: {exc}") from exc


def from_bytes(buf: bytes, kind: str | None = None):
    header = read_header(buf)
    if kind is not None and header["kind"] != kind:
        raise CheckpointError(f"checkpoint holds a {header['kind']} model, expected {kind}")
    if header["kind"] not in _KINDS:
        raise CheckpointError(f"unknown model kind {header['kind']!r}")
    model_cls, cfg_cls = _KINDS[header["kind"]]
    model = model_cls(cfg_cls(**header["config"]))

    _, head_len = struct.unpack_from("<IQ", buf, 4)
    offset = 16 + head_len
    end = len(buf) - _DIGEST
    arrays = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape, dtype=np.int64)) * 8
        if offset + n > end:
            raise CheckpointError("payload shorter than the tensor index")
        arrays[entry["name"]] = np.frombuffer(buf, dtype="<f8", count=n // 8, offset=offset) \
            .reshape(shape).astype(np.float64)
        offset += n
    if offset != end:
        raise CheckpointError("payload longer than the tensor index")

    named = list(model.named_parameters())
    missing = [name for name, _ in named if name not in arrays]
    if missing:
        raise CheckpointError(f"checkpoint lacks parameters: {missing[:3]}")
    for name, p in named:
        if arrays[name].shape != p.data.shape:
            raise CheckpointError(f"shape mismatch for {name}: {arrays[name].shape} vs {p.data.shape}")
        p.data = arrays[name]

    opt_head = header.get("optimizer")
    if opt_head is not None:
        opt = Adam([p for _, p in named], lr=opt_head["lr"], betas=tuple(opt_head["betas"]),
                   eps=opt_head["eps"])
        opt.t = opt_head["t"]
        opt.m = [arrays[f"adam.m.{name}"] for name, _ in named]
        opt.v = [arrays[f"adam.v.{name}"] for name, _ in named]
        model.optimizer = opt
    model.step = header["step"]
    return model


def save(model, path, step: int | None = None) -> None:
    """Write atomically: a crash mid-write leaves any previous file intact."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(to_bytes(model, step))
    os.replace(tmp, path)


def load(path, kind: str | None = None):
    return from_bytes(Path(path).read_bytes(), kind)


def inspect(path) -> dict:
    header = read_header(Path(path).read_bytes())
    n_params = sum(int(np.prod(t["shape"], dtype=np.int64)) for t in header["tensors"]
                   if not t["name"].startswith("adam."))
    return {"kind": header["kind"], "version": VERSION, "seed": header["seed"], "step": header["step"],
            "n_tensors": len(header["tensors"]), "n_params": n_params,
            "has_optimizer": header["optimizer"] is not None, "config": header["config"]}
