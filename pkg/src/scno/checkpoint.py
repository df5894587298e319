"""Checkpoint files: a JSON manifest of named tensors followed by float32 data.

Layout (little-endian)::

    8 bytes   magic b"SCNOCKPT"
    uint32    format version (1)
    uint32    manifest length in bytes
    manifest  UTF-8 JSON: kind, architecture, tag, steps, frozen flag,
              metadata and the ordered tensor list (name, shape, role)
    payload   every tensor as float32, concatenated in manifest order

Buffers (batch-norm running statistics, pinned decay logits) are stored
alongside parameters so a reload reproduces inference bit for bit.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .autodiff.tensor import default_dtype
from .composition import Aggregator, CorrectionNet
from .models import AnnDeepOnet, DeepOnetArch, SpikingDeepOnet

MAGIC = b"SCNOCKPT"
VERSION = 1
_PREFIX = struct.Struct("<8sII")
KINDS = ("block", "mono", "ann", "aggregator", "correction")


class CheckpointError(ValueError):
    pass


class CheckpointKindError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


def model_kind(model) -> str:
    if isinstance(model, SpikingDeepOnet):
        return "block" if model.tag is not None else "mono"
    if isinstance(model, AnnDeepOnet):
        return "ann"
    if isinstance(model, Aggregator):
        return "aggregator"
    if isinstance(model, CorrectionNet):
        return "correction"
    raise CheckpointKindError(f"cannot checkpoint {type(model).__name__}")


def _describe(model) -> dict:
    kind = model_kind(model)
    desc = {"kind": kind}
    if kind in ("block", "mono", "ann"):
        desc["arch"] = model.arch.to_dict()
        desc["frozen"] = bool(model.frozen)
        if kind == "block":
            desc["tag"] = model.tag
            desc["steps"] = model.arch.steps
        elif kind == "mono":
            desc["steps"] = model.arch.steps
    elif kind == "aggregator":
        desc["arch"] = dict(model.config)
        desc["tags"] = list(model.tags)
        desc["frozen"] = bool(model.frozen)
    else:
        desc["arch"] = dict(model.config)
        desc["frozen"] = not any(p.requires_grad for p in model.parameters())
    return desc


def save_checkpoint(model, path, meta: dict | None = None) -> str:
    """Write ``model`` to ``path``; returns the SHA-256 of the file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = _describe(model)
    manifest["meta"] = meta or {}
    tensors, chunks = [], []
    for role, items in (("param", model.named_parameters()), ("buffer", model.named_buffers())):
        for name, value in items:
            arr = np.asarray(value.data if hasattr(value, "data") and role == "param" else value)
            tensors.append({"name": name, "shape": list(arr.shape), "role": role})
            chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    manifest["tensors"] = tensors
    blob = json.dumps(manifest, sort_keys=True).encode()
    data = _PREFIX.pack(MAGIC, VERSION, len(blob)) + blob + b"".join(chunks)
    path.write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def read_manifest(path) -> tuple[dict, bytes]:
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size:
        raise CheckpointError(f"{path}: file too short for a checkpoint header")
    magic, version, mlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointVersionError(f"{path}: checkpoint version {version}, expected {VERSION}")
    try:
        manifest = json.loads(raw[_PREFIX.size:_PREFIX.size + mlen])
    except ValueError as exc:
        raise CheckpointError(f"{path}: unreadable manifest ({exc})") from None
    return manifest, raw[_PREFIX.size + mlen:]


def _build(manifest: dict):
    kind = manifest["kind"]
    rng = np.random.default_rng(0)  # weights are overwritten from the payload
    with default_dtype(np.float32):
        if kind in ("block", "mono"):
            model = SpikingDeepOnet(DeepOnetArch.from_dict(manifest["arch"]), rng,
                                    tag=manifest.get("tag"))
        elif kind == "ann":
            model = AnnDeepOnet(DeepOnetArch.from_dict(manifest["arch"]), rng)
        elif kind == "aggregator":
            arch = dict(manifest["arch"])
            model = Aggregator(manifest["tags"], arch.pop("m"), rng, **arch)
        elif kind == "correction":
            arch = dict(manifest["arch"])
            model = CorrectionNet(arch.pop("m"), rng, **arch)
        else:
            raise CheckpointKindError(f"unknown checkpoint kind {kind!r}")
    return model


def load_checkpoint(path, expected_kind: str | tuple[str, ...] | None = None):
    """Rebuild a model from ``path``.  ``expected_kind`` guards against mix-ups."""
    manifest, payload = read_manifest(path)
    kind = manifest.get("kind")
    if expected_kind is not None:
        allowed = (expected_kind,) if isinstance(expected_kind, str) else tuple(expected_kind)
        if kind not in allowed:
            raise CheckpointKindError(f"{path}: checkpoint holds a {kind!r}, expected {allowed}")
    model = _build(manifest)
    params = dict(model.named_parameters())
    buffers = dict(model.named_buffers())
    expected = {**{k: p.data.shape for k, p in params.items()},
                **{k: b.shape for k, b in buffers.items()}}
    listed = {t["name"]: tuple(t["shape"]) for t in manifest["tensors"]}
    if set(listed) != set(expected):
        raise CheckpointShapeError(f"{path}: tensor names do not match the architecture")
    total = sum(int(np.prod(s)) for s in listed.values()) * 4
    if len(payload) != total:
        raise CheckpointShapeError(f"{path}: payload has {len(payload)} bytes, manifest implies {total}")
    offset = 0
    for t in manifest["tensors"]:
        name, shape = t["name"], tuple(t["shape"])
        if shape != expected[name]:
            raise CheckpointShapeError(f"{path}: {name} has shape {shape}, architecture says "
                                       f"{expected[name]}")
        n = int(np.prod(shape))
        arr = np.frombuffer(payload, dtype="<f4", count=n, offset=offset).reshape(shape)
        offset += 4 * n
        if name in params:
            params[name].data[...] = arr
        else:
            buffers[name][...] = arr
    if manifest.get("frozen"):
        model.freeze()
    return model


def checkpoint_meta(path) -> dict:
    return read_manifest(path)[0].get("meta", {})
