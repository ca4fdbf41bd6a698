"""Checkpoint container: one JSON header line, then little-endian float32 params."""
from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np

from ..errors import ParseError
from .model import INIT_DESCRIPTION, LayerSpec, Model

MAGIC = "locunlearn-checkpoint"
FORMAT_VERSION = 1


def checkpoint_bytes(model: Model, seed=None, extra: dict | None = None) -> bytes:
    header = {
        "format": MAGIC,
        "version": FORMAT_VERSION,
        "architecture": model.architecture(),
        "seed": seed,
        "p": model.p,
        "init": INIT_DESCRIPTION,
        "dtype": "<f4",
    }
    if extra:
        header["extra"] = extra
    line = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return line + b"\n" + model.params.astype("<f4").tobytes()


def save_checkpoint(path, model: Model, seed=None, extra: dict | None = None) -> Path:
    """Write atomically (temp file + rename) and return the path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(checkpoint_bytes(model, seed, extra))
    os.replace(tmp, path)
    return path


def parse_checkpoint(raw: bytes):
    nl = raw.find(b"\n")
    if nl < 0:
        raise ParseError("checkpoint header not terminated", offset=len(raw))
    try:
        header = json.loads(raw[:nl])
    except json.JSONDecodeError as exc:
        raise ParseError(f"bad checkpoint header: {exc.msg}", offset=exc.pos) from None
    if header.get("format") != MAGIC:
        raise ParseError("not a locunlearn checkpoint", offset=0)
    if header.get("version") != FORMAT_VERSION:
        raise ParseError(f"unsupported checkpoint version {header.get('version')}", offset=0)
    payload = raw[nl + 1 :]
    p = header["p"]
    if len(payload) != 4 * p:
        raise ParseError(f"payload has {len(payload)} bytes, expected {4 * p}", offset=nl + 1)
    arch = header["architecture"]
    layers = [LayerSpec(**d) for d in arch["layers"]]
    params = np.frombuffer(payload, dtype="<f4").astype(np.float32)
    return Model(layers, arch["input_shape"], params), header


def load_checkpoint(path):
    """Return ``(model, header)``."""
    return parse_checkpoint(Path(path).read_bytes())


def model_digest(model: Model) -> str:
    """Content hash over architecture and parameter bytes."""
    return hashlib.sha256(checkpoint_bytes(model)).hexdigest()
