"""Single-file model checkpoints.

Layout, in order::

    offset 0   8 bytes   magic  b"BIMODEL\\0"
    offset 8   uint32 LE format version (currently 1)
    offset 12  uint32 LE header length N in bytes
    offset 16  N bytes   UTF-8 JSON header:
                           {"config": {...RunConfig fields...},
                            "vocab": {"words": [...], "tags": [...], "intents": [...]},
                            "tensors": [{"name": str, "shape": [int, ...]}, ...]}
    then       for each entry of "tensors", in header order, the tensor's
               values as little-endian IEEE-754 float32, row-major

Vocabulary lists are ordered by id. The file ends right after the last
tensor; any size mismatch is reported as corruption.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .config import RunConfig
from .data import Vocabulary
from .model import BiModel

MAGIC = b"BIMODEL\0"
VERSION = 1
_PREFIX = struct.Struct("<8sII")


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(model: BiModel, path) -> None:
    params = model.named_parameters()
    header = {
        "config": model.config.to_dict(),
        "vocab": model.vocab.to_dict(),
        "tensors": [{"name": k, "shape": list(p.shape)} for k, p in params.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(blob)))
        fh.write(blob)
        for p in params.values():
            fh.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
    tmp.replace(path)


def read_header(raw: bytes, source: str = "checkpoint") -> tuple[dict, int]:
    if len(raw) < _PREFIX.size:
        raise CheckpointError(f"checkpoint {source} is truncated")
    magic, version, n = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"checkpoint {source} has a bad magic number")
    if version != VERSION:
        raise CheckpointError(f"checkpoint {source} has format version {version}, this build reads {VERSION}")
    end = _PREFIX.size + n
    try:
        header = json.loads(raw[_PREFIX.size:end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"checkpoint {source} header is corrupt ({exc})") from None
    return header, end


def load_checkpoint(path) -> BiModel:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    header, offset = read_header(raw, str(path))
    try:
        config = RunConfig.from_mapping(header["config"])
        vocab = Vocabulary.from_dict(header["vocab"])
        entries = header["tensors"]
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"checkpoint {path} header is incomplete ({exc})") from None
    model = BiModel(config, vocab)
    state = {}
    for entry in entries:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        stop = offset + 4 * count
        if stop > len(raw):
            raise CheckpointError(f"checkpoint {path} is truncated inside tensor {entry['name']}")
        state[entry["name"]] = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(shape)
        offset = stop
    if offset != len(raw):
        raise CheckpointError(f"checkpoint {path} has {len(raw) - offset} trailing bytes")
    try:
        model.load_state_dict(state)
    except Exception as exc:
        raise CheckpointError(f"checkpoint {path} does not match its config: {exc}") from None
    return model
