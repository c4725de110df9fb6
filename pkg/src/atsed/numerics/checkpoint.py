"""Little-endian binary checkpoint format.

Layout::

    magic      4 bytes  b"ATSD"
    version    uint32   (currently 1)
    count      uint32   number of entries
    per entry:
        name_len  uint32
        name      name_len bytes, UTF-8
        rank      uint32
        dims      rank x uint32
        payload   prod(dims) x float32

Model checkpoints additionally get a JSON sidecar (``<path>.json``) echoing
the architecture and the entry names/shapes so that loads can be checked.
"""

from __future__ import annotations

import hashlib
import json
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"ATSD"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_arrays(path, arrays: Mapping[str, np.ndarray]) -> None:
    parts = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for name, value in arrays.items():
        value = np.asarray(value)
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", value.ndim))
        parts.append(struct.pack(f"<{value.ndim}I", *value.shape))
        parts.append(np.ascontiguousarray(value, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_arrays(path) -> "OrderedDict[str, np.ndarray]":
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {buf[:4]!r}")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    pos = 12
    out = OrderedDict()
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            name = buf[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", buf, pos)
            pos += 4 * rank
            size = int(np.prod(dims)) if rank else 1
            value = np.frombuffer(buf, dtype="<f4", count=size, offset=pos).reshape(dims)
            pos += 4 * size
            out[name] = value.astype(np.float64)
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated checkpoint") from exc
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes")
    return out


def _layout_digest(arrays: Mapping[str, np.ndarray]) -> str:
    text = ";".join(f"{k}:{tuple(np.shape(v))}" for k, v in arrays.items())
    return hashlib.sha256(text.encode()).hexdigest()


def save_model(path, model, architecture: dict) -> None:
    state = model.state_dict()
    save_arrays(path, state)
    sidecar = {"architecture": architecture, "layout_sha256": _layout_digest(state),
               "entries": {k: list(np.shape(v)) for k, v in state.items()}}
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=1, sort_keys=True))


def read_architecture(path) -> dict:
    side = Path(str(path) + ".json")
    if not side.exists():
        raise CheckpointError(f"{path}: missing architecture sidecar {side.name}")
    return json.loads(side.read_text())["architecture"]


def load_model(path, model) -> None:
    """Load weights into ``model`` after checking the sidecar layout digest."""
    state = load_arrays(path)
    side = Path(str(path) + ".json")
    if side.exists():
        meta = json.loads(side.read_text())
        if meta["layout_sha256"] != _layout_digest(state):
            raise CheckpointError(f"{path}: payload does not match its sidecar layout")
    if _layout_digest(state) != _layout_digest(model.state_dict()):
        raise CheckpointError(f"{path}: checkpoint layout does not match the model architecture")
    model.load_state_dict(state)


def import_pretrained(path, model, prefix_map: Mapping[str, str] | None = None, strict: bool = False) -> list:
    """Copy matching entries from a checkpoint in this format into ``model``.

    Names are optionally rewritten through ``prefix_map``. Entries whose name
    or shape does not match are skipped; the list of loaded names is returned.
    """
    state = load_arrays(path)
    if prefix_map:
        renamed = OrderedDict()
        for k, v in state.items():
            for old, new in prefix_map.items():
                if k.startswith(old):
                    k = new + k[len(old):]
                    break
            renamed[k] = v
        state = renamed
    own = model.state_dict()
    usable = OrderedDict((k, v) for k, v in state.items() if k in own and np.shape(own[k]) == v.shape)
    if strict and len(usable) != len(own):
        raise CheckpointError(f"{path}: only {len(usable)} of {len(own)} entries match")
    model.load_state_dict(usable, strict=False)
    return list(usable)
