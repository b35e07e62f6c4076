"""Binary tensor-map checkpoints.

Layout (all integers little-endian)::

    b"TKPZ" | version u32 | entry count u32
    per entry: name length u16 | UTF-8 name | rank u8 | dims u32 * rank | float32 payload

Model parameters are stored as ``param/<name>``, Adam moments as
``adam_m/<name>`` and ``adam_v/<name>``. Non-tensor state (step counter,
config snapshot) is a JSON document stored byte-per-float under
``meta/json``, so the whole file stays one uniform tensor map.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import IncompatibleCheckpoint

MAGIC = b"TKPZ"
VERSION = 1
META_KEY = "meta/json"


@dataclass
class Checkpoint:
    """Parameters, optimizer moments, step counter and a config snapshot."""

    params: dict
    adam_m: dict = field(default_factory=dict)
    adam_v: dict = field(default_factory=dict)
    step: int = 0
    config: dict = field(default_factory=dict)

    def to_entries(self) -> dict:
        entries = {}
        for prefix, group in (("param/", self.params), ("adam_m/", self.adam_m),
                              ("adam_v/", self.adam_v)):
            for name, arr in group.items():
                entries[prefix + name] = np.asarray(arr)
        meta = json.dumps({"step": int(self.step), "config": self.config},
                          sort_keys=True, separators=(",", ":")).encode("utf-8")
        entries[META_KEY] = np.frombuffer(meta, dtype=np.uint8).astype(np.float32)
        return entries

    @classmethod
    def from_entries(cls, entries: dict) -> "Checkpoint":
        if META_KEY not in entries:
            raise IncompatibleCheckpoint(f"missing {META_KEY} entry")
        meta = json.loads(entries[META_KEY].astype(np.uint8).tobytes().decode("utf-8"))
        groups = {"param/": {}, "adam_m/": {}, "adam_v/": {}}
        for key, arr in entries.items():
            for prefix, group in groups.items():
                if key.startswith(prefix):
                    group[key[len(prefix):]] = arr
        return cls(groups["param/"], groups["adam_m/"], groups["adam_v/"],
                   int(meta["step"]), meta.get("config", {}))


def encode_entries(entries: dict) -> bytes:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(entries))]
    for name, arr in entries.items():
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValueError(f"entry name too long: {name[:40]}...")
        arr = np.asarray(arr)
        if arr.ndim > 0xFF:
            raise ValueError(f"{name}: rank {arr.ndim} too large")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(chunks)


def decode_entries(buf: bytes) -> dict:
    if len(buf) < 12 or buf[:4] != MAGIC:
        raise IncompatibleCheckpoint("not a checkpoint file (bad magic)")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise IncompatibleCheckpoint(f"unsupported checkpoint version {version}")
    pos, entries = 12, {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", buf, pos)
            pos += 4 * rank
            size = int(np.prod(dims, dtype=np.int64))
            if pos + 4 * size > len(buf):
                raise IncompatibleCheckpoint(f"entry {name!r} truncated")
            arr = np.frombuffer(buf, dtype="<f4", count=size, offset=pos)
            entries[name] = arr.reshape(dims).astype(np.float32)
            pos += 4 * size
    except struct.error as exc:
        raise IncompatibleCheckpoint(f"truncated checkpoint: {exc}") from None
    if pos != len(buf):
        raise IncompatibleCheckpoint(f"{len(buf) - pos} trailing bytes after last entry")
    return entries


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    atomic_write_bytes(path, encode_entries(ckpt.to_entries()))


def load_checkpoint(path) -> Checkpoint:
    return Checkpoint.from_entries(decode_entries(Path(path).read_bytes()))


def check_compatible(ckpt: Checkpoint, shapes: dict, where: Optional[str] = None) -> None:
    """Raise ``IncompatibleCheckpoint`` unless the parameter names and shapes match exactly."""
    where = f" ({where})" if where else ""
    missing = sorted(set(shapes) - set(ckpt.params))
    extra = sorted(set(ckpt.params) - set(shapes))
    if missing or extra:
        raise IncompatibleCheckpoint(
            f"parameter names differ{where}: missing {missing[:5]}, unexpected {extra[:5]}"
        )
    for name, shape in shapes.items():
        if tuple(ckpt.params[name].shape) != tuple(shape):
            raise IncompatibleCheckpoint(
                f"{name}{where}: checkpoint shape {ckpt.params[name].shape}, model expects {shape}"
            )
