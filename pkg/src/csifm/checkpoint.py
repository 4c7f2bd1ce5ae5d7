"""Named-parameter checkpoint files.

Layout: magic (8 bytes), version (1 byte), little-endian u32 header length,
JSON header, then each array's float64 little-endian payload in header order.
The header echoes the config and carries a stage tag.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DependencyError, DimensionError, FormatError

CHECKPOINT_MAGIC = b"CSIFMCK\0"
CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    arrays: dict[str, np.ndarray]
    stage: str
    meta: dict = field(default_factory=dict)

    def subset(self, prefix: str) -> dict[str, np.ndarray]:
        """Arrays under ``prefix.`` with the prefix stripped."""
        n = len(prefix) + 1
        return {k[n:]: v for k, v in self.arrays.items() if k.startswith(prefix + ".")}

    def digest(self, prefix: str | None = None) -> str:
        items = self.arrays if prefix is None else self.subset(prefix)
        return params_digest(items)


def params_digest(arrays: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name], dtype="<f8")
        h.update(name.encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries = [[name, list(np.shape(a))] for name, a in ckpt.arrays.items()]
    header = json.dumps({"stage": ckpt.stage, "meta": ckpt.meta, "entries": entries},
                        sort_keys=True).encode()
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(bytes([CHECKPOINT_VERSION]))
        f.write(np.uint32(len(header)).astype("<u4").tobytes())
        f.write(header)
        for a in ckpt.arrays.values():
            f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    tmp.replace(path)
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise DependencyError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint file")
    version = raw[len(CHECKPOINT_MAGIC)]
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    off = len(CHECKPOINT_MAGIC) + 1
    hlen = int(np.frombuffer(raw, "<u4", 1, off)[0])
    off += 4
    header = json.loads(raw[off: off + hlen])
    off += hlen
    arrays = {}
    for name, shape in header["entries"]:
        n = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(raw, "<f8", n, off).reshape(shape).copy()
        off += 8 * n
    if off != len(raw):
        raise FormatError(f"{path}: trailing bytes after payload")
    return Checkpoint(arrays, header["stage"], header["meta"])


def prefixed(prefix: str, state: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {f"{prefix}.{k}": v for k, v in state.items()}


def check_shapes(expected: dict[str, tuple], found: dict[str, np.ndarray]) -> None:
    for name, shape in expected.items():
        if name in found and tuple(found[name].shape) != tuple(shape):
            raise DimensionError(
                f"{name}: checkpoint shape {tuple(found[name].shape)} vs config shape {tuple(shape)}")
