"""Named-tensor archive: a text header followed by raw little-endian tensor data.

Layout::

    hmerkit-checkpoint 1
    config-sha256 <hex>
    section config <nbytes>
    section vocab <nbytes>
    section meta <nbytes>
    tensor <name> <dtype> <d0>x<d1>...   (one line per tensor, "scalar" for 0-d)
    end
    <config bytes><vocab bytes><meta bytes><tensor bytes in header order>
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CorruptRecord, IoFailure

MAGIC = "hmerkit-checkpoint 1"
_DTYPES = {"f4": np.dtype("<f4"), "f8": np.dtype("<f8"), "i8": np.dtype("<i8")}


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    config_text: str = ""
    vocab_text: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.config_text.encode()).hexdigest()


def _code(arr: np.ndarray) -> str:
    for code, dt in _DTYPES.items():
        if arr.dtype == dt.newbyteorder("="):
            return code
    raise TypeError(f"unsupported tensor dtype {arr.dtype}")


def save(ckpt: Checkpoint, path: str | Path) -> None:
    sections = [("config", ckpt.config_text.encode()), ("vocab", ckpt.vocab_text.encode()),
                ("meta", json.dumps(ckpt.meta, sort_keys=True).encode())]
    lines = [MAGIC, f"config-sha256 {ckpt.config_hash}"]
    lines += [f"section {name} {len(blob)}" for name, blob in sections]
    payload = [blob for _, blob in sections]
    for name, arr in ckpt.tensors.items():
        if any(c.isspace() for c in name):
            raise ValueError(f"tensor name {name!r} contains whitespace")
        arr = np.asarray(arr)
        code = _code(arr)
        shape = "x".join(map(str, arr.shape)) if arr.ndim else "scalar"
        lines.append(f"tensor {name} {code} {shape}")
        payload.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    lines.append("end")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(tmp, "wb") as fh:
            fh.write(("\n".join(lines) + "\n").encode())
            for blob in payload:
                fh.write(blob)
        tmp.replace(path)
    except OSError as exc:
        raise IoFailure(f"cannot write checkpoint {path}: {exc}") from exc


def load(path: str | Path) -> Checkpoint:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read checkpoint {path}: {exc}") from exc
    end = raw.find(b"\nend\n")
    if not raw.startswith(MAGIC.encode() + b"\n") or end < 0:
        raise CorruptRecord(f"{path}: not a checkpoint archive")
    header = raw[:end].decode().splitlines()
    offset = end + len(b"\nend\n")
    sections: dict[str, bytes] = {}
    tensors: dict[str, np.ndarray] = {}
    declared_hash = None
    for line in header[1:]:
        parts = line.split()
        try:
            if parts[0] == "config-sha256":
                declared_hash = parts[1]
            elif parts[0] == "section":
                n = int(parts[2])
                sections[parts[1]] = raw[offset : offset + n]
                offset += n
            elif parts[0] == "tensor":
                name, code, dims = parts[1], parts[2], parts[3]
                shape = () if dims == "scalar" else tuple(int(d) for d in dims.split("x"))
                dt = _DTYPES[code]
                n = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
                if offset + n > len(raw):
                    raise CorruptRecord(f"{path}: tensor {name} truncated")
                tensors[name] = np.frombuffer(raw, dtype=dt, count=n // dt.itemsize,
                                              offset=offset).reshape(shape).astype(dt.newbyteorder("="))
                offset += n
            else:
                raise CorruptRecord(f"{path}: unknown header line {line!r}")
        except (IndexError, KeyError, ValueError) as exc:
            raise CorruptRecord(f"{path}: bad header line {line!r}") from exc
    if offset != len(raw):
        raise CorruptRecord(f"{path}: {len(raw) - offset} trailing bytes")
    ckpt = Checkpoint(tensors, sections.get("config", b"").decode(), sections.get("vocab", b"").decode(),
                      json.loads(sections.get("meta", b"{}") or b"{}"))
    if declared_hash != ckpt.config_hash:
        raise CorruptRecord(f"{path}: config hash mismatch")
    return ckpt
