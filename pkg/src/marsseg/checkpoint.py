"""Self-describing binary checkpoints.

Layout (all integers little-endian)::

    b"MSEG"  version:u32
    config_len:u64  config text (canonical key = value form, UTF-8)
    4 tables, in order: model, optimizer, class_weights, state
        count:u64, then per tensor:
        name_len:u32  name  dtype:u8 (1=f32, 2=f64)  rank:u32  extents:u64*rank  raw values
    checksum:u64  (BLAKE2b-64 of every preceding byte)
"""

from __future__ import annotations

import hashlib
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List

import numpy as np

from .config import TrainConfig, from_text, to_text
from .errors import FormatError, IntegrityError
from .losses import ClassWeightState
from .optim import OptimState

MAGIC = b"MSEG"
VERSION = 1
TABLES = ("model", "optimizer", "class_weights", "state")
_DTYPE_CODES = {np.dtype("<f4"): 1, np.dtype("<f8"): 2}
_CODE_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}

Table = "OrderedDict[str, np.ndarray]"


@dataclass
class Checkpoint:
    config: TrainConfig
    model: "OrderedDict[str, np.ndarray]"
    optim: OptimState
    weight_state: ClassWeightState
    epoch: int = 0
    step: int = 0
    seed: int = 0
    history: Dict[str, np.ndarray] = field(default_factory=dict)
    version: int = VERSION

    @property
    def param_names(self) -> List[str]:
        return list(self.model)


def _checksum(data: bytes) -> bytes:
    return hashlib.blake2b(data, digest_size=8).digest()


def _encode_table(table: Table) -> bytes:
    parts = [struct.pack("<Q", len(table))]
    for name, arr in table.items():
        arr = np.asarray(arr)
        if arr.dtype.kind != "f":
            arr = arr.astype("<f8")
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        code = _DTYPE_CODES.get(arr.dtype)
        if code is None:
            raise FormatError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<BI", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise IntegrityError(f"checkpoint truncated: needed {n} bytes at offset {self.pos}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def table(self) -> Table:
        (count,) = self.unpack("<Q")
        out = OrderedDict()
        for _ in range(count):
            (name_len,) = self.unpack("<I")
            name = self.take(name_len).decode("utf-8")
            code, rank = self.unpack("<BI")
            if code not in _CODE_DTYPES:
                raise FormatError(f"tensor {name!r} has unknown dtype code {code}")
            shape = self.unpack(f"<{rank}Q") if rank else ()
            dtype = _CODE_DTYPES[code]
            nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            out[name] = np.frombuffer(self.take(nbytes), dtype=dtype).reshape(shape).copy()
        return out


def _scalar(v) -> np.ndarray:
    return np.asarray(float(v), dtype="<f8")


def encode(ckpt: Checkpoint) -> bytes:
    config = to_text(ckpt.config).encode("utf-8")
    optim = OrderedDict(
        [("lr", _scalar(ckpt.optim.lr)), ("momentum", _scalar(ckpt.optim.momentum)),
         ("weight_decay", _scalar(ckpt.optim.weight_decay))]
    )
    names = list(ckpt.model)
    params = names[: len(ckpt.optim.velocity)]
    for name, v in zip(params, ckpt.optim.velocity):
        optim[f"velocity/{name}"] = v
    weights = OrderedDict(
        [("weights", np.asarray(ckpt.weight_state.weights, dtype="<f8")),
         ("source_iou", np.asarray(ckpt.weight_state.source_iou, dtype="<f8")),
         ("alpha", _scalar(ckpt.weight_state.alpha))]
    )
    state = OrderedDict([("epoch", _scalar(ckpt.epoch)), ("step", _scalar(ckpt.step)), ("rng/seed", _scalar(ckpt.seed))])
    for key, arr in ckpt.history.items():
        state[f"history/{key}"] = np.asarray(arr, dtype="<f8")
    body = b"".join(
        [MAGIC, struct.pack("<I", ckpt.version), struct.pack("<Q", len(config)), config]
        + [_encode_table(t) for t in (ckpt.model, optim, weights, state)]
    )
    return body + _checksum(body)


def decode(data: bytes) -> Checkpoint:
    if len(data) < 8 or data[:4] != MAGIC:
        raise FormatError("not a marsseg checkpoint (bad magic bytes)")
    reader = _Reader(data)
    reader.take(4)
    (version,) = reader.unpack("<I")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version} (expected {VERSION})")
    if len(data) < 16:
        raise IntegrityError("checkpoint truncated")
    if _checksum(data[:-8]) != data[-8:]:
        raise IntegrityError("checkpoint checksum mismatch (file truncated or corrupted)")
    reader.data = data[:-8]
    (config_len,) = reader.unpack("<Q")
    config = from_text(reader.take(config_len).decode("utf-8"))
    model, optim_t, weights_t, state_t = (reader.table() for _ in TABLES)
    if reader.pos != len(reader.data):
        raise IntegrityError("trailing bytes after checkpoint tables")

    velocity_names = [k for k in optim_t if k.startswith("velocity/")]
    optim = OptimState(
        lr=float(optim_t["lr"]),
        momentum=float(optim_t["momentum"]),
        weight_decay=float(optim_t["weight_decay"]),
        velocity=[optim_t[k] for k in velocity_names],
    )
    weight_state = ClassWeightState(
        weights=weights_t["weights"], source_iou=weights_t["source_iou"], alpha=float(weights_t["alpha"])
    )
    history = {k[len("history/"):]: v for k, v in state_t.items() if k.startswith("history/")}
    return Checkpoint(
        config=config,
        model=model,
        optim=optim,
        weight_state=weight_state,
        epoch=int(state_t["epoch"]),
        step=int(state_t["step"]),
        seed=int(state_t["rng/seed"]),
        history=history,
        version=version,
    )


def save_checkpoint(path, ckpt: Checkpoint) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode(ckpt))
    tmp.replace(path)
    return path


def load_checkpoint(path) -> Checkpoint:
    return decode(Path(path).read_bytes())


def restore_model(ckpt: Checkpoint, model) -> None:
    """Copy checkpoint tensors into ``model``; a mismatch raises ``FormatError``
    naming the first offending tensor."""
    model.load_state_dict(ckpt.model)

