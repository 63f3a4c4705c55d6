"""Binary container for checkpoints and datasets.

Layout::

    b"SVHW" | version (1 byte) | header length (uint32 LE) | JSON header | payload

The JSON header lists every tensor (name, shape, dtype, offset, nbytes), the
caller's metadata, and the CRC32 of the payload.  Payload arrays are raw
little-endian; model parameters and optimizer moments are float32.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig
from .diffcore import Adam
from .errors import CheckpointError
from .model import ModelState
from .survdata import SurvivalDataset

MAGIC = b"SVHW"
VERSION = 1
_ALLOWED_DTYPES = ("<f4", "<f8", "<i8")


def _dtype_tag(a: np.ndarray) -> str:
    tag = a.dtype.newbyteorder("<").str
    if tag not in _ALLOWED_DTYPES:
        raise CheckpointError(f"unsupported tensor dtype {a.dtype}")
    return tag


def pack(arrays: dict[str, np.ndarray], meta: dict) -> bytes:
    entries, chunks, offset = [], [], 0
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name])
        tag = _dtype_tag(a)
        raw = a.astype(tag, copy=False).tobytes()
        entries.append({"name": name, "shape": list(a.shape), "dtype": tag, "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = {"crc32": zlib.crc32(payload), "meta": meta, "tensors": entries}
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + bytes([VERSION]) + struct.pack("<I", len(hbytes)) + hbytes + payload


def unpack(blob: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if len(blob) < 9:
        raise CheckpointError("truncated container header")
    if blob[:4] != MAGIC:
        raise CheckpointError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}")
    if blob[4] != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {blob[4]}")
    (hlen,) = struct.unpack("<I", blob[5:9])
    if len(blob) < 9 + hlen:
        raise CheckpointError("truncated container header")
    try:
        header = json.loads(blob[9 : 9 + hlen])
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt container header: {exc}") from exc
    payload = blob[9 + hlen :]
    expected = sum(t["nbytes"] for t in header["tensors"])
    if len(payload) != expected:
        raise CheckpointError(f"truncated payload: {len(payload)} of {expected} bytes")
    if zlib.crc32(payload) != header["crc32"]:
        raise CheckpointError("checksum mismatch in payload")
    arrays = {}
    for t in header["tensors"]:
        if t["dtype"] not in _ALLOWED_DTYPES:
            raise CheckpointError(f"unsupported tensor dtype {t['dtype']}")
        raw = payload[t["offset"] : t["offset"] + t["nbytes"]]
        arrays[t["name"]] = np.frombuffer(raw, dtype=t["dtype"]).reshape(t["shape"]).copy()
    return arrays, header["meta"]


def write_container(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    Path(path).write_bytes(pack(arrays, meta))


def read_container(path) -> tuple[dict[str, np.ndarray], dict]:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc}") from exc
    return unpack(blob)


# ------------------------------------------------------------- checkpoints


@dataclass
class Checkpoint:
    config: RunConfig
    model: ModelState
    adam_vae: Adam
    adam_cox: Adam
    rng_state: dict
    epoch: int = 0
    history: list[dict] = field(default_factory=list)

    def to_container(self) -> tuple[dict[str, np.ndarray], dict]:
        arrays = {f"param/{k}": v for k, v in self.model.named_arrays().items()}
        meta = {
            "kind": "checkpoint",
            "config": self.config.to_dict(),
            "rng_state": self.rng_state,
            "epoch": self.epoch,
            "history": self.history,
        }
        for label, opt in (("adam_vae", self.adam_vae), ("adam_cox", self.adam_cox)):
            state = opt.state_dict()
            for k, a in state.pop("m").items():
                arrays[f"{label}/m/{k}"] = a
            for k, a in state.pop("v").items():
                arrays[f"{label}/v/{k}"] = a
            meta[label] = state
        return arrays, meta

    @classmethod
    def from_container(cls, arrays: dict[str, np.ndarray], meta: dict) -> "Checkpoint":
        if meta.get("kind") != "checkpoint":
            raise CheckpointError(f"container holds {meta.get('kind')!r}, not a checkpoint")

        def group(prefix):
            n = len(prefix)
            return {k[n:]: a for k, a in arrays.items() if k.startswith(prefix)}

        opts = {}
        for label in ("adam_vae", "adam_cox"):
            state = dict(meta[label], m=group(f"{label}/m/"), v=group(f"{label}/v/"))
            opts[label] = Adam.from_state(state)
        return cls(
            config=RunConfig.from_dict(meta["config"]),
            model=ModelState.from_named(group("param/")),
            adam_vae=opts["adam_vae"],
            adam_cox=opts["adam_cox"],
            rng_state=meta["rng_state"],
            epoch=meta["epoch"],
            history=meta["history"],
        )


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    write_container(path, *ckpt.to_container())


def load_checkpoint(path) -> Checkpoint:
    arrays, meta = read_container(path)
    try:
        return Checkpoint.from_container(arrays, meta)
    except KeyError as exc:
        raise CheckpointError(f"checkpoint missing field {exc}") from exc


def save_dataset(path, data: SurvivalDataset) -> None:
    meta = {
        "kind": "dataset",
        "provenance": data.provenance,
        "seed": data.seed,
        "image_shape": list(data.image_shape),
    }
    write_container(path, data.to_arrays(), meta)


def load_dataset(path) -> SurvivalDataset:
    arrays, meta = read_container(path)
    if meta.get("kind") != "dataset":
        raise CheckpointError(f"container holds {meta.get('kind')!r}, not a dataset")
    return SurvivalDataset.from_arrays(arrays, meta)
