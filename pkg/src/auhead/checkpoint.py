"""Single-file checkpoint container.

Layout: 8-byte magic (versioned), u32 little-endian header length, UTF-8 JSON
header, then the raw little-endian array payload. The header records the kind
tag, the full config section the model was built from, its hash, optimizer
state metadata, and the training RNG state, so a run can resume bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import torch

from .errors import SchemaError

MAGIC = b"AUHDCKP1"


def config_hash(config: Mapping) -> str:
    """sha256 of the canonical JSON form of a config mapping."""
    payload = json.dumps(config, sort_keys=True, separators=(",", ":"), default=float)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass
class Checkpoint:
    kind: str
    config: dict
    arrays: dict[str, np.ndarray] = field(default_factory=dict)
    rng_state: bytes | None = None
    step: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def hash(self) -> str:
        return config_hash(self.config)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    entries = []
    offset = 0
    blobs = []
    for name in sorted(ckpt.arrays):
        arr = np.ascontiguousarray(ckpt.arrays[name])
        blob = arr.tobytes()
        entries.append(
            {
                "name": name,
                "dtype": arr.dtype.str,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(blob),
            }
        )
        blobs.append(blob)
        offset += len(blob)

    header = {
        "format": 1,
        "kind": ckpt.kind,
        "config": ckpt.config,
        "config_hash": config_hash(ckpt.config),
        "rng_state": ckpt.rng_state.hex() if ckpt.rng_state is not None else None,
        "step": ckpt.step,
        "extra": ckpt.extra,
        "arrays": entries,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path, expect_kind: str | None = None) -> Checkpoint:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise SchemaError(f"{path}: not a checkpoint file (bad magic {magic!r})")
        (head_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(head_len).decode("utf-8"))
        payload = fh.read()

    arrays = {}
    for entry in header["arrays"]:
        start, nbytes = entry["offset"], entry["nbytes"]
        if start + nbytes > len(payload):
            raise SchemaError(f"{path}: truncated payload for array {entry['name']!r}")
        arr = np.frombuffer(payload[start : start + nbytes], dtype=np.dtype(entry["dtype"]))
        arrays[entry["name"]] = arr.reshape(entry["shape"]).copy()

    rng_hex = header.get("rng_state")
    ckpt = Checkpoint(
        kind=header["kind"],
        config=header["config"],
        arrays=arrays,
        rng_state=bytes.fromhex(rng_hex) if rng_hex else None,
        step=header.get("step", 0),
        extra=header.get("extra", {}),
    )
    if expect_kind is not None and ckpt.kind != expect_kind:
        raise SchemaError(f"{path}: expected a {expect_kind!r} checkpoint, found {ckpt.kind!r}")
    return ckpt


def state_dict_arrays(module: torch.nn.Module, prefix: str = "model") -> dict[str, np.ndarray]:
    return {
        f"{prefix}/{k}": v.detach().cpu().numpy().copy() for k, v in module.state_dict().items()
    }


def load_state_dict_arrays(
    module: torch.nn.Module, arrays: Mapping[str, np.ndarray], prefix: str = "model"
) -> None:
    state = {}
    want = prefix + "/"
    for name, arr in arrays.items():
        if name.startswith(want):
            state[name[len(want) :]] = torch.from_numpy(np.ascontiguousarray(arr))
    missing = set(module.state_dict()) - set(state)
    if missing:
        raise SchemaError(f"checkpoint is missing weights: {sorted(missing)[:5]} ...")
    module.load_state_dict(state)


def optimizer_arrays(opt: torch.optim.Optimizer) -> tuple[dict[str, np.ndarray], dict]:
    """Flatten Adam-style optimizer state into named arrays + JSON metadata."""
    state = opt.state_dict()
    arrays = {}
    meta = {"param_groups": state["param_groups"], "state_keys": {}}
    for pid, slots in state["state"].items():
        keys = []
        for key, value in slots.items():
            keys.append(key)
            tensor = value if torch.is_tensor(value) else torch.tensor(value)
            arrays[f"opt/{pid}/{key}"] = tensor.detach().cpu().numpy().copy()
        meta["state_keys"][str(pid)] = keys
    return arrays, meta


def load_optimizer_arrays(
    opt: torch.optim.Optimizer, arrays: Mapping[str, np.ndarray], meta: Mapping
) -> None:
    state = {"param_groups": meta["param_groups"], "state": {}}
    for pid_str, keys in meta["state_keys"].items():
        slots = {}
        for key in keys:
            arr = torch.from_numpy(np.ascontiguousarray(arrays[f"opt/{pid_str}/{key}"]))
            slots[key] = arr
        state["state"][int(pid_str)] = slots
    opt.load_state_dict(state)


def weight_hashes(module: torch.nn.Module) -> dict[str, str]:
    """sha256 per parameter/buffer; used by the freeze-contract tests."""
    out = {}
    for name, tensor in module.state_dict().items():
        out[name] = hashlib.sha256(tensor.detach().cpu().numpy().tobytes()).hexdigest()
    return out
