"""Versioned checkpoint container.

Layout: 10 magic bytes "FEGANCKPT\\x01", a uint32 little-endian header
length, a UTF-8 JSON header, then the raw little-endian array payloads in
header order. The header echoes the training config, records the step, and
indexes every array by a stable name: generator and discriminator
parameters/buffers under their module-qualified names, optimizer moments
under opt_g/... and opt_d/.... Raw bytes round-trip bit-exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

MAGIC = b"FEGANCKPT\x01"
VERSION = 1

_DTYPES = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8"), "<i8": np.dtype("<i8")}


class CheckpointError(RuntimeError):
    """Bad magic, unsupported version, or truncated payload."""


@dataclass
class CheckpointBundle:
    """Everything read back from a checkpoint file."""

    step: int
    config: dict
    arrays: dict[str, np.ndarray]

    def group(self, prefix: str) -> dict[str, np.ndarray]:
        cut = len(prefix)
        return {k[cut:]: v for k, v in self.arrays.items() if k.startswith(prefix)}


def _as_array(tensor: torch.Tensor) -> np.ndarray:
    arr = tensor.detach().cpu().numpy()
    if arr.dtype == np.float32:
        return arr.astype("<f4")
    if arr.dtype == np.float64:
        return arr.astype("<f8")
    if np.issubdtype(arr.dtype, np.integer):
        return arr.astype("<i8")
    raise CheckpointError(f"unsupported tensor dtype {arr.dtype}")


def collect_module_arrays(module: torch.nn.Module, prefix: str) -> dict[str, np.ndarray]:
    out = {}
    for name, param in module.named_parameters():
        out[f"{prefix}{name}"] = _as_array(param)
    for name, buf in module.named_buffers():
        out[f"{prefix}{name}"] = _as_array(buf)
    return out


def restore_module_arrays(module: torch.nn.Module, arrays: dict[str, np.ndarray]) -> None:
    tensors = dict(module.named_parameters())
    tensors.update(dict(module.named_buffers()))
    missing = set(tensors) - set(arrays)
    extra = set(arrays) - set(tensors)
    if missing or extra:
        raise CheckpointError(
            f"parameter names do not match checkpoint (missing={sorted(missing)[:3]}, "
            f"extra={sorted(extra)[:3]})")
    with torch.no_grad():
        for name, tensor in tensors.items():
            value = torch.from_numpy(np.ascontiguousarray(arrays[name]))
            if tuple(value.shape) != tuple(tensor.shape):
                raise CheckpointError(f"shape mismatch for {name}")
            tensor.copy_(value.to(tensor.dtype))


def write_checkpoint(path, step: int, config: dict,
                     arrays: dict[str, np.ndarray]) -> None:
    index = []
    payloads = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        dtype = arr.dtype.newbyteorder("<").str
        if dtype not in _DTYPES:
            raise CheckpointError(f"unsupported array dtype {arr.dtype} for {name}")
        index.append({"name": name, "dtype": dtype, "shape": list(arr.shape)})
        payloads.append(arr.tobytes())
    header = json.dumps({"version": VERSION, "step": step, "config": config,
                         "arrays": index}).encode("utf-8")
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for blob in payloads:
            fh.write(blob)
    tmp.replace(path)


def read_checkpoint(path) -> CheckpointBundle:
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 4 or raw[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"not a checkpoint file: {path}")
    (header_len,) = struct.unpack("<I", raw[len(MAGIC):len(MAGIC) + 4])
    start = len(MAGIC) + 4
    if len(raw) < start + header_len:
        raise CheckpointError(f"truncated checkpoint header: {path}")
    header = json.loads(raw[start:start + header_len].decode("utf-8"))
    if header.get("version") != VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {header.get('version')} (expected {VERSION})")
    offset = start + header_len
    arrays = {}
    for entry in header["arrays"]:
        dtype = _DTYPES[entry["dtype"]]
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        nbytes = count * dtype.itemsize
        if offset + nbytes > len(raw):
            raise CheckpointError(f"truncated checkpoint payload: {path}")
        arrays[entry["name"]] = np.frombuffer(
            raw, dtype=dtype, count=count, offset=offset).reshape(entry["shape"]).copy()
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError(f"trailing bytes in checkpoint: {path}")
    return CheckpointBundle(step=int(header["step"]), config=header["config"],
                            arrays=arrays)
