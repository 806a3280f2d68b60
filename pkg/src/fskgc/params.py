"""Parameter registry, initializers, Adam, and the binary checkpoint format."""
from __future__ import annotations

import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .autodiff import Tensor, get_default_dtype

MAGIC = b"FSKGCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


class MissingGradientError(RuntimeError):
    pass


def xavier_uniform(shape, rng: np.random.Generator, dtype) -> np.ndarray:
    fan_in, fan_out = (shape[0], shape[-1]) if len(shape) > 1 else (shape[0], 1)
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def initialize(kind: str, shape, rng: np.random.Generator, dtype) -> np.ndarray:
    shape = tuple(shape)
    if kind == "xavier":
        return xavier_uniform(shape, rng, dtype)
    if kind == "zeros":
        return np.zeros(shape, dtype=dtype)
    if kind == "embedding":
        # variance 0.01
        return (0.1 * rng.standard_normal(shape)).astype(dtype)
    raise ValueError(f"unknown initializer {kind!r}")


class ParamRegistry:
    """Named trainable tensors in insertion order, plus Adam moment state."""

    def __init__(self, dtype=None):
        self.dtype = np.dtype(dtype or get_default_dtype()).type
        self.params: "OrderedDict[str, Tensor]" = OrderedDict()
        self.adam_m: dict = {}
        self.adam_v: dict = {}
        self.step = 0

    def add(self, name: str, shape, rng: np.random.Generator, init: str | None = None) -> Tensor:
        if name in self.params:
            raise KeyError(f"parameter {name!r} already registered")
        if init is None:
            init = "xavier" if len(tuple(shape)) > 1 else "zeros"
        t = Tensor(initialize(init, shape, rng, self.dtype), requires_grad=True, name=name)
        self.params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params.items())

    def __len__(self):
        return len(self.params)

    def names(self) -> list:
        return list(self.params)

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = np.zeros_like(t.data)

    def clear_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def grad_norm(self) -> float:
        total = 0.0
        for t in self.params.values():
            if t.grad is not None:
                total += float(np.sum(t.grad.astype(np.float64) ** 2))
        return float(np.sqrt(total))

    def astype(self, dtype) -> "ParamRegistry":
        """Cast every parameter (and optimizer moment) in place."""
        self.dtype = np.dtype(dtype).type
        for t in self.params.values():
            t.data = t.data.astype(self.dtype)
            t.grad = None
        for d in (self.adam_m, self.adam_v):
            for k in d:
                d[k] = d[k].astype(self.dtype)
        return self

    def num_parameters(self) -> int:
        return sum(t.size for t in self.params.values())


def adam_step(registry: ParamRegistry, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8,
              clip_norm: float = 0.0) -> None:
    b1, b2 = betas
    for name, t in registry:
        if t.grad is None:
            raise MissingGradientError(f"parameter {name!r} has no gradient; call zero_grad() before backward")
    scale = 1.0
    if clip_norm > 0:
        norm = registry.grad_norm()
        if norm > clip_norm:
            scale = clip_norm / norm
    registry.step += 1
    k = registry.step
    bc1 = 1.0 - b1 ** k
    bc2 = 1.0 - b2 ** k
    for name, t in registry:
        g = t.grad * scale if scale != 1.0 else t.grad
        m = registry.adam_m.get(name)
        if m is None:
            m = np.zeros_like(t.data)
            registry.adam_v[name] = np.zeros_like(t.data)
        v = registry.adam_v[name]
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        registry.adam_m[name] = m.astype(t.data.dtype, copy=False)
        registry.adam_v[name] = v.astype(t.data.dtype, copy=False)
        update = lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        t.data = (t.data - update).astype(t.data.dtype, copy=False)


# -- checkpoint ----------------------------------------------------------
# layout: MAGIC | u32 version | u32 precision bits | u64 header length |
#         JSON header | raw little-endian array bytes at header offsets

def save_checkpoint(path, registry: ParamRegistry, metadata: dict | None = None) -> None:
    arrays = []
    for name, t in registry:
        arrays.append(("param", name, t.data))
    for name in registry.params:
        if name in registry.adam_m:
            arrays.append(("adam_m", name, registry.adam_m[name]))
            arrays.append(("adam_v", name, registry.adam_v[name]))
    entries, blobs, offset = [], [], 0
    for kind, name, arr in arrays:
        le = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))
        raw = le.tobytes()
        entries.append({"kind": kind, "name": name, "shape": list(arr.shape),
                        "dtype": le.dtype.str, "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"entries": entries, "adam_step": registry.step,
                         "metadata": metadata or {}}).encode("utf-8")
    bits = 64 if registry.dtype == np.float64 else 32
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIQ", VERSION, bits, len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)
    tmp.replace(path)


def load_checkpoint(path) -> tuple:
    """Return ``(registry, metadata)``; arrays come back bit-identical."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    if len(blob) < 24:
        raise CheckpointError(f"{path}: truncated header")
    version, bits, hlen = struct.unpack("<IIQ", blob[8:24])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(blob[24:24 + hlen].decode("utf-8"))
    base = 24 + hlen
    need = base + sum(e["nbytes"] for e in header["entries"])
    if len(blob) < need:
        raise CheckpointError(f"{path}: truncated ({len(blob)} of {need} bytes)")
    registry = ParamRegistry(np.float64 if bits == 64 else np.float32)
    for e in header["entries"]:
        start = base + e["offset"]
        arr = np.frombuffer(blob[start:start + e["nbytes"]], dtype=np.dtype(e["dtype"]))
        arr = arr.reshape(e["shape"]).astype(np.dtype(e["dtype"]).newbyteorder("="))
        if e["kind"] == "param":
            registry.params[e["name"]] = Tensor(arr, requires_grad=True, name=e["name"])
        elif e["kind"] == "adam_m":
            registry.adam_m[e["name"]] = arr
        else:
            registry.adam_v[e["name"]] = arr
    registry.step = header["adam_step"]
    return registry, header["metadata"]
