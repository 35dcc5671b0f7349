"""Named, seeded parameter tensors with gradient slots, plus checkpoint io.

Checkpoint layout (little-endian throughout), version 1:

    magic       4 bytes   b"AVPS"
    version     u32       1
    dtype code  u8        0 = float64, 1 = float32
    padding     3 bytes   zeros
    seed        i64
    schema hash 32 bytes  sha256 over "name:shape:scheme:fan_in" lines, sorted
    count       u32
    per parameter, sorted by name:
        name length u32, name utf-8
        scheme code u8        0 = uniform-fan-in, 1 = zeros, 2 = identity
        fan_in      u32
        gain        f64       identity scheme scale (1.0 otherwise)
        ndim        u32, then each dim as u32
        payload     raw row-major floats

Round-trips are bit-exact; any header mismatch fails closed before the
payload is read.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, UsageError
from .tensor import Tensor

_MAGIC = b"AVPS"
_VERSION = 1
_SCHEMES = ("uniform-fan-in", "zeros", "identity")
_SCHEME_CODES = {"uniform-fan-in": 0, "zeros": 1, "identity": 2}
_CODE_SCHEMES = {v: k for k, v in _SCHEME_CODES.items()}
_DTYPE_CODES = {np.dtype(np.float64): 0, np.dtype(np.float32): 1}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


@dataclass(frozen=True)
class ParamSpec:
    """Shape plus initialization recipe for one named parameter.

    Schemes: ``uniform-fan-in`` draws from +-1/sqrt(fan_in); ``zeros``
    silences the parameter; ``identity`` (square shapes only) starts the
    map as ``gain`` times the identity.
    """

    shape: tuple[int, ...]
    scheme: str = "uniform-fan-in"
    fan_in: int | None = None  # defaults to shape[0]
    gain: float = 1.0  # identity scheme only

    def resolved_fan_in(self) -> int:
        return self.shape[0] if self.fan_in is None else self.fan_in


def _rng_for(name: str, seed: int) -> np.random.Generator:
    # per-name stream keyed on (seed, sha256(name)) so the draw is independent
    # of schema insertion order
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, *words]))


def init_params(
    shapes: dict[str, tuple[int, ...]], scheme: str = "uniform-fan-in", seed: int = 0,
    dtype=np.float64,
) -> "ParamStore":
    """Build a store from a plain name -> shape map with one scheme for all entries."""
    return ParamStore({n: ParamSpec(tuple(s), scheme) for n, s in shapes.items()}, seed, dtype)


class ParamStore:
    """Map of name -> (value tensor, gradient slot, initializer record, seed)."""

    def __init__(self, schema: dict[str, ParamSpec], seed: int, dtype=np.float64):
        if not schema:
            raise UsageError("ParamStore: empty schema")
        dtype = np.dtype(dtype)
        if dtype not in _DTYPE_CODES:
            raise UsageError(f"ParamStore: unsupported dtype {dtype}")
        self.schema = dict(schema)
        self.seed = int(seed)
        self.dtype = dtype
        self.params: dict[str, Tensor] = {}
        for name, spec in self.schema.items():
            if spec.scheme not in _SCHEMES:
                raise UsageError(f"ParamStore: unknown scheme '{spec.scheme}' for '{name}'")
            if spec.scheme == "zeros":
                value = np.zeros(spec.shape, dtype=dtype)
            elif spec.scheme == "identity":
                if len(spec.shape) != 2 or spec.shape[0] != spec.shape[1]:
                    raise UsageError(f"ParamStore: identity scheme needs a square shape, '{name}' is {spec.shape}")
                value = spec.gain * np.eye(spec.shape[0], dtype=dtype)
            else:
                bound = 1.0 / np.sqrt(spec.resolved_fan_in())
                value = _rng_for(name, self.seed).uniform(-bound, bound, spec.shape).astype(dtype)
            self.params[name] = Tensor(value, requires_grad=True, name=name)

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> list[str]:
        return sorted(self.params)

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def schema_hash(self) -> bytes:
        lines = []
        for name in sorted(self.schema):
            spec = self.schema[name]
            shape = ",".join(str(n) for n in spec.shape)
            lines.append(f"{name}:{shape}:{spec.scheme}:{spec.resolved_fan_in()}:{spec.gain!r}")
        return hashlib.sha256("\n".join(lines).encode("utf-8")).digest()

    # ----- checkpoint io -----

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<IB3xq", _VERSION, _DTYPE_CODES[self.dtype], self.seed))
            fh.write(self.schema_hash())
            fh.write(struct.pack("<I", len(self.params)))
            for name in sorted(self.params):
                spec = self.schema[name]
                raw = name.encode("utf-8")
                fh.write(struct.pack("<I", len(raw)))
                fh.write(raw)
                fh.write(struct.pack("<BId", _SCHEME_CODES[spec.scheme], spec.resolved_fan_in(), spec.gain))
                arr = self.params[name].data
                fh.write(struct.pack("<I", arr.ndim))
                fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
                fh.write(np.ascontiguousarray(arr, dtype=self.dtype).tobytes())

    @classmethod
    def load(cls, path) -> "ParamStore":
        with open(path, "rb") as fh:
            blob = fh.read()
        off = 0

        def take(n: int, what: str) -> bytes:
            nonlocal off
            if off + n > len(blob):
                raise FormatError(f"checkpoint truncated at offset {off} reading {what}")
            chunk = blob[off : off + n]
            off += n
            return chunk

        if take(4, "magic") != _MAGIC:
            raise FormatError("checkpoint: bad magic, not a parameter checkpoint")
        version, dtype_code, seed = struct.unpack("<IB3xq", take(16, "header"))
        if version != _VERSION:
            raise FormatError(f"checkpoint: unsupported version {version}")
        if dtype_code not in _CODE_DTYPES:
            raise FormatError(f"checkpoint: unknown dtype code {dtype_code}")
        dtype = _CODE_DTYPES[dtype_code]
        stored_hash = take(32, "schema hash")
        (count,) = struct.unpack("<I", take(4, "count"))

        schema: dict[str, ParamSpec] = {}
        values: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", take(4, "name length"))
            name = take(name_len, "name").decode("utf-8")
            scheme_code, fan_in, gain = struct.unpack("<BId", take(13, "init record"))
            if scheme_code not in _CODE_SCHEMES:
                raise FormatError(f"checkpoint: unknown scheme code {scheme_code}")
            (ndim,) = struct.unpack("<I", take(4, "ndim"))
            shape = struct.unpack(f"<{ndim}I", take(4 * ndim, "shape"))
            nbytes = int(np.prod(shape)) * dtype.itemsize
            payload = take(nbytes, f"payload of '{name}'")
            schema[name] = ParamSpec(tuple(shape), _CODE_SCHEMES[scheme_code], fan_in, gain)
            values[name] = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
        if off != len(blob):
            raise FormatError(f"checkpoint: {len(blob) - off} trailing bytes at offset {off}")

        store = cls.__new__(cls)
        store.schema = schema
        store.seed = seed
        store.dtype = dtype
        store.params = {
            name: Tensor(values[name], requires_grad=True, name=name) for name in schema
        }
        if store.schema_hash() != stored_hash:
            raise FormatError("checkpoint: schema hash mismatch")
        return store

    def equals(self, other: "ParamStore") -> bool:
        if self.names() != other.names():
            return False
        return all(np.array_equal(self[n].data, other[n].data) for n in self.names())
