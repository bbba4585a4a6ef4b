"""
Named, seeded weight store and its on-disk record format

Each record is: u32 little-endian header length, UTF-8 JSON header
{"name", "shape", "seed"}, then the tensor as little-endian float64.
"""

import hashlib
import json
import logging
import math
import os
import struct
from typing import BinaryIO, Dict, Iterator, Optional, Sequence, Tuple

import numpy as np

from .errors import DimensionError, ParseError, PipelineIOError
from .tensor_core import LinearLayer, Rng, Tensor

logger = logging.getLogger(__name__)

_HEADER_LEN = struct.Struct("<I")


def write_tensor_record(fh: BinaryIO, name: str, tensor: Tensor, seed: int):
    """Append one tensor record to an open binary stream"""
    header = json.dumps({"name": name, "shape": list(tensor.shape), "seed": seed},
                        sort_keys=True).encode("utf-8")
    fh.write(_HEADER_LEN.pack(len(header)))
    fh.write(header)
    fh.write(np.ascontiguousarray(tensor, dtype="<f8").tobytes())


def read_tensor_records(data: bytes, path: Optional[str] = None) -> Iterator[Tuple[str, Tensor, int]]:
    """Yield (name, tensor, seed) for every record in a weight file"""
    offset = 0
    while offset < len(data):
        if offset + _HEADER_LEN.size > len(data):
            raise ParseError("truncated record header length", offset, path)
        (hlen,) = _HEADER_LEN.unpack_from(data, offset)
        start = offset + _HEADER_LEN.size
        try:
            header = json.loads(data[start:start + hlen].decode("utf-8"))
            name, shape, seed = header["name"], tuple(header["shape"]), int(header["seed"])
        except (ValueError, KeyError, TypeError) as e:
            raise ParseError(f"bad record header ({e})", start, path)
        payload = start + hlen
        nbytes = 8 * int(np.prod(shape)) if shape else 8
        if payload + nbytes > len(data):
            raise ParseError(f"truncated payload for {name}", payload, path)
        tensor = np.frombuffer(data, dtype="<f8", count=nbytes // 8, offset=payload)
        yield name, tensor.astype(np.float64).reshape(shape), seed
        offset = payload + nbytes


class WeightStore:
    """Creates and remembers every learnable tensor by name.

    A tensor's values depend only on the global seed and its name, so the
    order in which stages are built never changes the weights.
    """

    def __init__(self, seed: int = 0, preloaded: Optional[Dict[str, Tuple[Tensor, int]]] = None):
        self.seed = int(seed)
        self.tensors: Dict[str, Tuple[Tensor, int]] = {}
        self._preloaded = dict(preloaded or {})

    def derive_seed(self, name: str) -> int:
        """Per-tensor seed from (global seed, name)"""
        digest = hashlib.blake2b(f"{self.seed}:{name}".encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little")

    def _register(self, name: str, shape: Sequence[int], make) -> Tensor:
        shape = tuple(int(s) for s in shape)
        if name in self.tensors:
            tensor = self.tensors[name][0]
        elif name in self._preloaded:
            tensor, seed = self._preloaded[name]
            if tensor.shape != shape:
                raise DimensionError(f"stored weight {name} has wrong shape", tensor.shape, shape)
            self.tensors[name] = (tensor, seed)
        else:
            seed = self.derive_seed(name)
            tensor = make(seed)
            self.tensors[name] = (tensor, seed)
        if tensor.shape != shape:
            raise DimensionError(f"weight {name} requested with a different shape", tensor.shape, shape)
        return tensor

    def uniform(self, name: str, shape: Sequence[int], bound: float) -> Tensor:
        """Uniform tensor in [-bound, bound]"""
        return self._register(name, shape, lambda s: Rng(s).uniform(shape, -bound, bound))

    def constant(self, name: str, shape: Sequence[int], value: float) -> Tensor:
        return self._register(name, shape, lambda s: np.full(tuple(shape), float(value)))

    def linear(self, name: str, in_features: int, out_features: int, bias: bool = True) -> LinearLayer:
        """Fan-in uniform linear layer"""
        bound = 1.0 / math.sqrt(in_features)
        weight = self.uniform(f"{name}.weight", (out_features, in_features), bound)
        if bias:
            b = self.uniform(f"{name}.bias", (out_features,), bound)
        else:
            b = np.zeros(out_features)
        return LinearLayer(weight, b)

    def conv(self, name: str, in_channels: int, out_channels: int, kernel: int = 3) -> Tensor:
        """Bias-free conv kernel [out, in, k, k]"""
        bound = 1.0 / math.sqrt(in_channels * kernel * kernel)
        return self.uniform(f"{name}.weight", (out_channels, in_channels, kernel, kernel), bound)

    def names(self):
        return sorted(self.tensors)

    def __len__(self):
        return len(self.tensors)

    def save(self, path: str):
        """Write every registered tensor, sorted by name"""
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, "wb") as fh:
            for name in self.names():
                tensor, seed = self.tensors[name]
                write_tensor_record(fh, name, tensor, seed)
        logger.info("Saved %d weight tensors to %s", len(self), path)

    @classmethod
    def load(cls, path: str, seed: int = 0) -> "WeightStore":
        """Load a weight file; names missing from the file fall back to seeded init"""
        try:
            with open(path, "rb") as fh:
                data = fh.read()
        except OSError as e:
            raise PipelineIOError(f"cannot read weights ({e.strerror})", path)
        preloaded = {name: (tensor, s) for name, tensor, s in read_tensor_records(data, path)}
        logger.info("Loaded %d weight tensors from %s", len(preloaded), path)
        return cls(seed, preloaded)
