"""
Dense tensor primitives shared by every stage of the matting engine

Tensors are plain float64 numpy arrays. The only non-finite value allowed is
-inf, and only inside additive attention masks.
"""

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .errors import ConfigError, DimensionError, MaskedRowError

Tensor = np.ndarray

_GOLDEN_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX_1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX_2 = np.uint64(0x94D049BB133111EB)
_MASK_64 = (1 << 64) - 1


class Rng:
    """Counter-based splitmix64 generator.

    Output k (1-based) is mix(seed + k * 0x9E3779B97F4A7C15 mod 2^64) with the
    standard splitmix64 finalizer, so a stream is fully determined by the seed
    and reproducible in any language with 64-bit unsigned arithmetic.
    Doubles use the top 53 bits: (u >> 11) * 2^-53.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK_64
        self.counter = 0

    def next_u64(self, n: int) -> np.ndarray:
        """Draw n raw 64-bit outputs"""
        ks = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            z = np.uint64(self.seed) + ks * _GOLDEN_GAMMA
            z = (z ^ (z >> np.uint64(30))) * _MIX_1
            z = (z ^ (z >> np.uint64(27))) * _MIX_2
            z = z ^ (z >> np.uint64(31))
        return z

    def uniform(self, shape: Union[int, Sequence[int]] = (), low: float = 0.0,
                high: float = 1.0) -> np.ndarray:
        """Uniform doubles in [low, high)"""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape)) if shape else 1
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        return (low + (high - low) * u).reshape(shape)

    def random(self) -> float:
        """Single uniform double in [0, 1)"""
        return float(self.uniform(()))

    def integers(self, low: int, high: int) -> int:
        """Uniform integer in [low, high)"""
        return low + int(self.random() * (high - low))


@dataclass
class LinearLayer:
    """Affine map y = x W^T + b"""
    weight: Tensor
    bias: Tensor

    def __post_init__(self):
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise DimensionError("linear layer weight/bias mismatch", self.weight.shape, self.bias.shape)

    @property
    def in_features(self) -> int:
        return self.weight.shape[1]

    @property
    def out_features(self) -> int:
        return self.weight.shape[0]

    @classmethod
    def init(cls, in_features: int, out_features: int, rng: Rng, bias: bool = True) -> "LinearLayer":
        """Fan-in uniform init in [-1/sqrt(in), 1/sqrt(in)]"""
        bound = 1.0 / math.sqrt(in_features)
        weight = rng.uniform((out_features, in_features), -bound, bound)
        b = rng.uniform((out_features,), -bound, bound) if bias else np.zeros(out_features)
        return cls(weight, b)

    @classmethod
    def identity(cls, features: int) -> "LinearLayer":
        return cls(np.eye(features), np.zeros(features))

    def __call__(self, x: Tensor) -> Tensor:
        return linear(self, x)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with a fixed summation order.

    Each output element is accumulated over the inner index in ascending
    order starting from 0.0, exactly like a naive triple loop.
    """
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError("matmul inner dimensions differ", a.shape, b.shape)
    m, k = a.shape
    out = np.zeros((m, b.shape[1]))
    for p in range(k):
        out += a[:, p:p + 1] * b[p:p + 1, :]
    return out


def softmax_rows(x: Tensor, fallback: Optional[Tensor] = None) -> Tensor:
    """Softmax over the last axis with max subtraction.

    -inf entries map to exactly 0. A row that is -inf everywhere raises
    MaskedRowError unless `fallback` (same shape as x) is given, in which case
    that row is taken from `fallback` instead.
    """
    x = np.asarray(x, dtype=np.float64)
    row_max = x.max(axis=-1, keepdims=True)
    dead = np.isneginf(row_max)
    if dead.any():
        if fallback is None:
            raise MaskedRowError(f"{int(dead.sum())} attention row(s) fully masked")
        if fallback.shape != x.shape:
            raise DimensionError("softmax fallback shape", x.shape, fallback.shape)
        x = np.where(dead, fallback, x)
        row_max = x.max(axis=-1, keepdims=True)
    e = np.exp(x - row_max)
    return e / e.sum(axis=-1, keepdims=True)


def linear(layer: LinearLayer, x: Tensor) -> Tensor:
    """Apply a linear layer to the last axis of x"""
    if x.shape[-1] != layer.in_features:
        raise DimensionError("linear input width", x.shape, layer.weight.shape)
    flat = x.reshape(-1, layer.in_features)
    y = flat @ layer.weight.T + layer.bias
    return y.reshape(x.shape[:-1] + (layer.out_features,))


def sinusoidal_pos_embed(h: int, w: int, c: int) -> Tensor:
    """Fixed 2D sinusoidal embedding [h, w, c].

    The first c/2 channels encode the row, the last c/2 the column; inside
    each half even channels are sin and odd channels cos of pos * 10000^(-2k/(c/2)).
    """
    if c <= 0 or c % 4:
        raise ConfigError(f"positional embedding width must be divisible by 4, got {c}")
    half = c // 2
    freqs = np.power(10000.0, -np.arange(0, half, 2, dtype=np.float64) / half)

    def axis_embed(n: int) -> np.ndarray:
        phase = np.arange(n, dtype=np.float64)[:, None] * freqs[None, :]
        pe = np.zeros((n, half))
        pe[:, 0::2] = np.sin(phase)
        pe[:, 1::2] = np.cos(phase)
        return pe

    pe = np.zeros((h, w, c))
    pe[:, :, :half] = axis_embed(h)[:, None, :]
    pe[:, :, half:] = axis_embed(w)[None, :, :]
    return pe


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Same-size 2D convolution (cross-correlation) with zero padding.

    x is [H, W, Cin], weight is [Cout, Cin, k, k] with odd k.
    """
    cout, cin, k, k2 = weight.shape
    if k != k2 or k % 2 == 0:
        raise ConfigError(f"conv kernel must be square and odd, got {k}x{k2}")
    if x.ndim != 3 or x.shape[2] != cin:
        raise DimensionError("conv input channels", x.shape, weight.shape)
    r = k // 2
    padded = np.pad(x, ((r, r), (r, r), (0, 0)))
    cols = sliding_window_view(padded, (k, k), axis=(0, 1))
    h, w = x.shape[:2]
    out = cols.reshape(h * w, cin * k * k) @ weight.reshape(cout, -1).T
    if bias is not None:
        out = out + bias
    return out.reshape(h, w, cout)


def avg_pool2(x: Tensor) -> Tensor:
    """2x2 average pooling with stride 2"""
    h, w = x.shape[:2]
    if h % 2 or w % 2:
        raise DimensionError("avg_pool2 needs even spatial dims", x.shape)
    return x.reshape(h // 2, 2, w // 2, 2, -1).mean(axis=(1, 3))


def upsample_nearest2(x: Tensor) -> Tensor:
    """2x nearest-neighbour upsampling of [H, W, C]"""
    return np.repeat(np.repeat(x, 2, axis=0), 2, axis=1)


def relu(x: Tensor) -> Tensor:
    return np.maximum(x, 0.0)


def sigmoid(x: Tensor) -> Tensor:
    return expit(x)


def tokens(x: Tensor) -> Tuple[Tensor, Tuple[int, int]]:
    """Flatten [H, W, C] into [H*W, C] tokens, returning the grid size"""
    h, w, c = x.shape
    return x.reshape(h * w, c), (h, w)
