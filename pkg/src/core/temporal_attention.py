"""
Pixel-level temporal matching against a two-entry memory bank

Long-term memory is the first frame and is matched globally; short-term
memory is the previous frame and is matched inside a w x w window.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import ArgumentError, ConfigError, DimensionError, StateError
from .image_io import Image, resample_bilinear
from .tensor_core import LinearLayer, Tensor, matmul, softmax_rows
from .weights import WeightStore

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AttentionConfig:
    C: int = 128
    w: int = 15

    def __post_init__(self):
        if self.C <= 0:
            raise ConfigError(f"channel dim must be positive, got {self.C}")
        if self.w < 1 or self.w % 2 == 0:
            raise ConfigError(f"local window must be odd and >= 1, got {self.w}")


@dataclass(frozen=True)
class MemoryEntry:
    """One memorized frame: features, soft mask at feature resolution, cached K/V"""
    frame_index: int
    feature: Tensor
    mask: Tensor
    keys: Tensor
    values: Tensor

    @property
    def grid(self):
        return self.feature.shape[:2]


@dataclass(frozen=True)
class MemoryBank:
    long_term: Optional[MemoryEntry] = None
    short_term: Optional[MemoryEntry] = None
    frame_index: int = 0

    @property
    def is_empty(self) -> bool:
        return self.long_term is None

    @property
    def stored_frames(self):
        """Frame indices currently held, long-term first"""
        if self.is_empty:
            return ()
        return self.long_term.frame_index, self.short_term.frame_index

    @property
    def token_count(self) -> int:
        if self.is_empty:
            return 0
        return self.long_term.keys.shape[0] + self.short_term.keys.shape[0]


class FgEmbedder:
    """Maps a soft mask value to an additive C-dim embedding"""

    def __init__(self, layer: LinearLayer):
        if layer.in_features != 1:
            raise DimensionError("foreground embedder must take one input", layer.weight.shape)
        self.layer = layer

    def __call__(self, mask_values: Tensor) -> Tensor:
        return self.layer(np.asarray(mask_values, dtype=np.float64).reshape(-1, 1))


def ff_attn(Q: Tensor, K: Tensor, V: Tensor, S: Tensor, fe: FgEmbedder) -> Tensor:
    """softmax(Q K^T / sqrt(C)) (V + FE(S))"""
    if Q.ndim != 2 or K.ndim != 2 or V.ndim != 2 or Q.shape[1] != K.shape[1]:
        raise DimensionError("query/key widths differ", Q.shape, K.shape)
    S = np.asarray(S, dtype=np.float64).reshape(-1)
    if not (K.shape[0] == V.shape[0] == S.shape[0]):
        raise ArgumentError(f"memory token counts differ: K {K.shape[0]}, V {V.shape[0]}, S {S.shape[0]}")
    scores = matmul(Q, K.T) / math.sqrt(Q.shape[1])
    return matmul(softmax_rows(scores), V + fe(S))


class TemporalMatcher:
    """Projections and attention for pixel-level temporal feature extraction"""

    def __init__(self, store: WeightStore, cfg: AttentionConfig, prefix: str = "temporal"):
        self.cfg = cfg
        C = cfg.C
        self.q_proj = store.linear(f"{prefix}.q_proj", C, C)
        self.k_proj = store.linear(f"{prefix}.k_proj", C, C)
        self.v_proj = store.linear(f"{prefix}.v_proj", C, C)
        self.fe = FgEmbedder(store.linear(f"{prefix}.fg_embed", 1, C))
        self.combine_proj = store.linear(f"{prefix}.combine", C, C)

    def _check_feature(self, feat: Tensor):
        if feat.ndim != 3 or feat.shape[2] != self.cfg.C:
            raise DimensionError(f"feature map must be [H, W, {self.cfg.C}]", feat.shape)

    def _mask_at(self, mask: Image, grid) -> Tensor:
        if mask.channels != 1:
            raise ArgumentError("memory mask must be single-channel")
        return resample_bilinear(mask, *grid).plane.copy()

    def make_entry(self, frame_index: int, feat: Tensor, mask: Image) -> MemoryEntry:
        """Project and cache keys/values for a frame entering memory"""
        self._check_feature(feat)
        tok = feat.reshape(-1, self.cfg.C)
        return MemoryEntry(frame_index, feat.copy(), self._mask_at(mask, feat.shape[:2]),
                           self.k_proj(tok), self.v_proj(tok))

    def global_attn(self, current: Tensor, bank: MemoryBank) -> Tensor:
        """Attend from every pixel to every long-term memory token"""
        if bank.is_empty:
            raise StateError("global attention needs a populated memory bank")
        self._check_feature(current)
        h, w, C = current.shape
        entry = bank.long_term
        q = self.q_proj(current.reshape(-1, C))
        out = ff_attn(q, entry.keys, entry.values, entry.mask, self.fe)
        return out.reshape(h, w, C)

    def local_attn(self, current: Tensor, bank: MemoryBank, w: Optional[int] = None) -> Tensor:
        """Attend from pixel i only to short-term tokens inside the w x w window around i"""
        w = self.cfg.w if w is None else w
        if w < 1 or w % 2 == 0:
            raise ConfigError(f"local window must be odd and >= 1, got {w}")
        if bank.is_empty or bank.short_term is None:
            raise StateError("local attention needs a short-term memory entry")
        self._check_feature(current)
        entry = bank.short_term
        h, wd, C = current.shape
        if entry.grid != (h, wd):
            raise DimensionError("memory grid differs from current grid", entry.grid, (h, wd))
        r = w // 2
        q = self.q_proj(current.reshape(-1, C)).reshape(h, wd, C)
        keys = entry.keys.reshape(h, wd, C)
        values = (entry.values + self.fe(entry.mask)).reshape(h, wd, C)
        scale = math.sqrt(C)
        out = np.zeros((h, wd, C))
        for y in range(h):
            y0, y1 = max(0, y - r), min(h, y + r + 1)
            for x in range(wd):
                x0, x1 = max(0, x - r), min(wd, x + r + 1)
                k_win = keys[y0:y1, x0:x1].reshape(-1, C)
                v_win = values[y0:y1, x0:x1].reshape(-1, C)
                scores = matmul(q[y, x][None, :], k_win.T) / scale
                out[y, x] = matmul(softmax_rows(scores), v_win)[0]
        return out

    def combine_gl(self, f_global: Tensor, f_local: Tensor) -> Tensor:
        """Sum of the two matched maps followed by a linear projection"""
        if f_global.shape != f_local.shape:
            raise ArgumentError(f"cannot combine maps of shapes {f_global.shape} and {f_local.shape}")
        return self.combine_proj(f_global + f_local)

    def first_frame_self_attn(self, current: Tensor, init_mask: Image, bank: MemoryBank) -> Tensor:
        """Self-attention fallback when memory is still empty"""
        if not bank.is_empty or bank.frame_index != 0:
            raise StateError("self-attention fallback is only valid before the first memory update")
        self._check_feature(current)
        h, w, C = current.shape
        tok = current.reshape(-1, C)
        mask = self._mask_at(init_mask, (h, w))
        out = ff_attn(self.q_proj(tok), self.k_proj(tok), self.v_proj(tok), mask, self.fe)
        return out.reshape(h, w, C)

    def match(self, current: Tensor, bank: MemoryBank, init_mask: Optional[Image] = None) -> Tensor:
        """Temporally matched features F_m for the current frame"""
        if bank.is_empty:
            if init_mask is None:
                raise StateError("first frame needs the initial coarse mask")
            return self.first_frame_self_attn(current, init_mask, bank)
        return self.combine_gl(self.global_attn(current, bank), self.local_attn(current, bank))

    def memory_update(self, bank: MemoryBank, feat: Tensor, pred_mask: Image) -> MemoryBank:
        """First frame fills both slots; later frames replace the short-term slot only"""
        index = bank.frame_index + 1
        entry = self.make_entry(index, feat, pred_mask)
        if bank.is_empty:
            new_bank = MemoryBank(long_term=entry, short_term=entry, frame_index=index)
        else:
            new_bank = replace(bank, short_term=entry, frame_index=index)
        logger.debug("Memory holds frames %s (%d tokens)", new_bank.stored_frames, new_bank.token_count)
        return new_bank
