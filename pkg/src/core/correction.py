"""
Object-guided correction and refinement of the temporally matched features
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import ArgumentError, DimensionError
from .image_io import Image, binarize, dilate, resample_bilinear
from .tensor_core import Tensor, matmul, relu, sinusoidal_pos_embed, softmax_rows
from .weights import WeightStore

logger = logging.getLogger(__name__)


@dataclass
class FbEmbedding:
    """Learnable foreground-background embedding E_fb [N, C]"""
    values: Tensor


@dataclass
class GuidanceMask:
    """Additive attention mask over the feature grid, entries exactly 0 or -inf"""
    values: Tensor
    source_frame: int = 0

    @property
    def support(self) -> int:
        return int(np.count_nonzero(self.values == 0.0))

    @property
    def empty(self) -> bool:
        return self.support == 0

    @property
    def grid(self) -> Tuple[int, int]:
        return self.values.shape

    @classmethod
    def unmasked(cls, h: int, w: int, source_frame: int = 0) -> "GuidanceMask":
        return cls(np.zeros((h, w)), source_frame)


def make_guidance(prev_mask: Image, feat_h: int, feat_w: int, ks: int, source_frame: int = 0) -> GuidanceMask:
    """Resample the previous mask to the feature grid, binarize at 0.5, dilate, map 1 -> 0 and 0 -> -inf"""
    support = dilate(binarize(resample_bilinear(prev_mask, feat_h, feat_w), 0.5), ks).plane
    guidance = GuidanceMask(np.where(support > 0, 0.0, -np.inf), source_frame)
    if guidance.empty:
        logger.debug("Guidance from frame %d is empty; attention falls back to unmasked", source_frame)
    return guidance


def fuse_fb(e_fb: FbEmbedding, q_o: Tensor) -> Tensor:
    """q_fb = E_fb + q_o"""
    if e_fb.values.shape != q_o.shape:
        raise ArgumentError(f"E_fb shape {e_fb.values.shape} differs from query shape {q_o.shape}")
    return e_fb.values + q_o


class ObjectGuidedCorrection:
    """Guided query-to-pixel attention, pixel call-back and self-attention refinement"""

    def __init__(self, store: WeightStore, C: int, N: int, hidden_mult: int = 2, prefix: str = "ogcr"):
        if C % 4:
            raise ArgumentError(f"channel dim must be divisible by 4 for the positional embedding, got {C}")
        self.C, self.N = C, N
        self.e_fb = FbEmbedding(store.uniform(f"{prefix}.e_fb", (N, C), 1.0))
        self.q_proj = store.linear(f"{prefix}.fq.q", C, C)
        self.k_proj = store.linear(f"{prefix}.fq.k", C, C)
        self.v_proj = store.linear(f"{prefix}.fq.v", C, C)
        self.callback_proj = store.linear(f"{prefix}.callback", 2 * C, C)
        self.ref_q = store.linear(f"{prefix}.refine.q", C, C)
        self.ref_k = store.linear(f"{prefix}.refine.k", C, C)
        self.ref_v = store.linear(f"{prefix}.refine.v", C, C)
        self.ref_o = store.linear(f"{prefix}.refine.out", C, C)
        self.ffn1 = store.linear(f"{prefix}.refine.ffn1", C, hidden_mult * C)
        self.ffn2 = store.linear(f"{prefix}.refine.ffn2", hidden_mult * C, C)

    def _check_map(self, f_m: Tensor):
        if f_m.ndim != 3 or f_m.shape[2] != self.C:
            raise DimensionError(f"feature map must be [H, W, {self.C}]", f_m.shape)

    def fq_attn_weights(self, q_fb: Tensor, f_m: Tensor, m_s: GuidanceMask) -> Tensor:
        """Attention weights [N, H*W] of softmax(Q_q K_f^T / sqrt(C) + M_S)"""
        self._check_map(f_m)
        h, w, C = f_m.shape
        if m_s.grid != (h, w):
            raise ArgumentError(f"guidance grid {m_s.grid} does not match feature grid {(h, w)}")
        tok = f_m.reshape(-1, C)
        keys = self.k_proj(tok) + sinusoidal_pos_embed(h, w, C).reshape(-1, C)
        scores = matmul(self.q_proj(q_fb), keys.T) / math.sqrt(C)
        if m_s.empty:
            return softmax_rows(scores)
        return softmax_rows(scores + m_s.values.reshape(1, -1))

    def fq_attn(self, q_fb: Tensor, f_m: Tensor, m_s: GuidanceMask) -> Tensor:
        """Guided cross-attention from fused queries to pixel features -> X_m [N, C]"""
        weights = self.fq_attn_weights(q_fb, f_m, m_s)
        return matmul(weights, self.v_proj(f_m.reshape(-1, self.C)))

    def callback_correct(self, x_m: Tensor, f_m: Tensor) -> Tensor:
        """Aggregate object context into every pixel, concatenate with F_m and project back to C"""
        self._check_map(f_m)
        if x_m.ndim != 2 or x_m.shape[1] != self.C:
            raise ArgumentError(f"object features {x_m.shape} do not have width {self.C}")
        h, w, C = f_m.shape
        tok = f_m.reshape(-1, C)
        affinity = matmul(tok, x_m.T) / math.sqrt(C)
        context = matmul(softmax_rows(affinity), x_m)
        return self.callback_proj(np.concatenate([context, tok], axis=1)).reshape(h, w, C)

    def refine(self, features: Tensor) -> Tensor:
        """Full self-attention over the grid and a feed-forward block, both residual"""
        self._check_map(features)
        h, w, C = features.shape
        x = features.reshape(-1, C)
        scores = matmul(self.ref_q(x), self.ref_k(x).T) / math.sqrt(C)
        x = x + self.ref_o(matmul(softmax_rows(scores), self.ref_v(x)))
        x = x + self.ffn2(relu(self.ffn1(x)))
        return x.reshape(h, w, C)

    def __call__(self, q_o: Optional[Tensor], f_m: Tensor, m_s: GuidanceMask) -> Tuple[Tensor, Tensor]:
        """Return (F_o, attention weights [N, H*W])"""
        q_fb = self.e_fb.values.copy() if q_o is None else fuse_fb(self.e_fb, q_o)
        weights = self.fq_attn_weights(q_fb, f_m, m_s)
        x_m = matmul(weights, self.v_proj(f_m.reshape(-1, self.C)))
        return self.refine(self.callback_correct(x_m, f_m)), weights
