"""
Object-level query generation: pixel decoder, masked-attention transformer
decoder, instance mask head and set-prediction matching/losses.

The instance head, matching and losses are training-side only. The inference
engine consumes the refined queries and never calls them.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ArgumentError, CapacityError, ConfigError, DimensionError
from .image_io import Image, binarize, resample_bilinear
from .tensor_core import (LinearLayer, Tensor, conv2d, matmul, relu, sigmoid, softmax_rows,
                          upsample_nearest2)
from .weights import WeightStore

logger = logging.getLogger(__name__)

_BLOCKED = 1e9


@dataclass
class QuerySet:
    """N object queries of width C plus every intermediate state (initial first)"""
    queries: Tensor
    layer_outputs: List[Tensor] = field(default_factory=list)

    def __post_init__(self):
        if self.queries.ndim != 2:
            raise DimensionError("queries must be [N, C]", self.queries.shape)
        if not self.layer_outputs:
            self.layer_outputs = [self.queries]

    @property
    def N(self) -> int:
        return self.queries.shape[0]

    @property
    def C(self) -> int:
        return self.queries.shape[1]


@dataclass
class PixelDecoderOut:
    multiscale: List[Tensor]
    per_pixel_embed: Tensor


@dataclass
class InstancePrediction:
    masks: Tensor
    objectness: Optional[Tensor] = None

    @property
    def N(self) -> int:
        return self.masks.shape[0]


@dataclass
class Assignment:
    """Matched (gt index, query index) pairs in gt order"""
    pairs: List[Tuple[int, int]]
    total_cost: float
    cost_matrix: Tensor

    def query_for(self, gt_index: int) -> int:
        return dict(self.pairs)[gt_index]


class PixelDecoder:
    """Top-down path: 2x nearest upsample, 3x3 conv, add the lateral of the matching level"""

    def __init__(self, store: WeightStore, backbone_channels: Sequence[int], C: int, prefix: str = "oqg.pixel"):
        if len(backbone_channels) != 4:
            raise ConfigError(f"pixel decoder expects 4 backbone levels, got {len(backbone_channels)}")
        self.backbone_channels = tuple(backbone_channels)
        self.C = C
        self.laterals = [store.linear(f"{prefix}.lateral{i + 1}", ch, C, bias=False)
                         for i, ch in enumerate(backbone_channels)]
        self.convs = [store.conv(f"{prefix}.conv{i}", C, C, 3) for i in range(3)]
        self.embed = store.linear(f"{prefix}.mask_features", C, C, bias=False)

    def check_pyramid(self, pyramid: Sequence[Tensor]):
        if len(pyramid) != 4:
            raise ArgumentError(f"pyramid must have 4 levels, got {len(pyramid)}")
        for i, level in enumerate(pyramid):
            if level.ndim != 3 or level.shape[2] != self.backbone_channels[i]:
                raise ArgumentError(f"pyramid level {i + 1} has shape {level.shape}, "
                                    f"expected {self.backbone_channels[i]} channels")
            if i and (level.shape[0] * 2, level.shape[1] * 2) != pyramid[i - 1].shape[:2]:
                raise ArgumentError(f"pyramid level {i + 1} {level.shape[:2]} is not half of "
                                    f"level {i} {pyramid[i - 1].shape[:2]}")

    def __call__(self, pyramid: Sequence[Tensor]) -> PixelDecoderOut:
        self.check_pyramid(pyramid)
        x = self.laterals[3](pyramid[3])
        scales = []
        for i, level in enumerate((pyramid[2], pyramid[1], pyramid[0])):
            x = conv2d(upsample_nearest2(x), self.convs[i]) + self.laterals[2 - i](level)
            scales.append(x)
        return PixelDecoderOut(scales, self.embed(scales[-1]))


def pixel_decode(decoder: PixelDecoder, pyramid: Sequence[Tensor]) -> PixelDecoderOut:
    return decoder(pyramid)


class DecoderLayer:
    """Masked cross-attention, query self-attention and a 2-layer MLP, each with a residual"""

    def __init__(self, store: WeightStore, C: int, hidden: int, prefix: str):
        self.C = C
        self.cross_q = store.linear(f"{prefix}.cross.q", C, C)
        self.cross_k = store.linear(f"{prefix}.cross.k", C, C)
        self.cross_v = store.linear(f"{prefix}.cross.v", C, C)
        self.cross_o = store.linear(f"{prefix}.cross.out", C, C)
        self.self_q = store.linear(f"{prefix}.self.q", C, C)
        self.self_k = store.linear(f"{prefix}.self.k", C, C)
        self.self_v = store.linear(f"{prefix}.self.v", C, C)
        self.self_o = store.linear(f"{prefix}.self.out", C, C)
        self.fc1 = store.linear(f"{prefix}.mlp.fc1", C, hidden)
        self.fc2 = store.linear(f"{prefix}.mlp.fc2", hidden, C)

    def cross_attention(self, q: Tensor, tok: Tensor, attn_mask: Optional[Tensor]) -> Tensor:
        scores = matmul(self.cross_q(q), self.cross_k(tok).T) / math.sqrt(self.C)
        if attn_mask is None:
            weights = softmax_rows(scores)
        else:
            # rows with no visible token attend everywhere
            weights = softmax_rows(scores + attn_mask, fallback=scores)
        return matmul(weights, self.cross_v(tok))

    def self_attention(self, q: Tensor) -> Tensor:
        scores = matmul(self.self_q(q), self.self_k(q).T) / math.sqrt(self.C)
        return matmul(softmax_rows(scores), self.self_v(q))

    def __call__(self, q: Tensor, feat: Tensor, attn_mask: Optional[Tensor] = None) -> Tensor:
        tok = feat.reshape(-1, self.C)
        if attn_mask is not None and attn_mask.shape != (q.shape[0], tok.shape[0]):
            raise ArgumentError(f"attention mask shape {attn_mask.shape} does not match "
                                f"{q.shape[0]} queries x {tok.shape[0]} tokens")
        q = q + self.cross_o(self.cross_attention(q, tok, attn_mask))
        q = q + self.self_o(self.self_attention(q))
        return q + self.fc2(relu(self.fc1(q)))


def decoder_layer(layer: DecoderLayer, q: QuerySet, feat: Tensor, attn_mask: Optional[Tensor] = None) -> QuerySet:
    """One decoder step; the result keeps the full history of query states"""
    refined = layer(q.queries, feat, attn_mask)
    return QuerySet(refined, q.layer_outputs + [refined])


def mask_logits(queries: Tensor, per_pixel_embed: Tensor) -> Tensor:
    """Per-pixel dot product of embeddings and queries -> [N, H, W]"""
    h, w, c = per_pixel_embed.shape
    if queries.shape[1] != c:
        raise ArgumentError(f"query width {queries.shape[1]} differs from embedding width {c}")
    logits = matmul(per_pixel_embed.reshape(-1, c), queries.T)
    return logits.T.reshape(queries.shape[0], h, w)


def attention_mask_from_logits(logits: Tensor, grid: Tuple[int, int]) -> Tensor:
    """sigmoid >= 0.5 after bilinear resampling to grid, as an additive {0, -inf} mask [N, tokens]"""
    rows = []
    for plane in sigmoid(logits):
        visible = binarize(resample_bilinear(Image(plane), *grid), 0.5).plane
        rows.append(np.where(visible > 0, 0.0, -np.inf).reshape(-1))
    return np.stack(rows)


class ObjectQueryGenerator:
    """Learnable queries refined against the pixel decoder scales, coarse to fine"""

    def __init__(self, store: WeightStore, backbone_channels: Sequence[int], C: int, N: int, L: int,
                 hidden_mult: int = 2, prefix: str = "oqg"):
        if N < 1 or L < 1:
            raise ConfigError(f"need N >= 1 and L >= 1, got N={N}, L={L}")
        self.C, self.N, self.L = C, N, L
        self.pixel_decoder = PixelDecoder(store, backbone_channels, C, prefix=f"{prefix}.pixel")
        self.query_embed = store.uniform(f"{prefix}.query_embed", (N, C), 1.0)
        self.layers = [DecoderLayer(store, C, hidden_mult * C, f"{prefix}.layer{i}") for i in range(L)]
        self.objectness_head = store.linear(f"{prefix}.objectness", C, 1)

    def generate_queries(self, pyramid: Sequence[Tensor]) -> Tuple[QuerySet, PixelDecoderOut]:
        """Return the refined queries q_o (with intermediates) and the pixel decoder output"""
        pp = self.pixel_decoder(pyramid)
        qset = QuerySet(self.query_embed.copy())
        for i, layer in enumerate(self.layers):
            feat = pp.multiscale[i % len(pp.multiscale)]
            logits = mask_logits(qset.queries, pp.per_pixel_embed)
            attn_mask = attention_mask_from_logits(logits, feat.shape[:2])
            qset = decoder_layer(layer, qset, feat, attn_mask)
        return qset, pp

    def predict_instance_masks(self, q: QuerySet, pp: PixelDecoderOut, layer_index: int = -1) -> InstancePrediction:
        """Instance mask logits and objectness for one stored query state"""
        queries = q.layer_outputs[layer_index]
        return InstancePrediction(mask_logits(queries, pp.per_pixel_embed),
                                  self.objectness_head(queries)[:, 0])


def predict_instance_masks(q: QuerySet, pp: PixelDecoderOut,
                           objectness_head: Optional[LinearLayer] = None) -> InstancePrediction:
    """Mask logits = per-pixel embedding . query for every query"""
    objectness = objectness_head(q.queries)[:, 0] if objectness_head is not None else None
    return InstancePrediction(mask_logits(q.queries, pp.per_pixel_embed), objectness)


def _gt_stack(gt: Sequence[Image], size: Tuple[int, int]) -> Tensor:
    planes = []
    for g in gt:
        if g.size != size:
            g = binarize(resample_bilinear(g, *size), 0.5)
        planes.append(g.plane)
    return np.stack(planes) if planes else np.zeros((0,) + size)


def dice_score(prob: Tensor, target: Tensor) -> float:
    """Smoothed Dice (2|p.g| + 1) / (|p| + |g| + 1)"""
    return float((2.0 * np.sum(prob * target) + 1.0) / (np.sum(prob) + np.sum(target) + 1.0))


def matching_cost(pred: InstancePrediction, gt: Sequence[Image], objectness_weight: float = 0.0) -> Tensor:
    """cost[i, j] = 1 - Dice(sigmoid(pred_j), gt_i) - objectness_weight * sigmoid(obj_j)"""
    probs = sigmoid(pred.masks).reshape(pred.N, -1)
    targets = _gt_stack(gt, pred.masks.shape[1:]).reshape(len(gt), probs.shape[1])
    inter = targets @ probs.T
    dice = (2.0 * inter + 1.0) / (targets.sum(axis=1)[:, None] + probs.sum(axis=1)[None, :] + 1.0)
    cost = 1.0 - dice
    if objectness_weight and pred.objectness is not None:
        cost = cost - objectness_weight * sigmoid(pred.objectness)[None, :]
    return cost


def _total(cost: Tensor, cols: Sequence[int]) -> float:
    total = 0.0
    for i, j in enumerate(cols):
        total += float(cost[i, j])
    return total


def _solve(cost: Tensor) -> List[int]:
    rows, cols = linear_sum_assignment(cost)
    order = np.argsort(rows)
    return [int(c) for c in cols[order]]


def hungarian_match(pred: InstancePrediction, gt: Sequence[Image], objectness_weight: float = 0.0) -> Assignment:
    """Minimum-cost one-to-one assignment of gt masks to queries.

    Among optimal assignments the one with the lexicographically smallest
    query indices (in gt order) is returned.
    """
    if len(gt) > pred.N:
        raise CapacityError(f"{len(gt)} ground-truth objects but only {pred.N} queries")
    cost = matching_cost(pred, gt, objectness_weight)
    if not len(gt):
        return Assignment([], 0.0, cost)
    cols = _solve(cost)
    best = _total(cost, cols)
    fixed: Dict[int, int] = {}
    for i in range(len(gt)):
        for j in range(pred.N):
            if j in fixed.values():
                continue
            trial = cost.copy()
            for row, col in list(fixed.items()) + [(i, j)]:
                trial[row, :] = _BLOCKED
                trial[:, col] = _BLOCKED
                trial[row, col] = cost[row, col]
            candidate = _solve(trial)
            if _total(cost, candidate) <= best + 1e-12:
                fixed[i] = j
                cols = candidate
                break
    pairs = [(i, cols[i]) for i in range(len(gt))]
    return Assignment(pairs, _total(cost, cols), cost)


def bce_with_logits(logits: Tensor, target: Tensor) -> float:
    """Mean binary cross-entropy computed from logits"""
    loss = np.maximum(logits, 0.0) - logits * target + np.log1p(np.exp(-np.abs(logits)))
    return float(loss.mean())


def instance_losses(pred: InstancePrediction, gt: Sequence[Image], assignment: Assignment) -> Dict[str, float]:
    """Dice and BCE averaged over matched pairs"""
    if not assignment.pairs:
        return {"dice_loss": 0.0, "bce_loss": 0.0}
    targets = _gt_stack(gt, pred.masks.shape[1:])
    dice, bce = [], []
    for i, j in assignment.pairs:
        dice.append(1.0 - dice_score(sigmoid(pred.masks[j]), targets[i]))
        bce.append(bce_with_logits(pred.masks[j], targets[i]))
    return {"dice_loss": float(np.mean(dice)), "bce_loss": float(np.mean(bce))}


def set_prediction_losses(generator: ObjectQueryGenerator, q: QuerySet, pp: PixelDecoderOut,
                          gt: Sequence[Image], objectness_weight: float = 0.0) -> Dict:
    """Final-layer losses plus auxiliary losses for every stored query state (shared heads)"""
    per_layer = []
    for index in range(len(q.layer_outputs)):
        pred = generator.predict_instance_masks(q, pp, layer_index=index)
        assignment = hungarian_match(pred, gt, objectness_weight)
        per_layer.append(instance_losses(pred, gt, assignment))
    result = dict(per_layer[-1])
    result["aux"] = per_layer[:-1]
    logger.debug("Set prediction losses: %s", result)
    return result
