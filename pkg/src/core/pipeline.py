"""
Sequential matting engine

Per frame: backbone stub -> pixel-level temporal matching -> object queries ->
guided correction and refinement -> matting decoder -> memory update.
"""

import json
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config_manager import PipelineConfig
from .correction import GuidanceMask, ObjectGuidedCorrection, make_guidance
from .errors import ArgumentError, MatteBuddyError, PipelineIOError, UsageError
from .image_io import (Image, Manifest, binarize, load_manifest, read_image, read_sequence,
                       save_manifest, write_image)
from .logger import RunLogger
from .metrics import MetricsReport, evaluate, write_report_json
from .object_query import ObjectQueryGenerator
from .temporal_attention import AttentionConfig, MemoryBank, TemporalMatcher
from .tensor_core import Tensor, avg_pool2, conv2d, relu, sigmoid, upsample_nearest2
from .weights import WeightStore

try:
    import psutil
    PSUTIL_AVAILABLE = True
except ImportError:
    PSUTIL_AVAILABLE = False

logger = logging.getLogger(__name__)

STRIDE = 16
BN_EPS = 1e-5


@dataclass
class FrameResult:
    alpha: Image
    fg_mask: Image
    mask_prob: Image
    diagnostics: Dict[str, Any] = field(default_factory=dict)


@dataclass
class SequenceResult:
    results: List[FrameResult]
    output_manifest: Manifest
    report: Optional[MetricsReport] = None


@dataclass
class EngineState:
    """Carried between frames: memory bank plus the previous mask in padded coordinates"""
    bank: MemoryBank = field(default_factory=MemoryBank)
    prev_mask: Optional[Image] = None


def pad_to_stride(data: np.ndarray, stride: int = STRIDE) -> Tuple[np.ndarray, Tuple[int, int]]:
    """Reflect-pad bottom/right up to a multiple of stride; returns (padded, original size)"""
    h, w = data.shape[:2]
    ph, pw = -h % stride, -w % stride
    if not ph and not pw:
        return data, (h, w)
    pad = [(0, ph), (0, pw)] + [(0, 0)] * (data.ndim - 2)
    return np.pad(data, pad, mode="reflect" if min(h, w) > 1 else "edge"), (h, w)


def attention_stats(weights: Tensor) -> Dict[str, float]:
    """Peak weight and mean row entropy of an attention matrix"""
    safe = np.where(weights > 0, weights, 1.0)
    entropy = -np.sum(weights * np.log(safe), axis=1)
    return {"max": float(np.max(weights)), "mean_entropy": float(np.mean(entropy))}


def _rss_mb() -> Optional[float]:
    if not PSUTIL_AVAILABLE:
        return None
    return psutil.Process().memory_info().rss / 1024 / 1024


class BackboneStub:
    """Four levels of bias-free 3x3 conv + ReLU + 2x2 average pool (strides 2, 4, 8, 16)"""

    def __init__(self, store: WeightStore, channels: Sequence[int], prefix: str = "backbone"):
        self.channels = tuple(channels)
        cin = [3] + list(self.channels[:-1])
        self.kernels = [store.conv(f"{prefix}.level{i + 1}", cin[i], c, 3) for i, c in enumerate(self.channels)]

    def __call__(self, frame: Tensor) -> List[Tensor]:
        h, w = frame.shape[:2]
        if h % STRIDE or w % STRIDE:
            raise ArgumentError(f"backbone input {h}x{w} is not a multiple of {STRIDE}; pad it first")
        pyramid = []
        x = frame
        for kernel in self.kernels:
            x = avg_pool2(relu(conv2d(x, kernel)))
            pyramid.append(x)
        return pyramid


def backbone_stub(backbone: BackboneStub, frame: Image) -> List[Tensor]:
    """Feature pyramid F_s1..F_s4 of a 3-channel frame"""
    if frame.channels != 3:
        raise ArgumentError(f"backbone expects an RGB frame, got {frame.channels} channel(s)")
    return backbone(frame.data)


class MattingDecoder:
    """Upsample, concatenate the skip, conv, batch norm (inference mode), ReLU; then alpha and mask heads"""

    def __init__(self, store: WeightStore, C: int, backbone_channels: Sequence[int],
                 decoder_channels: Sequence[int], prefix: str = "decoder"):
        skips = (backbone_channels[2], backbone_channels[1], backbone_channels[0])
        cin = [C] + list(decoder_channels[:-1])
        self.blocks = []
        for i, (skip, cout) in enumerate(zip(skips, decoder_channels)):
            name = f"{prefix}.block{i + 1}"
            self.blocks.append({
                "conv": store.conv(f"{name}.conv", cin[i] + skip, cout, 3),
                "gamma": store.constant(f"{name}.bn.gamma", (cout,), 1.0),
                "beta": store.constant(f"{name}.bn.beta", (cout,), 0.0),
                "mean": store.constant(f"{name}.bn.running_mean", (cout,), 0.0),
                "var": store.constant(f"{name}.bn.running_var", (cout,), 1.0),
            })
        self.alpha_head = store.linear(f"{prefix}.alpha_head", decoder_channels[-1], 1)
        self.mask_head = store.linear(f"{prefix}.mask_head", decoder_channels[-1], 1)

    @staticmethod
    def batch_norm(x: Tensor, block: Dict[str, Tensor]) -> Tensor:
        return (x - block["mean"]) / np.sqrt(block["var"] + BN_EPS) * block["gamma"] + block["beta"]

    def __call__(self, f_o: Tensor, pyramid: Sequence[Tensor]) -> Tuple[Tensor, Tensor]:
        if f_o.shape[:2] != pyramid[3].shape[:2]:
            raise ArgumentError(f"decoder input grid {f_o.shape[:2]} is not at stride {STRIDE} "
                                f"({pyramid[3].shape[:2]})")
        x = f_o
        for block, skip in zip(self.blocks, (pyramid[2], pyramid[1], pyramid[0])):
            x = np.concatenate([upsample_nearest2(x), skip], axis=2)
            x = relu(self.batch_norm(conv2d(x, block["conv"]), block))
        x = upsample_nearest2(x)
        alpha = np.clip(sigmoid(self.alpha_head(x)), 0.0, 1.0)
        mask_prob = sigmoid(self.mask_head(x))
        return alpha, mask_prob


def matting_decode(decoder: MattingDecoder, f_o: Tensor, pyramid: Sequence[Tensor]) -> Tuple[Image, Image, Image]:
    """(alpha, fg_mask, mask_prob) at the padded frame resolution"""
    alpha, mask_prob = decoder(f_o, pyramid)
    prob = Image(mask_prob)
    return Image(alpha), binarize(prob, 0.5), prob


class MattingPipeline:
    """All seeded stages for one configuration; one instance per sequence run"""

    def __init__(self, cfg: PipelineConfig, store: Optional[WeightStore] = None,
                 run_logger: Optional[RunLogger] = None):
        self.cfg = cfg.validate()
        self.store = store if store is not None else WeightStore(cfg.seed)
        self.run_logger = run_logger or RunLogger()
        self.backbone = BackboneStub(self.store, cfg.backbone_channels)
        self.input_proj = self.store.linear("pfe.input_proj", cfg.backbone_channels[-1], cfg.C)
        self.matcher = TemporalMatcher(self.store, AttentionConfig(cfg.C, cfg.w))
        self.oqg = ObjectQueryGenerator(self.store, cfg.backbone_channels, cfg.C, cfg.N, cfg.L, cfg.hidden_mult)
        self.ogcr = ObjectGuidedCorrection(self.store, cfg.C, cfg.N, cfg.hidden_mult)
        self.decoder = MattingDecoder(self.store, cfg.C, cfg.backbone_channels, cfg.decoder_channels)

    def guidance_for(self, prev_mask: Image, grid: Tuple[int, int], source_frame: int) -> GuidanceMask:
        if not self.cfg.use_guidance:
            return GuidanceMask.unmasked(*grid, source_frame)
        return make_guidance(prev_mask, grid[0], grid[1], self.cfg.ks, source_frame)

    def infer_frame(self, frame: Image, state: EngineState,
                    init_mask: Optional[Image] = None) -> Tuple[FrameResult, EngineState, Optional[Tensor]]:
        """Run one frame; returns (result, next state, guided attention weights or None)"""
        index = state.bank.frame_index + 1
        if state.bank.is_empty and init_mask is None:
            raise UsageError("the first frame needs an initial coarse mask")
        if init_mask is not None and init_mask.size != frame.size:
            raise ArgumentError(f"initial mask {init_mask.size} does not match frame size {frame.size}")

        data, original = pad_to_stride(frame.data)
        padded = data.shape[:2] != original
        if padded:
            self.run_logger.log_padding(index, original, data.shape[:2])
        prev_mask = state.prev_mask
        if state.bank.is_empty:
            prev_mask = Image(pad_to_stride(init_mask.data)[0])

        pyramid = backbone_stub(self.backbone, Image(data))
        feat = self.input_proj(pyramid[3])
        grid = feat.shape[:2]
        f_m = self.matcher.match(feat, state.bank, prev_mask if state.bank.is_empty else None)

        guidance = self.guidance_for(prev_mask, grid, index - 1)
        weights = None
        if self.cfg.use_ogcr:
            q_o = None
            if self.cfg.use_oqg:
                qset, _ = self.oqg.generate_queries(pyramid)
                q_o = qset.queries
            f_o, weights = self.ogcr(q_o, f_m, guidance)
        else:
            f_o = f_m
        alpha, fg_mask, mask_prob = matting_decode(self.decoder, f_o, pyramid)

        bank = self.matcher.memory_update(state.bank, feat, mask_prob)
        next_state = EngineState(bank=bank, prev_mask=fg_mask)

        h, w = original
        result = FrameResult(
            alpha=Image(alpha.data[:h, :w]),
            fg_mask=Image(fg_mask.data[:h, :w]),
            mask_prob=Image(mask_prob.data[:h, :w]),
            diagnostics={
                "frame": index,
                "padded": padded,
                "feature_grid": list(grid),
                "guidance_support": guidance.support,
                "guidance_total": grid[0] * grid[1],
                "memory_frames": list(bank.stored_frames),
                "memory_tokens": bank.token_count,
                "attention": attention_stats(weights) if weights is not None else None,
            },
        )
        self.run_logger.log_guidance(index, guidance.support, grid[0] * grid[1])
        self.run_logger.log_frame(index, float(result.alpha.data.mean()), int(result.fg_mask.data.sum()))
        rss = _rss_mb()
        if rss is not None:
            logger.debug("Frame %d done, RSS %.1f MB", index, rss)
        return result, next_state, weights


def infer_frame(pipeline: MattingPipeline, frame: Image, state: EngineState,
                init_mask: Optional[Image] = None) -> Tuple[FrameResult, EngineState]:
    result, next_state, _ = pipeline.infer_frame(frame, state, init_mask)
    return result, next_state


def _write_attention(weights: Tensor, grid: Tuple[int, int], out_dir: str, frame_index: int, maxval: int):
    for q, row in enumerate(weights):
        peak = float(row.max())
        plane = row.reshape(grid) / peak if peak > 0 else row.reshape(grid)
        write_image(Image(plane), os.path.join(out_dir, f"frame_{frame_index:04d}_q{q + 1:02d}.pgm"), maxval)


def _dump_json(data: Any, path: str):
    try:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(data, f, indent=2, sort_keys=True)
            f.write("\n")
    except OSError as e:
        raise PipelineIOError(f"cannot write JSON ({e.strerror})", path)


def _reproducible_config(cfg: PipelineConfig) -> Dict[str, Any]:
    data = cfg.to_dict()
    for key in ("input_manifest", "init_mask", "output_dir"):
        data.pop(key, None)
    return data


def run_sequence(manifest: Manifest, cfg: PipelineConfig, out_dir: str, init_mask: Optional[Image] = None,
                 store: Optional[WeightStore] = None, run_logger: Optional[RunLogger] = None) -> SequenceResult:
    """Infer every frame of a manifest and write alphas, masks, diagnostics and (with GT) metrics"""
    if init_mask is None:
        raise UsageError("run_sequence needs the initial coarse mask for frame 1")
    run_logger = run_logger or RunLogger(os.path.basename(os.path.normpath(out_dir)) or "run")
    pipeline = MattingPipeline(cfg, store, run_logger)
    os.makedirs(out_dir, exist_ok=True)
    attention_dir = os.path.join(out_dir, "attention")

    frame_paths = manifest.paths("frames")
    out_manifest = Manifest(frames=[os.path.relpath(p, out_dir) for p in frame_paths], alphas=[], masks=[],
                            fps=manifest.fps, seed=cfg.seed, base_dir=out_dir)
    state = EngineState()
    results = []
    for t, frame_path in enumerate(frame_paths):
        index = t + 1
        try:
            frame = read_image(frame_path)
            result, state, weights = pipeline.infer_frame(frame, state, init_mask if t == 0 else None)
            alpha_name, mask_name = f"alpha_{index:04d}.pgm", f"mask_{index:04d}.pgm"
            write_image(result.alpha, os.path.join(out_dir, alpha_name), cfg.maxval)
            write_image(result.fg_mask, os.path.join(out_dir, mask_name), cfg.maxval)
            if cfg.save_attention and weights is not None:
                _write_attention(weights, tuple(result.diagnostics["feature_grid"]), attention_dir, index, cfg.maxval)
        except PipelineIOError as e:
            raise PipelineIOError(e.message, e.path, index)
        except MatteBuddyError:
            logger.error("Inference failed on frame %d (%s)", index, frame_path)
            raise
        out_manifest.alphas.append(alpha_name)
        out_manifest.masks.append(mask_name)
        results.append(result)

    save_manifest(out_manifest, os.path.join(out_dir, "manifest.json"))
    _dump_json({"config": _reproducible_config(cfg), "frames": [r.diagnostics for r in results],
                "activities": run_logger.records}, os.path.join(out_dir, "diagnostics.json"))
    run_logger.log_output_written("alpha", len(results), out_dir)

    report = None
    if manifest.alphas:
        written = read_sequence(out_manifest.paths("alphas"))
        gt = read_sequence(manifest.paths("alphas"))
        report = evaluate(written, gt)
        write_report_json(report, os.path.join(out_dir, "metrics.json"))
        run_logger.log_metrics(report.summary())
    return SequenceResult(results, out_manifest, report)


def load_init_mask(path: Optional[str]) -> Image:
    if not path:
        raise UsageError("an initial coarse mask is required (--init-mask)")
    mask = read_image(path)
    if mask.channels != 1:
        raise ArgumentError(f"{path}: initial mask must be a single-channel PGM")
    return mask


def run_manifest(manifest_path: str, cfg: PipelineConfig, out_dir: str, init_mask_path: Optional[str] = None,
                 weights_path: Optional[str] = None) -> SequenceResult:
    """File-level entry used by `infer`; falls back to the manifest's first mask when no init mask is given"""
    manifest = load_manifest(manifest_path)
    if init_mask_path is None and manifest.masks:
        init_mask_path = manifest.paths("masks")[0]
        logger.info("Using %s as the initial coarse mask", init_mask_path)
    init_mask = load_init_mask(init_mask_path)
    store = WeightStore.load(weights_path, cfg.seed) if weights_path else None
    return run_sequence(manifest, cfg, out_dir, init_mask, store)


def sweep_ks(manifest_path: str, cfg: PipelineConfig, ks_values: Sequence[int], out_dir: str,
             init_mask_path: Optional[str] = None) -> Dict[str, Any]:
    """Run inference once per dilation kernel size and summarize metrics per ks"""
    summary: Dict[str, Any] = {"ks": {}}
    for ks in ks_values:
        run_cfg = PipelineConfig.from_dict({**cfg.to_dict(), "ks": int(ks)})
        result = run_manifest(manifest_path, run_cfg, os.path.join(out_dir, f"ks_{ks}"), init_mask_path)
        supports = [r.diagnostics["guidance_support"] for r in result.results]
        summary["ks"][str(ks)] = {
            "metrics": result.report.summary() if result.report else None,
            "mean_guidance_support": float(np.mean(supports)),
        }
        logger.info("ks=%d done", ks)
    _dump_json(summary, os.path.join(out_dir, "sweep.json"))
    return summary


def init_weights(cfg: PipelineConfig, out_path: str) -> WeightStore:
    """Instantiate every stage so the store holds the full weight set, then save it"""
    pipeline = MattingPipeline(cfg)
    pipeline.store.save(out_path)
    return pipeline.store
