"""
Alpha compositing, sequential foreground merging augmentation and the
synthetic ground-truth sequence generator
"""

import logging
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import ArgumentError, ConfigError
from .image_io import Image, Manifest, binarize, load_manifest, read_sequence, save_manifest, write_image
from .tensor_core import Rng

logger = logging.getLogger(__name__)


@dataclass
class Clip:
    """Aligned frames, alphas and per-object binary masks"""
    frames: List[Image]
    alphas: List[Image]
    gt_instance_masks: List[List[Image]]
    foregrounds: Optional[List[Image]] = None
    meta: Dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.frames)
        if n == 0:
            raise ArgumentError("clip must hold at least one frame")
        if len(self.alphas) != n or len(self.gt_instance_masks) != n:
            raise ArgumentError(f"clip lists differ in length: frames {n}, alphas {len(self.alphas)}, "
                                f"masks {len(self.gt_instance_masks)}")
        if self.foregrounds is not None and len(self.foregrounds) != n:
            raise ArgumentError(f"clip has {len(self.foregrounds)} foregrounds for {n} frames")
        size = self.frames[0].size
        for img in self.frames + self.alphas + (self.foregrounds or []):
            if img.size != size:
                raise ArgumentError(f"clip image size {img.size} differs from {size}")
        if any(a.channels != 1 for a in self.alphas):
            raise ArgumentError("clip alphas must be single-channel")

    def __len__(self):
        return len(self.frames)

    @property
    def layers(self) -> List[Image]:
        """Foreground colour layers; plain frames when no separate layer is stored"""
        return self.foregrounds if self.foregrounds is not None else self.frames


@dataclass
class AugmentConfig:
    """Sequential foreground merging probabilities"""
    p1: float = 0.4
    p2: float = 0.5
    seed: int = 0

    def __post_init__(self):
        for name in ("p1", "p2"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {value}")


def composite(fg: Image, bg: Image, alpha: Image) -> Image:
    """I = alpha*F + (1 - alpha)*B per pixel"""
    if not (fg.size == bg.size == alpha.size):
        raise ArgumentError(f"composite size mismatch: fg {fg.size}, bg {bg.size}, alpha {alpha.size}")
    if alpha.channels != 1:
        raise ArgumentError("composite alpha must be single-channel")
    a = alpha.data
    return Image(np.clip(a * fg.data + (1.0 - a) * bg.data, 0.0, 1.0))


def merge_alphas(a1: Image, a2: Image) -> Image:
    """Union opacity 1 - (1 - a1)(1 - a2)"""
    return Image(1.0 - (1.0 - a1.data) * (1.0 - a2.data))


def draw_branches(rng: Rng, cfg: AugmentConfig) -> Tuple[bool, bool]:
    """One (inject second foreground, single-object supervision) decision per clip"""
    inject = rng.random() < cfg.p1
    single = rng.random() < cfg.p2
    return inject, single


def sfm_compose(clip1: Clip, clip2: Clip, bg: List[Image], cfg: AugmentConfig) -> Clip:
    """Merge a second foreground sequence behind the primary one.

    With probability p1 the background becomes B_n = a2*F2 + (1-a2)*B and the
    frame I_n = a1*F1 + (1-a1)*B_n; otherwise the primary is composited over B.
    With probability p2 the target alpha is a1 alone, else the union alpha.
    Both draws are made once per clip.
    """
    if not (len(clip1) == len(clip2) == len(bg)):
        raise ArgumentError(f"sequence lengths differ: clip1 {len(clip1)}, clip2 {len(clip2)}, bg {len(bg)}")
    inject, single = draw_branches(Rng(cfg.seed), cfg)
    logger.debug("SFM draw: inject=%s single_supervision=%s", inject, single)

    frames, alphas, masks = [], [], []
    for f1, a1, f2, a2, b in zip(clip1.layers, clip1.alphas, clip2.layers, clip2.alphas, bg):
        if inject:
            merged_bg = composite(f2, b, a2)
            frames.append(composite(f1, merged_bg, a1))
            alphas.append(a1 if single else merge_alphas(a1, a2))
            masks.append([binarize(a1, 0.5), binarize(a2, 0.5)])
        else:
            frames.append(composite(f1, b, a1))
            alphas.append(a1)
            masks.append([binarize(a1, 0.5)])
    return Clip(frames, alphas, masks, meta={"injected": inject, "single_supervision": single})


def _texture(rng: Rng, h: int, w: int, channels: int, low: float, high: float) -> np.ndarray:
    """Sum of three oriented gratings per channel rescaled to [low, high]"""
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    out = np.zeros((h, w, channels))
    for c in range(channels):
        acc = np.zeros((h, w))
        for _ in range(3):
            theta = rng.uniform((), 0.0, math.pi)
            freq = rng.uniform((), 0.05, 0.35)
            phase = rng.uniform((), 0.0, 2 * math.pi)
            acc += np.sin(freq * (xx * math.cos(theta) + yy * math.sin(theta)) + phase)
        out[:, :, c] = low + (high - low) * (acc + 3.0) / 6.0
    return out


def _ellipse_alpha(h: int, w: int, cx: float, cy: float, rx: float, ry: float) -> np.ndarray:
    """Soft ellipse with a 2-pixel linear edge centred on the boundary"""
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    r = np.sqrt(((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2)
    dist = (r - 1.0) * min(rx, ry)
    return np.clip(0.5 - dist / 2.0, 0.0, 1.0)


def synth_sequence(T: int, H: int, W: int, n_objects: int, seed: int) -> Clip:
    """Moving soft ellipses over a procedural background.

    Object 0 is frontmost. Every trajectory keeps its ellipse at least three
    pixels inside the frame. Trajectories are drawn from the seed before any
    frame is rendered.
    """
    if T < 1 or n_objects < 1:
        raise ArgumentError(f"need T >= 1 and n_objects >= 1, got T={T}, n_objects={n_objects}")
    if H < 16 or W < 16:
        raise ArgumentError(f"synthetic frames must be at least 16x16, got {H}x{W}")
    rng = Rng(seed)
    short = min(H, W)
    objects = []
    for _ in range(n_objects):
        ry = rng.uniform((), 0.10, 0.20) * short
        rx = ry * rng.uniform((), 1.0, 1.4)
        if rng.random() < 0.5:
            rx, ry = ry, rx
        cx0 = rng.uniform((), rx + 3, W - rx - 3)
        cy0 = rng.uniform((), ry + 3, H - ry - 3)
        ax = rng.uniform((), 0.0, 1.0) * min(cx0 - rx - 3, W - rx - 3 - cx0)
        ay = rng.uniform((), 0.0, 1.0) * min(cy0 - ry - 3, H - ry - 3 - cy0)
        period = rng.uniform((), 8.0, 24.0)
        phase = rng.uniform((), 0.0, 2 * math.pi)
        color = rng.uniform((3,), 0.2, 1.0)
        stripe = rng.uniform((), 0.2, 0.6)
        objects.append((rx, ry, cx0, cy0, ax, ay, period, phase, color, stripe))
    background = Image(_texture(rng, H, W, 3, 0.1, 0.9))

    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    frames, alphas, foregrounds, masks, tracks = [], [], [], [], []
    for t in range(T):
        premult = np.zeros((H, W, 3))
        union = np.zeros((H, W, 1))
        per_object, frame_tracks = [], []
        for rx, ry, cx0, cy0, ax, ay, period, phase, color, stripe in reversed(objects):
            angle = 2 * math.pi * t / period + phase
            cx, cy = cx0 + ax * math.sin(angle), cy0 + ay * math.cos(angle)
            a = _ellipse_alpha(H, W, cx, cy, rx, ry)[:, :, None]
            shade = 0.8 + 0.2 * np.sin(stripe * (xx - cx) + stripe * (yy - cy))[:, :, None]
            colour = np.clip(color[None, None, :] * shade, 0.0, 1.0)
            premult = a * colour + (1.0 - a) * premult
            union = a + (1.0 - a) * union
            per_object.append(Image(a))
            frame_tracks.append((cx, cy, rx, ry))
        per_object.reverse()
        frame_tracks.reverse()
        fg = np.where(union > 0, premult / np.maximum(union, 1e-300), 0.0)
        foreground = Image(np.clip(fg, 0.0, 1.0))
        alpha = Image(np.clip(union, 0.0, 1.0))
        foregrounds.append(foreground)
        alphas.append(alpha)
        frames.append(composite(foreground, background, alpha))
        masks.append([binarize(a, 0.5) for a in per_object])
        tracks.append(frame_tracks)
    return Clip(frames, alphas, masks, foregrounds=foregrounds,
                meta={"seed": seed, "objects": tracks, "background": background})


def write_clip(clip: Clip, out_dir: str, maxval: int = 255, fps: Optional[float] = None,
               seed: Optional[int] = None) -> Manifest:
    """Write a clip as PPM/PGM files plus manifest.json"""
    manifest = Manifest(frames=[], alphas=[], masks=[], instance_masks=[], fps=fps, seed=seed,
                        base_dir=out_dir)
    if clip.foregrounds is not None:
        manifest.foregrounds = []
    for t in range(len(clip)):
        name = f"{t + 1:04d}"
        manifest.frames.append(f"frame_{name}.ppm")
        write_image(clip.frames[t], os.path.join(out_dir, manifest.frames[-1]), maxval)
        manifest.alphas.append(f"alpha_{name}.pgm")
        write_image(clip.alphas[t], os.path.join(out_dir, manifest.alphas[-1]), maxval)
        manifest.masks.append(f"mask_{name}.pgm")
        write_image(binarize(clip.alphas[t], 0.5), os.path.join(out_dir, manifest.masks[-1]), maxval)
        if clip.foregrounds is not None:
            manifest.foregrounds.append(f"fg_{name}.ppm")
            write_image(clip.foregrounds[t], os.path.join(out_dir, manifest.foregrounds[-1]), maxval)
        group = []
        for i, m in enumerate(clip.gt_instance_masks[t]):
            group.append(f"instance_{name}_{i + 1:02d}.pgm")
            write_image(m, os.path.join(out_dir, group[-1]), maxval)
        manifest.instance_masks.append(group)
    save_manifest(manifest, os.path.join(out_dir, "manifest.json"))
    logger.info("Wrote %d-frame clip to %s", len(clip), out_dir)
    return manifest


def load_clip(manifest_path: str) -> Clip:
    """Read a clip written by write_clip (instance masks default to the binarized alpha)"""
    manifest = load_manifest(manifest_path)
    frames = read_sequence(manifest.paths("frames"))
    if not manifest.alphas:
        raise ArgumentError(f"{manifest_path}: a clip manifest needs 'alphas'")
    alphas = read_sequence(manifest.paths("alphas"))
    if manifest.instance_masks:
        masks = [read_sequence([manifest.resolve(p) for p in group]) for group in manifest.instance_masks]
    else:
        masks = [[binarize(a, 0.5)] for a in alphas]
    foregrounds = read_sequence(manifest.paths("foregrounds")) if manifest.foregrounds else None
    return Clip(frames, alphas, masks, foregrounds=foregrounds, meta={"manifest": manifest_path})
