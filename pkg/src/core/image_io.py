"""
Frame and alpha I/O (binary Netpbm), sequence manifests, resampling and binary morphology
"""

import json
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.ndimage

from .errors import ArgumentError, ConfigError, ParseError, PipelineIOError

logger = logging.getLogger(__name__)

_MAGIC_CHANNELS = {b"P5": 1, b"P6": 3}
_MAX_SIDE = 1 << 20
_HEADER_CHUNK = 4096


@dataclass
class Image:
    """Float image [H, W, channels] with values in [0, 1]"""
    data: np.ndarray
    maxval: Optional[int] = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise ArgumentError(f"image must be [H, W, 1|3], got shape {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise ArgumentError(f"image dimensions must be positive, got {data.shape[:2]}")
        if not np.all(np.isfinite(data)) or data.min() < 0.0 or data.max() > 1.0:
            raise ArgumentError("image values must lie in [0, 1]")
        self.data = data

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def plane(self) -> np.ndarray:
        """[H, W] view of a single-channel image"""
        if self.channels != 1:
            raise ArgumentError("plane is only defined for single-channel images")
        return self.data[:, :, 0]

    @property
    def size(self) -> Tuple[int, int]:
        return self.height, self.width

    @classmethod
    def full(cls, height: int, width: int, value: float, channels: int = 1) -> "Image":
        return cls(np.full((height, width, channels), float(value)))


@dataclass
class Manifest:
    """Ordered sequence description stored as UTF-8 JSON next to its files"""
    frames: List[str]
    alphas: Optional[List[str]] = None
    masks: Optional[List[str]] = None
    foregrounds: Optional[List[str]] = None
    instance_masks: Optional[List[List[str]]] = None
    fps: Optional[float] = None
    seed: Optional[int] = None
    base_dir: str = field(default=".", compare=False)

    def resolve(self, relpath: str) -> str:
        return relpath if os.path.isabs(relpath) else os.path.join(self.base_dir, relpath)

    def paths(self, kind: str) -> List[str]:
        """Absolute paths of one per-frame list ('frames', 'alphas', ...)"""
        return [self.resolve(p) for p in (getattr(self, kind) or [])]

    def __len__(self):
        return len(self.frames)

    def to_dict(self) -> Dict:
        out = {"frames": list(self.frames)}
        for key in ("alphas", "masks", "foregrounds", "instance_masks", "fps", "seed"):
            value = getattr(self, key)
            if value is not None:
                out[key] = value
        return out


def _parse_header(data: bytes, path: Optional[str] = None) -> Tuple[int, int, int, int, int]:
    """Return (channels, width, height, maxval, payload offset)"""
    magic = data[:2]
    if magic not in _MAGIC_CHANNELS:
        raise ParseError(f"unsupported magic {magic!r}, expected P5 or P6", 0, path)
    pos = 2
    values = []
    while len(values) < 3:
        # whitespace and comments between header fields
        while pos < len(data) and (data[pos:pos + 1].isspace() or data[pos:pos + 1] == b"#"):
            if data[pos:pos + 1] == b"#":
                end = data.find(b"\n", pos)
                pos = len(data) if end < 0 else end + 1
            else:
                pos += 1
        start = pos
        while pos < len(data) and data[pos:pos + 1].isdigit():
            pos += 1
        if pos == start:
            raise ParseError("expected an unsigned integer in header", start, path)
        values.append(int(data[start:pos]))
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise ParseError("header must end with a single whitespace byte", pos, path)
    width, height, maxval = values
    if not (0 < width <= _MAX_SIDE and 0 < height <= _MAX_SIDE):
        raise ParseError(f"dimension overflow {width}x{height}", 2, path)
    if not 0 < maxval <= 65535:
        raise ParseError(f"maxval {maxval} out of range", pos - 1, path)
    return _MAGIC_CHANNELS[magic], width, height, maxval, pos + 1


def read_image_header(path: str) -> Tuple[int, int, int, int]:
    """Return (height, width, channels, maxval) without decoding pixels"""
    try:
        with open(path, "rb") as fh:
            head = fh.read(_HEADER_CHUNK)
            try:
                parsed = _parse_header(head, path)
            except ParseError:
                if len(head) < _HEADER_CHUNK:
                    raise
                # long comment block; parse against the whole file
                parsed = _parse_header(head + fh.read(), path)
    except OSError as e:
        raise PipelineIOError(f"cannot read image ({e.strerror})", path)
    channels, width, height, maxval, _ = parsed
    return height, width, channels, maxval


def decode_netpbm(data: bytes, path: Optional[str] = None) -> Image:
    """Decode P5/P6 bytes; 16-bit payloads are big-endian"""
    channels, width, height, maxval, offset = _parse_header(data, path)
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height * channels
    needed = count * dtype.itemsize
    if len(data) - offset < needed:
        raise ParseError(f"truncated payload: need {needed} bytes, have {len(data) - offset}",
                         len(data), path)
    raw = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
    if raw.max(initial=0) > maxval:
        raise ParseError(f"sample exceeds maxval {maxval}", offset, path)
    pixels = raw.astype(np.float64).reshape(height, width, channels) / maxval
    return Image(pixels, maxval=maxval)


def encode_netpbm(img: Image, maxval: int = 255) -> bytes:
    """Encode as P5 (1 channel) or P6 (3 channels) with v_int = floor(v*maxval + 0.5)"""
    if not 0 < maxval <= 65535:
        raise ArgumentError(f"maxval {maxval} out of range")
    magic = "P5" if img.channels == 1 else "P6"
    ints = np.floor(np.clip(img.data, 0.0, 1.0) * maxval + 0.5)
    dtype = ">u2" if maxval > 255 else "u1"
    header = f"{magic}\n{img.width} {img.height}\n{maxval}\n".encode("ascii")
    return header + ints.astype(dtype).tobytes()


def read_image(path: str) -> Image:
    """Read a binary PGM/PPM file"""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as e:
        raise PipelineIOError(f"cannot read image ({e.strerror})", path)
    return decode_netpbm(data, path)


def write_image(img: Image, path: str, maxval: int = 255):
    """Write a binary PGM/PPM file"""
    try:
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, "wb") as fh:
            fh.write(encode_netpbm(img, maxval))
    except OSError as e:
        raise PipelineIOError(f"cannot write image ({e.strerror})", path)


def _axis_weights(n_in: int, n_out: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Source indices and fractions for align-corners-false sampling"""
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def resample_bilinear(img: Image, new_h: int, new_w: int) -> Image:
    """Bilinear resize, align-corners-false, borders clamped"""
    if new_h < 1 or new_w < 1:
        raise ArgumentError(f"target size must be positive, got {new_h}x{new_w}")
    if (new_h, new_w) == img.size:
        return Image(img.data.copy(), maxval=img.maxval)
    y0, y1, fy = _axis_weights(img.height, new_h)
    x0, x1, fx = _axis_weights(img.width, new_w)
    d = img.data
    rows = d[y0] * (1.0 - fy)[:, None, None] + d[y1] * fy[:, None, None]
    out = rows[:, x0] * (1.0 - fx)[None, :, None] + rows[:, x1] * fx[None, :, None]
    return Image(np.clip(out, 0.0, 1.0))


def binarize(img: Image, thresh: float = 0.5) -> Image:
    """1 where v >= thresh, else 0 (boundary inclusive)"""
    if img.channels != 1:
        raise ArgumentError("binarize expects a single-channel image")
    return Image((img.data >= thresh).astype(np.float64))


def is_binary(img: Image) -> bool:
    return bool(np.all((img.data == 0.0) | (img.data == 1.0)))


def dilate(mask: Image, ks: int) -> Image:
    """Binary dilation with a ks x ks square, zero outside the frame"""
    if ks < 1 or ks % 2 == 0:
        raise ConfigError(f"dilation kernel size must be odd and >= 1, got {ks}")
    if mask.channels != 1 or not is_binary(mask):
        raise ArgumentError("dilate expects a single-channel binary mask")
    grown = scipy.ndimage.binary_dilation(mask.plane > 0.5, structure=np.ones((ks, ks), dtype=bool),
                                          border_value=0)
    return Image(grown.astype(np.float64))


def load_manifest(path: str, check_files: bool = True) -> Manifest:
    """Load and validate a sequence manifest"""
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except OSError as e:
        raise PipelineIOError(f"cannot read manifest ({e.strerror})", path)
    except json.JSONDecodeError as e:
        raise ParseError(f"manifest is not valid JSON ({e.msg})", e.pos, path)
    if not isinstance(raw.get("frames"), list) or not raw["frames"]:
        raise ArgumentError(f"{path}: manifest needs a non-empty 'frames' list")
    manifest = Manifest(
        frames=raw["frames"],
        alphas=raw.get("alphas"),
        masks=raw.get("masks"),
        foregrounds=raw.get("foregrounds"),
        instance_masks=raw.get("instance_masks"),
        fps=raw.get("fps"),
        seed=raw.get("seed"),
        base_dir=os.path.dirname(os.path.abspath(path)),
    )
    for key in ("alphas", "masks", "foregrounds", "instance_masks"):
        value = getattr(manifest, key)
        if value is not None and len(value) != len(manifest.frames):
            raise ArgumentError(f"{path}: '{key}' has {len(value)} entries, 'frames' has {len(manifest.frames)}")
    if check_files:
        _check_manifest_files(manifest)
    return manifest


def _check_manifest_files(manifest: Manifest):
    size = None
    files = manifest.paths("frames") + manifest.paths("alphas") + manifest.paths("masks") \
        + manifest.paths("foregrounds")
    for group in manifest.instance_masks or []:
        files.extend(manifest.resolve(p) for p in group)
    for file_path in files:
        if not os.path.exists(file_path):
            raise PipelineIOError("manifest entry does not exist", file_path)
        h, w, _, _ = read_image_header(file_path)
        if size is None:
            size = (h, w)
        elif (h, w) != size:
            raise ArgumentError(f"{file_path}: size {h}x{w} differs from sequence size {size[0]}x{size[1]}")


def save_manifest(manifest: Manifest, path: str):
    """Write manifest JSON (stable key order)"""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest.to_dict(), f, indent=2, sort_keys=True, ensure_ascii=False)
        f.write("\n")


def read_sequence(paths: List[str]) -> List[Image]:
    return [read_image(p) for p in paths]
