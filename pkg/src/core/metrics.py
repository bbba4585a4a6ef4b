"""
Matting quality metrics: MAD, MSE, Grad, Conn and dtSSD

Conventions (scales follow the usual video-matting benchmark tables):
  MAD   mean |a - a*|                         x 1e3
  MSE   mean (a - a*)^2                       x 1e3
  Grad  mean (|grad a| - |grad a*|)^2         x 1e3, Gaussian-derivative filters, sigma 1.4
  Conn  mean |phi(a) - phi(a*)|               x 1e3, thresholds 0.1 .. 0.9, 4-connectivity
  dtSSD sqrt(mean ((a_t - a_t-1) - (a*_t - a*_t-1))^2) x 1e2
Per-frame means are averaged over the sequence.
"""

import csv
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import scipy.ndimage
from skimage.measure import label

from .errors import ArgumentError
from .image_io import Image

logger = logging.getLogger(__name__)

GRAD_SIGMA = 1.4
CONN_STEP = 0.1
CONN_THETA = 0.15

AlphaSequence = Union[np.ndarray, Sequence[Image], Sequence[np.ndarray]]


@dataclass
class MetricsReport:
    mad: float
    mse: float
    grad: float
    conn: float
    dtssd: Optional[float]
    per_frame: List[Dict] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return asdict(self)

    def summary(self) -> Dict[str, Optional[float]]:
        return {"mad": self.mad, "mse": self.mse, "grad": self.grad, "conn": self.conn, "dtssd": self.dtssd}


def as_alpha_stack(seq: AlphaSequence) -> np.ndarray:
    """[T, H, W] float64 stack from arrays or single-channel Images"""
    if isinstance(seq, np.ndarray):
        stack = seq.astype(np.float64)
        if stack.ndim == 2:
            stack = stack[None]
    else:
        planes = [s.plane if isinstance(s, Image) else np.asarray(s, dtype=np.float64) for s in seq]
        if not planes:
            raise ArgumentError("alpha sequence is empty")
        stack = np.stack(planes).astype(np.float64)
    if stack.ndim != 3:
        raise ArgumentError(f"alpha sequence must be [T, H, W], got shape {stack.shape}")
    if not np.all(np.isfinite(stack)) or stack.min(initial=0.0) < 0.0 or stack.max(initial=0.0) > 1.0:
        raise ArgumentError("alpha values must be finite and lie in [0, 1]")
    return stack


def _pair(pred: AlphaSequence, gt: AlphaSequence):
    p, g = as_alpha_stack(pred), as_alpha_stack(gt)
    if p.shape != g.shape:
        raise ArgumentError(f"prediction shape {p.shape} differs from ground truth shape {g.shape}")
    return p, g


def mad_frame(p: np.ndarray, g: np.ndarray) -> float:
    return float(np.mean(np.abs(p - g))) * 1e3


def mse_frame(p: np.ndarray, g: np.ndarray) -> float:
    return float(np.mean((p - g) ** 2)) * 1e3


def gauss_derivative_kernels(sigma: float = GRAD_SIGMA):
    """(hx, hy) first-order Gaussian derivative kernels, truncated at 3 sigma, L2-normalized"""
    half = int(math.ceil(3.0 * sigma))
    u = np.arange(-half, half + 1, dtype=np.float64)
    gauss = np.exp(-u ** 2 / (2 * sigma ** 2)) / (sigma * math.sqrt(2 * math.pi))
    dgauss = -u * gauss / sigma ** 2
    hx = gauss[:, None] * dgauss[None, :]
    hx = hx / math.sqrt(np.sum(hx * hx))
    return hx, hx.T.copy()


def gradient_magnitude(plane: np.ndarray, sigma: float = GRAD_SIGMA) -> np.ndarray:
    hx, hy = gauss_derivative_kernels(sigma)
    if plane.shape[0] < hx.shape[0] or plane.shape[1] < hx.shape[1]:
        raise ArgumentError(f"frame {plane.shape} is smaller than the {hx.shape[0]}x{hx.shape[1]} gradient kernel")
    gx = scipy.ndimage.convolve(plane, hx, mode="nearest")
    gy = scipy.ndimage.convolve(plane, hy, mode="nearest")
    return np.sqrt(gx ** 2 + gy ** 2)


def grad_frame(p: np.ndarray, g: np.ndarray) -> float:
    return float(np.mean((gradient_magnitude(p) - gradient_magnitude(g)) ** 2)) * 1e3


def largest_component(binary: np.ndarray) -> np.ndarray:
    """Largest 4-connected foreground component (empty when there is no foreground)"""
    labels = label(binary, connectivity=1)
    if labels.max() == 0:
        return np.zeros_like(binary, dtype=bool)
    counts = np.bincount(labels.ravel())
    counts[0] = 0
    return labels == int(np.argmax(counts))


def connectivity_levels(p: np.ndarray, g: np.ndarray, step: float = CONN_STEP) -> np.ndarray:
    """Per-pixel level at which each pixel drops out of the shared source region"""
    steps = int(round(1.0 / step))
    thresholds = [i / steps for i in range(steps)]
    level = np.full(p.shape, -1.0)
    for i in range(1, steps):
        omega = largest_component((p >= thresholds[i]) & (g >= thresholds[i]))
        level[(level == -1.0) & ~omega] = thresholds[i - 1]
    level[level == -1.0] = 1.0
    return level


def conn_frame(p: np.ndarray, g: np.ndarray) -> float:
    level = connectivity_levels(p, g)
    dp, dg = p - level, g - level
    phi_p = 1.0 - dp * (dp >= CONN_THETA)
    phi_g = 1.0 - dg * (dg >= CONN_THETA)
    return float(np.mean(np.abs(phi_p - phi_g))) * 1e3


def mad(pred: AlphaSequence, gt: AlphaSequence) -> float:
    p, g = _pair(pred, gt)
    return float(np.mean([mad_frame(a, b) for a, b in zip(p, g)]))


def mse(pred: AlphaSequence, gt: AlphaSequence) -> float:
    p, g = _pair(pred, gt)
    return float(np.mean([mse_frame(a, b) for a, b in zip(p, g)]))


def grad(pred: AlphaSequence, gt: AlphaSequence) -> float:
    p, g = _pair(pred, gt)
    return float(np.mean([grad_frame(a, b) for a, b in zip(p, g)]))


def conn(pred: AlphaSequence, gt: AlphaSequence) -> float:
    p, g = _pair(pred, gt)
    return float(np.mean([conn_frame(a, b) for a, b in zip(p, g)]))


def dtssd_terms(p: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Mean squared temporal-derivative difference for every step t >= 2"""
    diff = (p[1:] - p[:-1]) - (g[1:] - g[:-1])
    return np.mean(diff ** 2, axis=(1, 2))


def dtssd(pred: AlphaSequence, gt: AlphaSequence) -> float:
    p, g = _pair(pred, gt)
    if p.shape[0] < 2:
        raise ArgumentError("dtSSD needs at least two frames")
    return float(math.sqrt(np.mean(dtssd_terms(p, g)))) * 1e2


def evaluate(pred: AlphaSequence, gt: AlphaSequence) -> MetricsReport:
    """All five metrics plus a per-frame breakdown (dtSSD omitted for single frames)"""
    p, g = _pair(pred, gt)
    rows = []
    steps = dtssd_terms(p, g) if len(p) > 1 else []
    for t, (a, b) in enumerate(zip(p, g)):
        rows.append({
            "frame": t + 1,
            "mad": mad_frame(a, b),
            "mse": mse_frame(a, b),
            "grad": grad_frame(a, b),
            "conn": conn_frame(a, b),
            "dt_term": float(math.sqrt(steps[t - 1])) * 1e2 if t else None,
        })
    report = MetricsReport(
        mad=float(np.mean([r["mad"] for r in rows])),
        mse=float(np.mean([r["mse"] for r in rows])),
        grad=float(np.mean([r["grad"] for r in rows])),
        conn=float(np.mean([r["conn"] for r in rows])),
        dtssd=float(math.sqrt(np.mean(steps))) * 1e2 if len(p) > 1 else None,
        per_frame=rows,
    )
    logger.info("MAD %.4f  MSE %.4f  Grad %.4f  Conn %.4f  dtSSD %s", report.mad, report.mse,
                report.grad, report.conn, "n/a" if report.dtssd is None else f"{report.dtssd:.4f}")
    return report


def write_report_json(report: MetricsReport, path: str):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")


def write_per_frame_csv(report: MetricsReport, path: str):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=["frame", "mad", "mse", "grad", "conn", "dt_term"])
        writer.writeheader()
        for row in report.per_frame:
            writer.writerow({k: ("" if v is None else v) for k, v in row.items()})
