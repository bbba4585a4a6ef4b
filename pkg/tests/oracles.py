"""
Independent scalar reference implementations used to cross-check the engine.

Everything here is written with plain Python loops on purpose; none of it
calls into src.core.
"""

import math
from collections import deque
from itertools import permutations

import numpy as np


def matmul_loops(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for p in range(k):
                acc += float(a[i, p]) * float(b[p, j])
            out[i, j] = acc
    return out


def softmax_list(scores):
    finite = [s for s in scores if s != -math.inf]
    top = max(finite)
    exps = [0.0 if s == -math.inf else math.exp(s - top) for s in scores]
    total = sum(exps)
    return [e / total for e in exps]


def attention_loops(q, k, v, allowed=None):
    """softmax(q k^T / sqrt(C)) v row by row; allowed[i][j] False masks a token"""
    n, c = q.shape
    out = np.zeros((n, v.shape[1]))
    scale = math.sqrt(c)
    for i in range(n):
        scores = []
        for j in range(k.shape[0]):
            if allowed is not None and not allowed[i][j]:
                scores.append(-math.inf)
                continue
            acc = 0.0
            for p in range(c):
                acc += float(q[i, p]) * float(k[j, p])
            scores.append(acc / scale)
        weights = softmax_list(scores)
        for d in range(v.shape[1]):
            acc = 0.0
            for j, wj in enumerate(weights):
                acc += wj * float(v[j, d])
            out[i, d] = acc
    return out


def fg_embed_loops(layer, mask_values):
    """FE(s) = s * W[:, 0] + b for every memory token"""
    s = np.asarray(mask_values, dtype=np.float64).reshape(-1)
    out = np.zeros((s.size, layer.weight.shape[0]))
    for t, value in enumerate(s):
        for d in range(layer.weight.shape[0]):
            out[t, d] = value * layer.weight[d, 0] + layer.bias[d]
    return out


def window_allowed(h, w, r):
    """allowed[i][j] for a (2r+1) window on an h x w grid, row-major tokens"""
    allowed = []
    for y in range(h):
        for x in range(w):
            row = []
            for yy in range(h):
                for xx in range(w):
                    row.append(abs(yy - y) <= r and abs(xx - x) <= r)
            allowed.append(row)
    return allowed


def pos_embed_loops(h, w, c):
    half = c // 2
    pe = np.zeros((h, w, c))
    for y in range(h):
        for x in range(w):
            for base, pos in ((0, y), (half, x)):
                for k in range(0, half, 2):
                    freq = 10000.0 ** (-k / half)
                    pe[y, x, base + k] = math.sin(pos * freq)
                    pe[y, x, base + k + 1] = math.cos(pos * freq)
    return pe


def conv_same_loops(x, weight):
    h, w, cin = x.shape
    cout, _, k, _ = weight.shape
    r = k // 2
    out = np.zeros((h, w, cout))
    for y in range(h):
        for xx in range(w):
            for o in range(cout):
                acc = 0.0
                for c in range(cin):
                    for i in range(k):
                        for j in range(k):
                            sy, sx = y + i - r, xx + j - r
                            if 0 <= sy < h and 0 <= sx < w:
                                acc += x[sy, sx, c] * weight[o, c, i, j]
                out[y, xx, o] = acc
    return out


def dilate_loops(mask, ks):
    h, w = mask.shape
    r = ks // 2
    out = np.zeros_like(mask)
    for y in range(h):
        for x in range(w):
            hit = False
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    sy, sx = y + dy, x + dx
                    if 0 <= sy < h and 0 <= sx < w and mask[sy, sx] > 0:
                        hit = True
            out[y, x] = 1.0 if hit else 0.0
    return out


def gauss_kernel_loops(sigma=1.4):
    half = int(math.ceil(3 * sigma))
    size = 2 * half + 1
    hx = np.zeros((size, size))
    for i in range(size):
        for j in range(size):
            y, x = i - half, j - half
            g = math.exp(-y * y / (2 * sigma * sigma)) / (sigma * math.sqrt(2 * math.pi))
            gx = math.exp(-x * x / (2 * sigma * sigma)) / (sigma * math.sqrt(2 * math.pi))
            hx[i, j] = g * (-x * gx / (sigma * sigma))
    norm = math.sqrt(sum(v * v for v in hx.ravel()))
    hx /= norm
    return hx, hx.T.copy()


def convolve_nearest_loops(plane, kernel):
    """True convolution with clamped borders"""
    h, w = plane.shape
    size = kernel.shape[0]
    half = size // 2
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            acc = 0.0
            for i in range(size):
                for j in range(size):
                    sy = min(max(y + half - i, 0), h - 1)
                    sx = min(max(x + half - j, 0), w - 1)
                    acc += kernel[i, j] * plane[sy, sx]
            out[y, x] = acc
    return out


def grad_loops(p, g, sigma=1.4):
    hx, hy = gauss_kernel_loops(sigma)

    def magnitude(plane):
        gx = convolve_nearest_loops(plane, hx)
        gy = convolve_nearest_loops(plane, hy)
        return np.sqrt(gx ** 2 + gy ** 2)

    d = magnitude(p) - magnitude(g)
    return sum(v * v for v in d.ravel()) / d.size * 1e3


def largest_component_flood(binary):
    """Largest 4-connected True region; ties go to the region found first in raster order"""
    h, w = binary.shape
    seen = np.zeros((h, w), dtype=bool)
    best = []
    for y in range(h):
        for x in range(w):
            if not binary[y, x] or seen[y, x]:
                continue
            region = []
            queue = deque([(y, x)])
            seen[y, x] = True
            while queue:
                cy, cx = queue.popleft()
                region.append((cy, cx))
                for ny, nx in ((cy - 1, cx), (cy + 1, cx), (cy, cx - 1), (cy, cx + 1)):
                    if 0 <= ny < h and 0 <= nx < w and binary[ny, nx] and not seen[ny, nx]:
                        seen[ny, nx] = True
                        queue.append((ny, nx))
            if len(region) > len(best):
                best = region
    out = np.zeros((h, w), dtype=bool)
    for y, x in best:
        out[y, x] = True
    return out


def conn_loops(p, g):
    h, w = p.shape
    level = [[None] * w for _ in range(h)]
    for i in range(1, 10):
        thr = i / 10
        omega = largest_component_flood((p >= thr) & (g >= thr))
        for y in range(h):
            for x in range(w):
                if level[y][x] is None and not omega[y, x]:
                    level[y][x] = (i - 1) / 10
    total = 0.0
    for y in range(h):
        for x in range(w):
            lv = 1.0 if level[y][x] is None else level[y][x]
            dp, dg = p[y, x] - lv, g[y, x] - lv
            phi_p = 1.0 - (dp if dp >= 0.15 else 0.0)
            phi_g = 1.0 - (dg if dg >= 0.15 else 0.0)
            total += abs(phi_p - phi_g)
    return total / (h * w) * 1e3


def mad_loops(p, g):
    total = 0.0
    for a, b in zip(p.ravel(), g.ravel()):
        total += abs(a - b)
    return total / p.size * 1e3


def dtssd_loops(p, g):
    T, h, w = p.shape
    terms = []
    for t in range(1, T):
        acc = 0.0
        for y in range(h):
            for x in range(w):
                d = (p[t, y, x] - p[t - 1, y, x]) - (g[t, y, x] - g[t - 1, y, x])
                acc += d * d
        terms.append(acc / (h * w))
    return math.sqrt(sum(terms) / len(terms)) * 1e2


def brute_force_assignment(cost):
    """(best total, lexicographically smallest optimal query tuple) over all injective maps"""
    g, n = cost.shape
    best_total, best_cols = None, None
    for cols in permutations(range(n), g):
        total = 0.0
        for i, j in enumerate(cols):
            total += float(cost[i, j])
        if best_total is None or total < best_total - 1e-12:
            best_total, best_cols = total, cols
    return best_total, best_cols


def callback_loops(layer, x_m, f_m):
    """Per pixel: softmax over objects of <f, x_n>/sqrt(C), weighted object sum, then linear(concat(context, f))"""
    h, w, c = f_m.shape
    n = x_m.shape[0]
    out = np.zeros((h, w, layer.weight.shape[0]))
    scale = math.sqrt(c)
    for y in range(h):
        for x in range(w):
            scores = []
            for j in range(n):
                acc = 0.0
                for p in range(c):
                    acc += float(f_m[y, x, p]) * float(x_m[j, p])
                scores.append(acc / scale)
            weights = softmax_list(scores)
            joined = []
            for p in range(c):
                acc = 0.0
                for j in range(n):
                    acc += weights[j] * float(x_m[j, p])
                joined.append(acc)
            joined.extend(float(v) for v in f_m[y, x])
            for d in range(layer.weight.shape[0]):
                acc = float(layer.bias[d])
                for p, v in enumerate(joined):
                    acc += float(layer.weight[d, p]) * v
                out[y, x, d] = acc
    return out
