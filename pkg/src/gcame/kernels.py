"""Hot numeric kernels: conv2d, bilinear resize, Gaussian-masked accumulation.

Each kernel has a pure-numpy implementation (``*_np``) and, when numba is
available, a jitted twin (``*_nb``). The public dispatch table picks one at
import time based on :mod:`gcame.backend`. Both paths compute in float32 and
agree to normal float rounding; benchmarks/bench_backends.py compares them.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .backend import HAVE_NUMBA, USE_NUMBA


# ---------------------------------------------------------------- numpy path

def conv2d_np(x, w, b, stride, padding):
    # x (Cin,h,w), w (Cout,Cin,kh,kw), b (Cout) -> (Cout,h',w'); cross-correlation
    kh, kw = w.shape[2], w.shape[3]
    if padding > 0:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    out = np.einsum("cijuv,ocuv->oij", win, w, optimize=True)
    out += b[:, None, None]
    return np.ascontiguousarray(out, dtype=np.float32)


def resize_bilinear_np(m, out_h, out_w):
    # corner-aligned sampling; lerp written as v0 + t*(v1-v0) so constant
    # inputs reproduce exactly
    h, w = m.shape
    ys = np.arange(out_h, dtype=np.float32) * ((h - 1) / (out_h - 1)) if out_h > 1 else np.zeros(1, np.float32)
    xs = np.arange(out_w, dtype=np.float32) * ((w - 1) / (out_w - 1)) if out_w > 1 else np.zeros(1, np.float32)
    y0 = np.minimum(ys.astype(np.int64), h - 1)
    x0 = np.minimum(xs.astype(np.int64), w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    ty = (ys - y0).astype(np.float32)
    tx = (xs - x0).astype(np.float32)
    a = m[np.ix_(y0, x0)]
    b = m[np.ix_(y0, x1)]
    c = m[np.ix_(y1, x0)]
    d = m[np.ix_(y1, x1)]
    top = a + tx[None, :] * (b - a)
    bot = c + tx[None, :] * (d - c)
    return (top + ty[:, None] * (bot - top)).astype(np.float32)


def accumulate_masked_np(feats, alphas, sigmas, centers_i, centers_j, use):
    # feats (K,h,w); per usable k: P/N += gauss(center_k, sigma_k) * alpha_k * feats[k]
    k_count, h, w = feats.shape
    pos = np.zeros((h, w), np.float32)
    neg = np.zeros((h, w), np.float32)
    rows = np.arange(h, dtype=np.float32)[:, None]
    cols = np.arange(w, dtype=np.float32)[None, :]
    for k in range(k_count):
        if not use[k]:
            continue
        dy = rows - np.float32(centers_i[k])
        dx = cols - np.float32(centers_j[k])
        mask = np.exp(-(dx * dx + dy * dy) / np.float32(2.0 * sigmas[k] * sigmas[k]))
        term = mask * np.float32(alphas[k]) * feats[k]
        if alphas[k] >= 0.0:
            pos += term
        else:
            neg += term
    return pos, neg


# ---------------------------------------------------------------- numba path

if HAVE_NUMBA:
    from numba import njit

    @njit(cache=True)
    def conv2d_nb(x, w, b, stride, padding):
        cin, h, wd = x.shape
        cout, _, kh, kw = w.shape
        oh = (h + 2 * padding - kh) // stride + 1
        ow = (wd + 2 * padding - kw) // stride + 1
        out = np.empty((cout, oh, ow), np.float32)
        for oi in range(oh):
            i0 = oi * stride - padding
            ki_lo = max(0, -i0)
            ki_hi = min(kh, h - i0)
            for oj in range(ow):
                j0 = oj * stride - padding
                kj_lo = max(0, -j0)
                kj_hi = min(kw, wd - j0)
                for co in range(cout):
                    acc = b[co]
                    for ci in range(cin):
                        for ki in range(ki_lo, ki_hi):
                            ii = i0 + ki
                            for kj in range(kj_lo, kj_hi):
                                acc += x[ci, ii, j0 + kj] * w[co, ci, ki, kj]
                    out[co, oi, oj] = acc
        return out

    @njit(cache=True)
    def resize_bilinear_nb(m, out_h, out_w):
        h, w = m.shape
        out = np.empty((out_h, out_w), np.float32)
        sy = np.float32((h - 1) / (out_h - 1)) if out_h > 1 else np.float32(0.0)
        sx = np.float32((w - 1) / (out_w - 1)) if out_w > 1 else np.float32(0.0)
        for oi in range(out_h):
            ys = np.float32(oi) * sy
            y0 = min(int(ys), h - 1)
            y1 = min(y0 + 1, h - 1)
            ty = ys - np.float32(y0)
            for oj in range(out_w):
                xs = np.float32(oj) * sx
                x0 = min(int(xs), w - 1)
                x1 = min(x0 + 1, w - 1)
                tx = xs - np.float32(x0)
                a = m[y0, x0]
                bb = m[y0, x1]
                c = m[y1, x0]
                d = m[y1, x1]
                top = a + tx * (bb - a)
                bot = c + tx * (d - c)
                out[oi, oj] = top + ty * (bot - top)
        return out

    @njit(cache=True)
    def accumulate_masked_nb(feats, alphas, sigmas, centers_i, centers_j, use):
        k_count, h, w = feats.shape
        pos = np.zeros((h, w), np.float32)
        neg = np.zeros((h, w), np.float32)
        for k in range(k_count):
            if not use[k]:
                continue
            a = np.float32(alphas[k])
            inv = np.float32(2.0 * sigmas[k] * sigmas[k])
            ci = np.float32(centers_i[k])
            cj = np.float32(centers_j[k])
            for i in range(h):
                dy = np.float32(i) - ci
                for j in range(w):
                    dx = np.float32(j) - cj
                    mask = np.exp(-(dx * dx + dy * dy) / inv)
                    term = mask * a * feats[k, i, j]
                    if a >= 0.0:
                        pos[i, j] += term
                    else:
                        neg[i, j] += term
        return pos, neg


# conv2d dispatches to the einsum implementation on both backends: the
# vectorized reduction beats the jitted scalar loops by ~10x at these shapes
# (see benchmarks/bench_backends.py). The jitted twin stays for parity tests
# and benchmarking. Resize and accumulation are where numba pays off.
conv2d_kernel = conv2d_np
if USE_NUMBA:
    resize_bilinear_kernel = resize_bilinear_nb
    accumulate_masked_kernel = accumulate_masked_nb
else:
    resize_bilinear_kernel = resize_bilinear_np
    accumulate_masked_kernel = accumulate_masked_np
