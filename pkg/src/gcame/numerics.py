"""Dense float32 tensor operations shared by the detector and the explainer.

Tensors are plain numpy float32 arrays, row-major. Images are (H, W, 3)
float32 arrays with values in [0, 1].
"""

import numpy as np

from . import kernels


def as_f32(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=np.float32)


def conv2d(x, weights, bias, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Cross-correlate x (Cin,h,w) with weights (Cout,Cin,kh,kw) plus bias.

    Output spatial size is (h + 2*padding - kh)//stride + 1; the kernel must
    fit the padded input and strides must land exactly.
    """
    x = as_f32(x)
    weights = as_f32(weights)
    bias = as_f32(bias)
    if x.ndim != 3:
        raise ValueError(f"conv2d input must be rank 3 (Cin,h,w), got shape {x.shape}")
    if weights.ndim != 4:
        raise ValueError(f"conv2d weights must be rank 4 (Cout,Cin,kh,kw), got shape {weights.shape}")
    cout, cin, kh, kw = weights.shape
    if x.shape[0] != cin:
        raise ValueError(f"conv2d channel mismatch: input has {x.shape[0]} channels, weights expect {cin}")
    if bias.shape != (cout,):
        raise ValueError(f"conv2d bias shape {bias.shape} does not match {cout} output channels")
    if stride < 1:
        raise ValueError(f"conv2d stride must be >= 1, got {stride}")
    if padding < 0:
        raise ValueError(f"conv2d padding must be >= 0, got {padding}")
    h, w = x.shape[1], x.shape[2]
    for name, dim, k in (("height", h, kh), ("width", w, kw)):
        span = dim + 2 * padding - k
        if span < 0:
            raise ValueError(f"conv2d kernel {name} {k} exceeds padded input {name} {dim + 2 * padding}")
        if span % stride != 0:
            raise ValueError(f"conv2d stride {stride} does not divide padded {name} span {span}")
    out = kernels.conv2d_kernel(x, weights, bias, stride, padding)
    if not np.isfinite(out).all():
        raise ValueError("conv2d overflowed float32; inputs or weights out of range")
    return out


def relu(x) -> np.ndarray:
    return np.maximum(as_f32(x), np.float32(0.0))


def sigmoid(x) -> np.ndarray:
    x = as_f32(x)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def activate(x, kind: str) -> np.ndarray:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation kind {kind!r}; expected 'relu' or 'sigmoid'")


def bilinear_resize(m, out_h: int, out_w: int) -> np.ndarray:
    """Resize a 2-D map with corner-aligned bilinear sampling.

    Output pixel (i, j) samples the source at (i*(h-1)/(out_h-1),
    j*(w-1)/(out_w-1)); constant maps stay constant and outputs never leave
    the input's value range.
    """
    m = as_f32(m)
    if m.ndim != 2:
        raise ValueError(f"bilinear_resize expects a 2-D map, got shape {m.shape}")
    if out_h < 1 or out_w < 1:
        raise ValueError(f"bilinear_resize output dims must be positive, got {out_h}x{out_w}")
    return kernels.resize_bilinear_kernel(m, out_h, out_w)


def normalize01(m) -> np.ndarray:
    """Rescale to [0, 1]; a constant map maps to all zeros."""
    m = as_f32(m)
    lo = float(m.min()) if m.size else 0.0
    hi = float(m.max()) if m.size else 0.0
    if hi == lo:
        return np.zeros_like(m)
    return ((m - np.float32(lo)) / np.float32(hi - lo)).astype(np.float32)


def check_image(image) -> np.ndarray:
    image = as_f32(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"image must be (H,W,3), got shape {image.shape}")
    if image.shape[0] < 1 or image.shape[1] < 1:
        raise ValueError(f"image dims must be positive, got {image.shape}")
    if float(image.min()) < 0.0 or float(image.max()) > 1.0:
        raise ValueError("image values must lie in [0, 1]")
    return image
