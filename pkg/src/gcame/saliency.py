"""Saliency-map construction: locate, weight, mask, combine.

Given feature maps A (K,h,w) and the gradient maps G (K,h,w) of one
detection's class score, each usable feature map k gets a scalar weight
(the gradient mean), a Gaussian mask centered on the object's cell, and the
masked weighted maps are combined into one non-negative normalized map at
image resolution. Feature maps whose gradient is identically zero carry no
location signal and are skipped.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels, numerics
from .toy_detector import Detection, Detector, head_input_layer

SIGMA_FLOOR = 1e-3


class NoSignalError(ValueError):
    """Raised when a gradient slice carries no location signal."""


def locate_center(grads: np.ndarray, mode: str, k: int):
    """Find the object's cell in gradient slice k.

    one_stage: the unique nonzero cell (an error if the support is larger);
    two_stage: the argmax of |G_k|, first in row-major order on ties.
    """
    g = grads[k]
    if mode == "one_stage":
        nz = np.nonzero(g)
        count = nz[0].size
        if count == 0:
            raise NoSignalError(f"no signal for feature map {k}")
        if count > 1:
            raise ValueError(
                f"one_stage expects single-pixel gradient support, feature map {k} has {count} nonzero cells"
            )
        return int(nz[0][0]), int(nz[1][0])
    if mode == "two_stage":
        a = np.abs(g)
        if not a.any():
            raise NoSignalError(f"no signal for feature map {k}")
        flat = int(np.argmax(a))
        return flat // g.shape[1], flat % g.shape[1]
    raise ValueError(f"unknown center mode {mode!r}; expected 'one_stage' or 'two_stage'")


def compute_alpha(grad_k: np.ndarray, reduction: str = "mean") -> float:
    """Feature-map weight: mean of the gradient slice (or the bare sum)."""
    total = float(np.sum(grad_k, dtype=np.float64))
    if reduction == "mean":
        return total / grad_k.size
    if reduction == "sum":
        return total
    raise ValueError(f"unknown reduction {reduction!r}; expected 'mean' or 'sum'")


def partition_feature_maps(alphas):
    """Indices with non-negative weight vs. strictly negative weight."""
    k1 = [k for k, a in enumerate(alphas) if a >= 0.0]
    k2 = [k for k, a in enumerate(alphas) if a < 0.0]
    return k1, k2


def compute_sigma(grad_k: np.ndarray, image_h: int, image_w: int) -> float:
    """Gaussian spread for one feature map, in feature-map cells.

    sigma = log|mean gradient| * log(scale) * 3 / floor((sqrt(h*w)-1)/2),
    scale being the image-to-feature linear size ratio; returned as
    max(|sigma|, 1e-3) so degenerate values collapse to a near-delta mask.
    """
    hw = grad_k.size
    if hw <= 1:
        raise ValueError("compute_sigma needs a feature map larger than one cell")
    mean = float(np.sum(grad_k, dtype=np.float64)) / hw
    if mean == 0.0:
        raise NoSignalError("mean gradient is zero; no signal for this feature map")
    importance = math.log(abs(mean))
    scale = math.sqrt((image_h * image_w) / hw)
    # kernel-size rule of thumb inverted; maps below 3x3 would floor to 0
    denom = max(1, int((math.sqrt(hw) - 1.0) // 2.0))
    sigma = importance * math.log(scale) * 3.0 / denom
    return max(abs(sigma), SIGMA_FLOOR)


def gaussian_mask(h: int, w: int, center, sigma: float) -> np.ndarray:
    """Gaussian bump over an (h, w) grid, scaled so the center value is 1."""
    i_t, j_t = center
    if not (0 <= i_t < h and 0 <= j_t < w):
        raise ValueError(f"center {center} out of bounds for {h}x{w} grid")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    dy = np.arange(h, dtype=np.float32)[:, None] - np.float32(i_t)
    dx = np.arange(w, dtype=np.float32)[None, :] - np.float32(j_t)
    mask = np.exp(-(dx * dx + dy * dy) / np.float32(2.0 * sigma * sigma))
    return mask.astype(np.float32)


@dataclass
class SaliencyResult:
    values: np.ndarray  # (H,W) float32 in [0,1]
    raw: np.ndarray | None = None  # feature-resolution pre-resize map (single layer)
    layers: tuple = ()
    used_maps: int = 0
    empty: bool = False
    detection: Detection | None = None


def combine_saliency(
    features: np.ndarray,
    grads: np.ndarray,
    image_h: int,
    image_w: int,
    mode: str = "one_stage",
    alpha_reduction: str = "mean",
    pinned_center=None,
) -> SaliencyResult:
    """Fuse one layer's (A, G) pair into a normalized image-size saliency map.

    Positive- and negative-weight contributions are accumulated separately
    and the negative sum is subtracted before the ReLU. ``pinned_center``
    overrides per-map center location (one shared cell for every k).
    """
    features = numerics.as_f32(features)
    grads = numerics.as_f32(grads)
    if features.shape != grads.shape or features.ndim != 3:
        raise ValueError(
            f"feature stack {features.shape} and gradient stack {grads.shape} must both be (K,h,w)"
        )
    k_count, h, w = features.shape
    alphas = np.zeros(k_count, np.float64)
    sigmas = np.ones(k_count, np.float64)
    centers_i = np.zeros(k_count, np.int64)
    centers_j = np.zeros(k_count, np.int64)
    use = np.zeros(k_count, np.bool_)
    for k in range(k_count):
        g = grads[k]
        if not g.any():
            continue
        try:
            if pinned_center is not None:
                ci, cj = pinned_center
            else:
                ci, cj = locate_center(grads, mode, k)
            if h * w == 1:
                sigma = None
            else:
                sigma = compute_sigma(g, image_h, image_w)
        except NoSignalError:
            continue
        alphas[k] = compute_alpha(g, alpha_reduction)
        # on a 1x1 map the center cell is the whole mask (distance 0 -> 1)
        # and sigma never enters; any positive placeholder works
        sigmas[k] = sigma if sigma is not None else 1.0
        centers_i[k] = ci
        centers_j[k] = cj
        use[k] = True
    used = int(use.sum())
    if used == 0:
        return SaliencyResult(
            values=np.zeros((image_h, image_w), np.float32),
            raw=np.zeros((h, w), np.float32),
            used_maps=0,
            empty=True,
        )
    pos, neg = kernels.accumulate_masked_kernel(features, alphas, sigmas, centers_i, centers_j, use)
    raw = numerics.relu(pos - neg)
    resized = numerics.bilinear_resize(raw, image_h, image_w)
    return SaliencyResult(values=numerics.normalize01(resized), raw=raw, used_maps=used)


def explain_detection(
    detector: Detector,
    cache,
    detection: Detection,
    target_layers=None,
    mode: str = "one_stage",
    alpha_reduction: str = "mean",
    pinned_center=None,
) -> SaliencyResult:
    """Explain one toy-detector detection from a recorded forward pass."""
    cfg = detector.config
    if target_layers is None:
        target_layers = [head_input_layer(li) for li in range(len(cfg.levels))]
    if not target_layers:
        raise ValueError("target_layers must not be empty")
    acc = np.zeros((cfg.input_h, cfg.input_w), np.float32)
    used_layers = []
    used_maps = 0
    for lid in target_layers:
        grads = detector.backward_class_score(cache, detection, lid)
        if not grads.any():
            continue
        feats = cache[lid].post
        part = combine_saliency(
            feats,
            grads,
            cfg.input_h,
            cfg.input_w,
            mode=mode,
            alpha_reduction=alpha_reduction,
            pinned_center=pinned_center,
        )
        if part.empty:
            continue
        acc += part.values
        used_layers.append(lid)
        used_maps += part.used_maps
    return SaliencyResult(
        values=numerics.normalize01(acc),
        layers=tuple(used_layers),
        used_maps=used_maps,
        empty=not used_layers,
        detection=detection,
    )


def explain(source, detection: Detection, target_layers=None, mode=None, alpha_reduction: str = "mean") -> SaliencyResult:
    """Explain a detection from either a capture or a (detector, image) pair.

    Captures default to one_stage when the detection records its source cell
    and to two_stage otherwise; the toy detector defaults to one_stage.
    """
    from .capture_io import Capture  # local import to avoid a cycle

    if isinstance(source, Capture):
        if mode is None:
            mode = "one_stage" if detection.source is not None else "two_stage"
        layers = source.layers
        if target_layers is not None:
            wanted = set(target_layers)
            layers = [lr for lr in source.layers if lr.layer_id in wanted]
            missing = wanted - {lr.layer_id for lr in layers}
            if missing:
                raise ValueError(f"capture has no layers named {sorted(missing)}")
        h, w = source.image.shape[0], source.image.shape[1]
        acc = np.zeros((h, w), np.float32)
        used_layers = []
        used_maps = 0
        for lr in layers:
            if not lr.gradients.any():
                continue
            part = combine_saliency(lr.features, lr.gradients, h, w, mode=mode, alpha_reduction=alpha_reduction)
            if part.empty:
                continue
            acc += part.values
            used_layers.append(lr.layer_id)
            used_maps += part.used_maps
        return SaliencyResult(
            values=numerics.normalize01(acc),
            layers=tuple(used_layers),
            used_maps=used_maps,
            empty=not used_layers,
            detection=detection,
        )
    detector, image = source
    _, cache = detector.forward(image)
    return explain_detection(
        detector,
        cache,
        detection,
        target_layers=target_layers,
        mode=mode or "one_stage",
        alpha_reduction=alpha_reduction,
    )
