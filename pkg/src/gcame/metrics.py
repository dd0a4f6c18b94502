"""Evaluation suite: localization, faithfulness, and compression metrics.

Boxes are (x1, y1, x2, y2) pixel tuples; a pixel (row i, col j) counts as
inside a box when its center (j+0.5, i+0.5) does. Accumulation runs in
float64 with sorted reduction so batch results are bit-stable regardless of
record order.
"""

from dataclasses import dataclass

import numpy as np

TINY_AREA_RATIO = 0.005


def check_box(box):
    x1, y1, x2, y2 = (float(v) for v in box)
    if not (x1 < x2 and y1 < y2):
        raise ValueError(f"degenerate box {box}: need x1 < x2 and y1 < y2")
    return x1, y1, x2, y2


def iou(a, b) -> float:
    ax1, ay1, ax2, ay2 = check_box(a)
    bx1, by1, bx2, by2 = check_box(b)
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return inter / union


def _inside_mask(shape, box):
    h, w = shape
    x1, y1, x2, y2 = check_box(box)
    cols = np.arange(w) + 0.5
    rows = np.arange(h) + 0.5
    return ((rows >= y1) & (rows <= y2))[:, None] & ((cols >= x1) & (cols <= x2))[None, :]


def pointing_game(saliency, gt_box, multi_max: bool = False) -> bool:
    """Hit iff the saliency argmax lies inside the box.

    With multi_max, every pixel attaining the global max must lie inside
    (the tiny-object variant); otherwise the first max in row-major order
    decides.
    """
    saliency = np.asarray(saliency)
    inside = _inside_mask(saliency.shape, gt_box)
    if multi_max:
        peak = saliency == saliency.max()
        return bool(np.all(inside[peak]))
    flat = int(np.argmax(saliency))
    i, j = flat // saliency.shape[1], flat % saliency.shape[1]
    return bool(inside[i, j])


def ebpg(saliency, box) -> float:
    """Fraction of total saliency energy inside the box; 0 if the map is empty."""
    saliency = np.asarray(saliency, dtype=np.float64)
    if saliency.min() < 0:
        raise ValueError("ebpg expects a non-negative saliency map")
    total = float(saliency.sum())
    if total == 0.0:
        return 0.0
    inside = _inside_mask(saliency.shape, box)
    return float(saliency[inside].sum()) / total


def is_tiny(box, image_h: int, image_w: int) -> bool:
    x1, y1, x2, y2 = check_box(box)
    return (x2 - x1) * (y2 - y1) / (image_h * image_w) <= TINY_AREA_RATIO


def perturb_image(image, saliency, keep_fraction: float = 0.2, fill: str = "global"):
    """Mean-fill the image where the explanation is strongest.

    The mask keeps the ceil(keep_fraction * H * W) highest-valued saliency
    pixels (row-major order breaks ties exactly at the count) and zeroes the
    rest; the image becomes I*(1-M) + mean*M. ``fill`` selects a single
    global mean or a per-channel mean.
    """
    image = np.asarray(image, dtype=np.float32)
    saliency = np.asarray(saliency, dtype=np.float32)
    if image.shape[:2] != saliency.shape:
        raise ValueError(f"image {image.shape} and saliency {saliency.shape} dims differ")
    if not 0.0 < keep_fraction <= 1.0:
        raise ValueError("keep_fraction must be in (0, 1]")
    h, w = saliency.shape
    n_keep = int(np.ceil(keep_fraction * h * w))
    flat = saliency.ravel()
    order = np.argsort(-flat, kind="stable")
    mask = np.zeros(h * w, np.float32)
    keep_idx = order[:n_keep]
    mask[keep_idx] = flat[keep_idx]
    mask = mask.reshape(h, w)
    if fill == "global":
        mu = np.float32(image.mean(dtype=np.float64))
        mu = np.full(3, mu, np.float32) if image.ndim == 3 else mu
    elif fill == "per_channel":
        mu = image.mean(axis=(0, 1), dtype=np.float64).astype(np.float32)
    else:
        raise ValueError(f"unknown fill {fill!r}; expected 'global' or 'per_channel'")
    m = mask[..., None] if image.ndim == 3 else mask
    return (image * (1.0 - m) + mu * m).astype(np.float32)


def matched_confidence(original_det, perturbed_dets, same_class_only: bool = False) -> float:
    """Confidence of the original box surviving in a perturbed prediction.

    Max-IOU match over the perturbed detections (optionally restricted to
    the original class), times the matched box's score for the original
    class; no detections -> 0.
    """
    candidates = perturbed_dets
    if same_class_only:
        candidates = [d for d in perturbed_dets if d.class_id == original_det.class_id]
    best_iou, best_det = 0.0, None
    for d in candidates:
        v = iou(original_det.box, d.box)
        if v > best_iou:
            best_iou, best_det = v, d
    if best_det is None:
        return 0.0
    return best_iou * float(best_det.class_scores[original_det.class_id])


@dataclass
class EvalRecord:
    original_score: float
    perturbed_score: float
    saliency: np.ndarray | None = None
    gt_box: tuple | None = None


def average_drop(records) -> float:
    """Mean relative confidence drop, in percent, one record per detection."""
    if not records:
        raise ValueError("average_drop needs at least one record")
    drops = []
    for r in records:
        if r.original_score <= 0.0:
            raise ValueError("average_drop requires original scores > 0")
        drops.append(max(r.original_score - r.perturbed_score, 0.0) / r.original_score)
    total = float(np.sum(np.sort(np.asarray(drops, np.float64))))
    return total / len(records) * 100.0


@dataclass
class InformationDrop:
    drop_percent: float
    ratio: float
    codec: str
    quality: int


def information_drop(original, bokeh, quality: int = 75) -> InformationDrop:
    """Compressed-size drop of the bokeh image relative to the original."""
    from .capture_io import encode_lossy

    original = np.asarray(original)
    bokeh = np.asarray(bokeh)
    if original.shape != bokeh.shape:
        raise ValueError(f"image dims differ: {original.shape} vs {bokeh.shape}")
    size_orig = len(encode_lossy(original, quality))
    size_bokeh = len(encode_lossy(bokeh, quality))
    ratio = size_bokeh / size_orig
    return InformationDrop(100.0 * (1.0 - ratio), ratio, "webp", quality)


@dataclass
class MetricsReport:
    pg: float | None = None
    ebpg: float | None = None
    average_drop_percent: float | None = None
    information_drop_percent: float | None = None
    pg_tiny: float | None = None
    ebpg_tiny: float | None = None
    n: int = 0
    n_tiny: int = 0

    def to_json_dict(self) -> dict:
        return {
            "pg": self.pg,
            "ebpg": self.ebpg,
            "averageDropPercent": self.average_drop_percent,
            "informationDropPercent": self.information_drop_percent,
            "pgTiny": self.pg_tiny,
            "ebpgTiny": self.ebpg_tiny,
            "n": self.n,
            "nTiny": self.n_tiny,
        }


def _sorted_mean(values) -> float:
    return float(np.sum(np.sort(np.asarray(values, np.float64))) / len(values))


def build_report(entries) -> MetricsReport:
    """Aggregate per-detection entries into a report with a tiny-object split.

    Each entry is a dict with keys pg (bool), ebpg (float), tiny (bool) and
    optional drop (percent) and info_drop (percent). Empty tiny split leaves
    the tiny fields as None.
    """
    if not entries:
        raise ValueError("no evaluation entries")
    report = MetricsReport(n=len(entries))
    report.pg = _sorted_mean([float(e["pg"]) for e in entries])
    report.ebpg = _sorted_mean([e["ebpg"] for e in entries])
    tiny = [e for e in entries if e["tiny"]]
    report.n_tiny = len(tiny)
    if tiny:
        report.pg_tiny = _sorted_mean([float(e["pg"]) for e in tiny])
        report.ebpg_tiny = _sorted_mean([e["ebpg"] for e in tiny])
    drops = [e["drop"] for e in entries if e.get("drop") is not None]
    if drops:
        report.average_drop_percent = _sorted_mean(drops)
    infos = [e["info_drop"] for e in entries if e.get("info_drop") is not None]
    if infos:
        report.information_drop_percent = _sorted_mean(infos)
    return report
