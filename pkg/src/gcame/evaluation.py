"""End-to-end scoring pipelines feeding the metrics report.

The toy pipeline generates seeded two-object scenes, explains the detection
matching the target square, and scores localization (PG/EBPG), confidence
drop under mean-fill perturbation (re-running the detector on the bokeh
image), and compression-based information drop.
"""

from dataclasses import dataclass

import numpy as np

from . import metrics
from .capture_io import Capture, to_uint8_image
from .fixtures import two_object_suite
from .saliency import explain, explain_detection
from .toy_detector import build_blob_detector, iou_xyxy


@dataclass
class SampleScore:
    pg: bool
    ebpg_target: float
    ebpg_distractor: float
    tiny: bool
    drop_percent: float
    info_drop_percent: float


def evaluate_toy_suite(
    n: int = 50,
    seed: int = 0,
    size: int = 64,
    keep_fraction: float = 0.2,
    quality: int = 75,
):
    """Score the explainer on a seeded synthetic suite; returns (report, scores)."""
    samples = two_object_suite(n, seed=seed, size=size)
    if not samples:
        raise ValueError("empty evaluation suite")
    detector = build_blob_detector(samples[0].config)
    entries = []
    scores = []
    for s in samples:
        dets, cache = detector.forward(s.image)
        if not dets:
            raise RuntimeError("toy suite sample produced no detections")
        target_det = max(dets, key=lambda d: iou_xyxy(d.box, s.target.box))
        sal = explain_detection(detector, cache, target_det)
        pg = metrics.pointing_game(sal.values, s.target.box)
        ebpg_t = metrics.ebpg(sal.values, s.target.box)
        ebpg_d = metrics.ebpg(sal.values, s.distractor.box)
        tiny = metrics.is_tiny(s.target.box, size, size)
        bokeh = metrics.perturb_image(s.image, sal.values, keep_fraction)
        perturbed_dets, _ = detector.forward(bokeh)
        p_orig = float(target_det.class_scores[target_det.class_id])
        p_pert = metrics.matched_confidence(target_det, perturbed_dets)
        drop = metrics.average_drop([metrics.EvalRecord(p_orig, p_pert)])
        info = metrics.information_drop(to_uint8_image(s.image), to_uint8_image(bokeh), quality)
        entries.append(
            {"pg": pg, "ebpg": ebpg_t, "tiny": tiny, "drop": drop, "info_drop": info.drop_percent}
        )
        scores.append(SampleScore(pg, ebpg_t, ebpg_d, tiny, drop, info.drop_percent))
    return metrics.build_report(entries), scores


def evaluate_capture(capture: Capture, saliency: np.ndarray, keep_fraction: float = 0.2, quality: int = 75):
    """Score one capture's saliency against its ground truth.

    Confidence drop needs a re-runnable model, which a capture does not
    carry, so the drop entry stays None here.
    """
    if not capture.detections:
        raise ValueError("capture has no detections to evaluate")
    if capture.ground_truth is None or not capture.ground_truth:
        raise ValueError("capture has no ground truth to evaluate against")
    det = capture.detections[0]
    gt_box, _ = max(capture.ground_truth, key=lambda g: iou_xyxy(det.box, g[0]))
    h, w = capture.image.shape[:2]
    bokeh = metrics.perturb_image(capture.image_float(), saliency, keep_fraction)
    info = metrics.information_drop(capture.image, to_uint8_image(bokeh), quality)
    return {
        "pg": metrics.pointing_game(saliency, gt_box),
        "ebpg": metrics.ebpg(saliency, gt_box),
        "tiny": metrics.is_tiny(gt_box, h, w),
        "drop": None,
        "info_drop": info.drop_percent,
    }


def explain_capture_default(capture: Capture, target_layers=None, mode=None):
    """Explain a capture's top detection (records are score-sorted on write)."""
    if not capture.detections:
        raise ValueError("capture has no detections to explain")
    det = max(capture.detections, key=lambda d: d.score)
    return explain(capture, det, target_layers=target_layers, mode=mode), det
