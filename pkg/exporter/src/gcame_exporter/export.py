"""Run one image through a hooked detector and write a capture directory.

The capture format is the engine's documented interchange contract:
manifest.json (camelCase, version 1), image.png (lossless), and per-layer
NPY v1.0 files (little-endian float32, C order, K x h x w). The exporter
never computes saliency; it only records activations and the gradients of
the selected detection's class score.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np
import torch
from PIL import Image

from .models import RawDetection, build_model, load_checkpoint


@dataclass
class ExportSpec:
    model: str  # registry name, e.g. mini-one-stage
    image: str  # path to an RGB image
    out_dir: str
    checkpoint: str | None = None
    detection_index: int | None = 0  # top-score rank; None when selecting by class
    detection_class: int | None = None  # select best IoU vs gt_box within this class
    gt_box: tuple | None = None  # (x1, y1, x2, y2)
    gt_class: int | None = None
    target_layers: tuple = ()  # defaults to the model's own list
    num_classes: int = 3
    seed: int = 0
    model_tag: str = ""


@dataclass
class ExportResult:
    directory: str
    detection: RawDetection
    layer_ids: list = field(default_factory=list)


def _iou(a, b) -> float:
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    if inter <= 0.0:
        return 0.0
    ua = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / ua


def load_image(path: str) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"), dtype=np.uint8)


def select_detection(spec: ExportSpec, detections) -> RawDetection:
    if not detections:
        raise ValueError("model produced no detections")
    if spec.detection_class is not None:
        if spec.gt_box is None:
            raise ValueError("class-based selection needs a ground-truth box")
        candidates = [d for d in detections if d.class_id == spec.detection_class]
        if not candidates:
            raise ValueError(f"no detection of class {spec.detection_class}")
        best = max(candidates, key=lambda d: _iou(d.box, spec.gt_box))
        if _iou(best.box, spec.gt_box) == 0.0:
            raise ValueError("no detection of the requested class overlaps the ground-truth box")
        return best
    idx = spec.detection_index or 0
    if not 0 <= idx < len(detections):
        raise ValueError(f"detection index {idx} out of range ({len(detections)} detections)")
    return detections[idx]


def run_hooked(model: torch.nn.Module, image_u8: np.ndarray, target_layers):
    """Forward with activation recording on the named modules."""
    x = torch.from_numpy(image_u8.astype(np.float32) / 255.0).permute(2, 0, 1).unsqueeze(0)
    records = {}
    handles = []
    modules = dict(model.named_modules())
    for name in target_layers:
        if name not in modules:
            raise ValueError(f"layer {name!r} does not resolve to a module; available: {sorted(m for m in modules if m)}")

        def hook(module, args, output, _name=name):
            records[_name] = output

        handles.append(modules[name].register_forward_hook(hook))
    try:
        outputs = model(x)
    finally:
        for h in handles:
            h.remove()
    missing = [n for n in target_layers if n not in records]
    if missing:
        raise ValueError(f"layers {missing} produced no activation")
    for name, act in records.items():
        if act.dim() != 4 or act.shape[0] != 1:
            raise ValueError(f"layer {name!r} activation has shape {tuple(act.shape)}, expected (1,K,h,w)")
    return x, outputs, records


def export_capture(spec: ExportSpec) -> ExportResult:
    model = build_model(spec.model, num_classes=spec.num_classes, seed=spec.seed)
    if spec.checkpoint:
        load_checkpoint(model, spec.checkpoint)
    target_layers = tuple(spec.target_layers) or tuple(model.target_layers)
    image_u8 = load_image(spec.image)
    _, outputs, records = run_hooked(model, image_u8, target_layers)
    detections = model.decode(outputs)
    selected = select_detection(spec, detections)

    score = model.class_score_surface(outputs, selected)
    acts = [records[name] for name in target_layers]
    grads = torch.autograd.grad(score, acts, retain_graph=False, allow_unused=True)

    os.makedirs(spec.out_dir, exist_ok=True)
    Image.fromarray(image_u8, mode="RGB").save(os.path.join(spec.out_dir, "image.png"), format="PNG")
    layers_meta = []
    for name, act, grad in zip(target_layers, acts, grads):
        a = act.detach()[0].numpy().astype("<f4")
        g = (torch.zeros_like(act) if grad is None else grad)[0].numpy().astype("<f4")
        feature_file = f"{name}.features.npy"
        gradient_file = f"{name}.gradients.npy"
        np.save(os.path.join(spec.out_dir, feature_file), a)
        np.save(os.path.join(spec.out_dir, gradient_file), g)
        layers_meta.append(
            {
                "layerId": name,
                "featureFile": feature_file,
                "gradientFile": gradient_file,
                "K": int(a.shape[0]),
                "h": int(a.shape[1]),
                "w": int(a.shape[2]),
                "strideOrScale": model.layer_scale(name),
            }
        )

    manifest = {
        "version": 1,
        "imageFile": "image.png",
        "imageH": int(image_u8.shape[0]),
        "imageW": int(image_u8.shape[1]),
        "detections": [_detection_record(selected)],
        "layers": layers_meta,
        "groundTruth": None
        if spec.gt_box is None
        else [{"box": [float(v) for v in spec.gt_box], "classId": int(spec.gt_class or 0)}],
        "modelTag": spec.model_tag or f"{spec.model}@seed{spec.seed}",
    }
    with open(os.path.join(spec.out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return ExportResult(spec.out_dir, selected, [m["layerId"] for m in layers_meta])


def _detection_record(det: RawDetection) -> dict:
    rec = {
        "classId": int(det.class_id),
        "box": [float(v) for v in det.box],
        "pObj": float(det.p_obj),
        "classScores": [float(v) for v in det.class_scores],
        "source": None,
    }
    if det.source_cell is not None:
        rec["source"] = {"levelIndex": 0, "cellRow": int(det.source_cell[0]), "cellCol": int(det.source_cell[1])}
    return rec
