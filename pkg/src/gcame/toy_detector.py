"""Deterministic anchor-free toy detector with an analytic class-score backward.

The detector is a per-scale stack of
    stem:  (s x s, stride s) patchify conv + ReLU
    neck:  3x3 identity-initialized conv + ReLU   <- explanation target layer
    heads: 1x1 convs for class logits (C), objectness (1) and box regression (4)

``build_blob_detector`` fills the weights in closed form (no training) so that
axis-aligned pure-color squares on a neutral gray background are detected with
score > 0.9. Because every layer after the neck is a 1x1 convolution, the
gradient of a detection's class score with respect to the neck output is
nonzero at exactly one spatial cell: the detection's source cell.
"""

from dataclasses import dataclass, field

import numpy as np

from . import numerics

# calibration colors the blob detector can tell apart; class c detects color c
COLOR_VALUES = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))
COLOR_NAMES = ("red", "green", "blue")

# per-cell class logit sums, scaled by feature-map area so that the mean
# gradient magnitude of an own-color channel is ~0.55 regardless of map size
# (keeps Gaussian masks at the 1-2 cell scale on toy fixtures)
_CLS_POS = 0.56
_CLS_NEG = 0.28
_OBJ_LOGIT = 4.0

HEAD_BRANCHES = ("cls", "obj", "reg")


@dataclass(frozen=True)
class LevelSpec:
    stride: int
    channels: int


@dataclass(frozen=True)
class DetectorConfig:
    input_h: int = 64
    input_w: int = 64
    levels: tuple = (LevelSpec(stride=8, channels=12),)
    num_classes: int = 3
    score_threshold: float = 0.5
    nms_iou: float = 0.5

    def validate(self):
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if not self.levels:
            raise ValueError("at least one level is required")
        for lv in self.levels:
            if lv.channels < 1:
                raise ValueError("level channels must be >= 1")
            if self.input_h % lv.stride or self.input_w % lv.stride:
                raise ValueError(
                    f"stride {lv.stride} must divide input {self.input_h}x{self.input_w}"
                )

    def feature_shape(self, level: int):
        lv = self.levels[level]
        return lv.channels, self.input_h // lv.stride, self.input_w // lv.stride


@dataclass(frozen=True)
class Source:
    level: int
    row: int
    col: int


@dataclass(frozen=True)
class Detection:
    box: tuple  # (x1, y1, x2, y2) pixels
    p_obj: float
    class_scores: tuple
    class_id: int
    score: float
    source: Source | None = None


@dataclass(frozen=True)
class Activation:
    pre: np.ndarray
    post: np.ndarray | None = None


@dataclass
class ActivationCache:
    layers: dict = field(default_factory=dict)

    def __getitem__(self, layer_id: str) -> Activation:
        if layer_id not in self.layers:
            raise KeyError(f"layer {layer_id!r} not recorded in cache")
        return self.layers[layer_id]

    def __contains__(self, layer_id: str) -> bool:
        return layer_id in self.layers


def layer_ids(config: DetectorConfig):
    out = []
    for li in range(len(config.levels)):
        for part in ("stem", "neck", "cls", "obj", "reg"):
            out.append(f"l{li}.{part}")
    return out


def is_regression_layer(layer_id: str) -> bool:
    return layer_id.endswith(".reg")


def downstream_layers(config: DetectorConfig, layer_id: str):
    """Layers from layer_id (inclusive) toward the detector output, same level."""
    level, part = parse_layer_id(config, layer_id)
    chain = {
        "stem": ("stem", "neck", "cls", "obj", "reg"),
        "neck": ("neck", "cls", "obj", "reg"),
        "cls": ("cls",),
        "obj": ("obj",),
        "reg": ("reg",),
    }[part]
    return [f"l{level}.{p}" for p in chain]


def parse_layer_id(config: DetectorConfig, layer_id: str):
    try:
        lpart, part = layer_id.split(".")
        level = int(lpart[1:])
        if lpart[0] != "l" or part not in ("stem", "neck", "cls", "obj", "reg"):
            raise ValueError
    except (ValueError, IndexError):
        raise ValueError(f"unknown layer id {layer_id!r}") from None
    if not 0 <= level < len(config.levels):
        raise ValueError(f"layer {layer_id!r}: level out of range")
    return level, part


def head_input_layer(level: int) -> str:
    """The layer whose output feeds the 1x1 head convs (explanation target)."""
    return f"l{level}.neck"


def iou_xyxy(a, b) -> float:
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    if inter == 0.0:
        return 0.0
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


def nms(dets, iou_thresh: float):
    """Greedy NMS; ties in score break by (level, row, col) for determinism."""
    def order_key(d):
        s = d.source or Source(0, 0, 0)
        return (-d.score, s.level, s.row, s.col)

    pending = sorted(dets, key=order_key)
    kept = []
    for d in pending:
        if all(iou_xyxy(d.box, k.box) < iou_thresh for k in kept):
            kept.append(d)
    return kept


class Detector:
    """Immutable weights + config; forward/backward are pure functions."""

    def __init__(self, config: DetectorConfig, weights: dict):
        config.validate()
        self.config = config
        self.weights = {}
        for lid in layer_ids(config):
            if lid not in weights:
                raise ValueError(f"missing weights for layer {lid}")
            w, b = weights[lid]
            w = numerics.as_f32(w)
            b = numerics.as_f32(b)
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValueError(f"layer {lid}: weights must be finite")
            w.flags.writeable = False
            b.flags.writeable = False
            self.weights[lid] = (w, b)

    def with_weights(self, replacements: dict) -> "Detector":
        merged = {lid: self.weights[lid] for lid in self.weights}
        merged.update(replacements)
        return Detector(self.config, merged)

    # ------------------------------------------------------------- forward

    def forward(self, image):
        image = numerics.check_image(image)
        cfg = self.config
        if image.shape[0] != cfg.input_h or image.shape[1] != cfg.input_w:
            raise ValueError(
                f"image {image.shape[0]}x{image.shape[1]} does not match "
                f"configured input {cfg.input_h}x{cfg.input_w}"
            )
        x0 = np.ascontiguousarray(image.transpose(2, 0, 1))
        cache = ActivationCache()
        candidates = []
        for li, lv in enumerate(cfg.levels):
            w, b = self.weights[f"l{li}.stem"]
            pre_stem = numerics.conv2d(x0, w, b, stride=lv.stride, padding=0)
            stem = numerics.relu(pre_stem)
            w, b = self.weights[f"l{li}.neck"]
            pre_neck = numerics.conv2d(stem, w, b, stride=1, padding=1)
            neck = numerics.relu(pre_neck)
            heads = {}
            for part in HEAD_BRANCHES:
                w, b = self.weights[f"l{li}.{part}"]
                heads[part] = numerics.conv2d(neck, w, b, stride=1, padding=0)
            cache.layers[f"l{li}.stem"] = Activation(pre_stem, stem)
            cache.layers[f"l{li}.neck"] = Activation(pre_neck, neck)
            for part in HEAD_BRANCHES:
                cache.layers[f"l{li}.{part}"] = Activation(heads[part])
            candidates.extend(self._decode(li, heads["cls"], heads["obj"], heads["reg"]))
        kept = nms(candidates, cfg.nms_iou)
        kept.sort(key=lambda d: (-d.score, d.source.level, d.source.row, d.source.col))
        return kept, cache

    def _decode(self, level: int, cls_logits, obj_logits, reg):
        cfg = self.config
        stride = cfg.levels[level].stride
        p_cls = numerics.sigmoid(cls_logits)  # (C,h,w)
        p_obj = numerics.sigmoid(obj_logits)[0]  # (h,w)
        best_c = np.argmax(p_cls, axis=0)
        h, w = p_obj.shape
        rows, cols = np.indices((h, w))
        best_p = p_cls[best_c, rows, cols]
        score = p_obj * best_p
        out = []
        for i, j in zip(*np.nonzero(score >= cfg.score_threshold)):
            i = int(i)
            j = int(j)
            dx, dy, dw, dh = (float(reg[ch, i, j]) for ch in range(4))
            cx = (j + dx) * stride
            cy = (i + dy) * stride
            bw = float(np.exp(dw)) * stride
            bh = float(np.exp(dh)) * stride
            x1 = float(np.clip(cx - bw / 2.0, 0.0, cfg.input_w))
            x2 = float(np.clip(cx + bw / 2.0, 0.0, cfg.input_w))
            y1 = float(np.clip(cy - bh / 2.0, 0.0, cfg.input_h))
            y2 = float(np.clip(cy + bh / 2.0, 0.0, cfg.input_h))
            if x2 <= x1 or y2 <= y1:
                continue
            c = int(best_c[i, j])
            out.append(
                Detection(
                    box=(x1, y1, x2, y2),
                    p_obj=float(p_obj[i, j]),
                    class_scores=tuple(float(v) for v in p_cls[:, i, j]),
                    class_id=c,
                    score=float(score[i, j]),
                    source=Source(level, i, j),
                )
            )
        return out

    # ------------------------------------------------------------ backward

    def _check_detection(self, det: Detection):
        cfg = self.config
        if det.source is None:
            raise ValueError("detection carries no source cell; cannot backpropagate")
        if not 0 <= det.source.level < len(cfg.levels):
            raise ValueError(f"stale detection: level {det.source.level} out of range")
        _, h, w = cfg.feature_shape(det.source.level)
        if not (0 <= det.source.row < h and 0 <= det.source.col < w):
            raise ValueError(f"stale detection: cell {(det.source.row, det.source.col)} out of bounds")
        if not 0 <= det.class_id < cfg.num_classes:
            raise ValueError(f"stale detection: class {det.class_id} out of range")

    def backward_class_score(self, cache: ActivationCache, det: Detection, target_layer: str):
        """d(class score)/d(target layer activation), shape (K,h,w).

        The score surface is the detection's pre-sigmoid class logit scaled by
        its (detached, constant) objectness sigmoid. Supported targets are the
        head-input layers; a target on another level than the detection yields
        an all-zero map (that branch does not feed the score).
        """
        level, part = parse_layer_id(self.config, target_layer)
        if part != "neck":
            raise ValueError(
                f"gradient at layer {target_layer!r} unsupported; explanation "
                f"targets the class-head input ({head_input_layer(level)})"
            )
        self._check_detection(det)
        if target_layer not in cache:
            raise ValueError(f"layer {target_layer!r} not recorded in cache")
        k, h, w = self.config.feature_shape(level)
        grad = np.zeros((k, h, w), np.float32)
        if level != det.source.level:
            return grad
        i, j = det.source.row, det.source.col
        obj_logit = cache[f"l{level}.obj"].pre[0, i, j]
        sg_obj = numerics.sigmoid(np.asarray([obj_logit], np.float32))[0]
        w_cls, _ = self.weights[f"l{level}.cls"]
        grad[:, i, j] = sg_obj * w_cls[det.class_id, :, 0, 0]
        return grad


def finite_diff_gradient(detector: Detector, image, det: Detection, target_layer: str, eps: float = 1e-3):
    """Central-difference oracle for ``backward_class_score``.

    Perturbs every activation entry of the target layer and re-runs the class
    head on the full perturbed tensor (float64), holding the objectness factor
    at its unperturbed value, exactly as the analytic score surface defines.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    level, part = parse_layer_id(detector.config, target_layer)
    if part != "neck":
        raise ValueError(f"finite differences target the class-head input, got {target_layer!r}")
    detector._check_detection(det)
    _, cache = detector.forward(image)
    k, h, w = detector.config.feature_shape(level)
    grad = np.zeros((k, h, w), np.float64)
    if level != det.source.level:
        return grad.astype(np.float32)
    i_t, j_t = det.source.row, det.source.col
    a0 = cache[target_layer].post.astype(np.float64)
    obj_logit = float(cache[f"l{level}.obj"].pre[0, i_t, j_t])
    sg_obj = 1.0 / (1.0 + np.exp(-obj_logit))
    w_cls, b_cls = detector.weights[f"l{level}.cls"]
    row = w_cls[det.class_id, :, 0, 0].astype(np.float64)
    bias = float(b_cls[det.class_id])

    def score(a):
        logit_map = np.tensordot(row, a, axes=(0, 0)) + bias
        return logit_map[i_t, j_t] * sg_obj

    for kk in range(k):
        for ii in range(h):
            for jj in range(w):
                a = a0.copy()
                a[kk, ii, jj] += eps
                s_plus = score(a)
                a[kk, ii, jj] -= 2.0 * eps
                s_minus = score(a)
                grad[kk, ii, jj] = (s_plus - s_minus) / (2.0 * eps)
    return grad.astype(np.float32)


# ------------------------------------------------------------ construction

def build_blob_detector(config: DetectorConfig = DetectorConfig()) -> Detector:
    """Closed-form weights that detect pure-color squares; fully deterministic.

    Stem channel k measures the patch-mean contrast of calibration color
    k % 3 against the other two; the neck passes channels through; class c's
    head weighs own-color channels positive and the rest negative; regression
    biases make every cell predict its own extent as the box.
    """
    config.validate()
    if config.num_classes > len(COLOR_VALUES):
        raise ValueError(
            f"blob detector calibration supports at most {len(COLOR_VALUES)} classes, "
            f"got {config.num_classes}"
        )
    weights = {}
    for li, lv in enumerate(config.levels):
        kch = lv.channels
        if kch < len(COLOR_VALUES):
            raise ValueError(f"blob detector needs >= {len(COLOR_VALUES)} channels per level, got {kch}")
        s = lv.stride
        _, fh, fw = config.feature_shape(li)
        area = float(fh * fw)
        colors = np.asarray([k % 3 for k in range(kch)])
        counts = np.asarray([(colors == c).sum() for c in range(3)], np.float64)

        stem_w = np.zeros((kch, 3, s, s), np.float32)
        for k in range(kch):
            own = colors[k]
            for ch in range(3):
                stem_w[k, ch] = (1.0 if ch == own else -0.5) / (s * s)
        stem_b = np.zeros(kch, np.float32)
        weights[f"l{li}.stem"] = (stem_w, stem_b)

        neck_w = np.zeros((kch, kch, 3, 3), np.float32)
        for k in range(kch):
            neck_w[k, k, 1, 1] = 1.0
        weights[f"l{li}.neck"] = (neck_w, np.zeros(kch, np.float32))

        cls_w = np.zeros((config.num_classes, kch, 1, 1), np.float32)
        cls_b = np.zeros(config.num_classes, np.float32)
        for c in range(config.num_classes):
            for k in range(kch):
                cls_w[c, k, 0, 0] = _CLS_POS * area if colors[k] == c else -_CLS_NEG * area
            cls_b[c] = -_CLS_NEG * area * counts[c]
        weights[f"l{li}.cls"] = (cls_w, cls_b)

        obj_w = np.zeros((1, kch, 1, 1), np.float32)
        for k in range(kch):
            obj_w[0, k, 0, 0] = 2.0 * _OBJ_LOGIT / counts[colors[k]]
        weights[f"l{li}.obj"] = (obj_w, np.asarray([-_OBJ_LOGIT], np.float32))

        reg_w = np.zeros((4, kch, 1, 1), np.float32)
        reg_b = np.asarray([0.5, 0.5, 0.0, 0.0], np.float32)
        weights[f"l{li}.reg"] = (reg_w, reg_b)
    return Detector(config, weights)
