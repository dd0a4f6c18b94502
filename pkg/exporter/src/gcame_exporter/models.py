"""Miniature torch detectors the exporter can hook out of the box.

Two architectures cover the two gradient regimes the engine distinguishes:

- ``mini-one-stage``: patchify conv + 3x3 conv backbone, then decoupled 1x1
  conv heads (class / objectness / box). Everything downstream of the head
  input is 1x1, so one detection's class-score gradient touches exactly one
  spatial cell of the head-input feature map.
- ``mini-two-stage``: conv backbone, grid proposals pooled with roi_align,
  then a linear classifier. The class-score gradient spreads over every
  feature-map cell the ROI sampling taps, i.e. more than one pixel.

Both are ordinary ``nn.Module``s: construct with seeded random weights, save
``state_dict`` checkpoints, reload them, hook their layers.
"""

import math
from dataclasses import dataclass

import torch
from torch import nn
from torchvision.ops import roi_align


@dataclass
class RawDetection:
    box: tuple  # (x1, y1, x2, y2) image pixels
    p_obj: float
    class_scores: tuple
    class_id: int
    score: float
    source_cell: tuple | None  # (row, col) on the target feature map, if defined


class MiniOneStage(nn.Module):
    """Anchor-free single-level detector with 1x1-conv heads."""

    stride = 8
    target_layers = ("neck",)

    def __init__(self, channels: int = 16, num_classes: int = 3):
        super().__init__()
        self.num_classes = num_classes
        self.stem = nn.Sequential(nn.Conv2d(3, channels, 8, stride=8), nn.ReLU())
        self.neck = nn.Sequential(nn.Conv2d(channels, channels, 3, padding=1), nn.ReLU())
        self.head_cls = nn.Conv2d(channels, num_classes, 1)
        self.head_obj = nn.Conv2d(channels, 1, 1)
        self.head_reg = nn.Conv2d(channels, 4, 1)

    def forward(self, x):
        feat = self.neck(self.stem(x))
        return {
            "cls": self.head_cls(feat),
            "obj": self.head_obj(feat),
            "reg": self.head_reg(feat),
        }

    def decode(self, outputs, top_k: int = 16):
        cls_logits = outputs["cls"][0].detach()
        obj = torch.sigmoid(outputs["obj"][0, 0].detach())
        p_cls = torch.sigmoid(cls_logits)
        best_p, best_c = p_cls.max(dim=0)
        score = obj * best_p
        h, w = score.shape
        flat = score.flatten()
        k = min(top_k, flat.numel())
        top = torch.topk(flat, k)
        dets = []
        reg = outputs["reg"][0].detach()
        for rank in range(k):
            idx = int(top.indices[rank])
            i, j = idx // w, idx % w
            dx, dy, dw, dh = (float(v) for v in reg[:, i, j])
            cx = (j + 0.5 + dx) * self.stride
            cy = (i + 0.5 + dy) * self.stride
            bw = math.exp(dw) * self.stride
            bh = math.exp(dh) * self.stride
            dets.append(
                RawDetection(
                    box=(cx - bw / 2, cy - bh / 2, cx + bw / 2, cy + bh / 2),
                    p_obj=float(obj[i, j]),
                    class_scores=tuple(float(v) for v in p_cls[:, i, j]),
                    class_id=int(best_c[i, j]),
                    score=float(score[i, j]),
                    source_cell=(int(i), int(j)),
                )
            )
        return dets

    def class_score_surface(self, outputs, det: RawDetection):
        """Pre-sigmoid class logit scaled by the detached objectness sigmoid."""
        i, j = det.source_cell
        sg_obj = torch.sigmoid(outputs["obj"][0, 0, i, j]).detach()
        return outputs["cls"][0, det.class_id, i, j] * sg_obj

    def layer_scale(self, layer: str) -> float:
        return float(self.stride)


class MiniTwoStage(nn.Module):
    """Backbone + grid proposals + roi_align + linear classifier."""

    stride = 4
    pool = 4
    target_layers = ("backbone",)

    def __init__(self, channels: int = 16, num_classes: int = 3, grid: int = 2):
        super().__init__()
        self.num_classes = num_classes
        self.grid = grid
        self.backbone = nn.Sequential(
            nn.Conv2d(3, channels, 4, stride=4),
            nn.ReLU(),
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.ReLU(),
        )
        self.classifier = nn.Linear(channels * self.pool * self.pool, num_classes)

    def proposals(self, image_h: int, image_w: int):
        """Fixed grid of overlapping region proposals in image pixels."""
        boxes = []
        bh, bw = image_h / self.grid, image_w / self.grid
        for gi in range(self.grid):
            for gj in range(self.grid):
                boxes.append((gj * bw, gi * bh, (gj + 1) * bw, (gi + 1) * bh))
        return torch.tensor(boxes, dtype=torch.float32)

    def forward(self, x):
        feat = self.backbone(x)
        boxes = self.proposals(x.shape[2], x.shape[3])
        pooled = roi_align(feat, [boxes], output_size=self.pool, spatial_scale=1.0 / self.stride, aligned=True)
        logits = self.classifier(pooled.flatten(1))
        return {"boxes": boxes, "logits": logits}

    def decode(self, outputs, top_k: int = 16):
        probs = torch.softmax(outputs["logits"].detach(), dim=1)
        dets = []
        for p in range(outputs["boxes"].shape[0]):
            scores = tuple(float(v) for v in probs[p])
            cid = int(torch.argmax(probs[p]))
            dets.append(
                RawDetection(
                    box=tuple(float(v) for v in outputs["boxes"][p]),
                    p_obj=1.0,
                    class_scores=scores,
                    class_id=cid,
                    score=scores[cid],
                    source_cell=None,  # ROI pooling has no single source cell
                )
            )
        dets.sort(key=lambda d: -d.score)
        return dets[:top_k]

    def class_score_surface(self, outputs, det: RawDetection):
        target = torch.tensor(det.box, dtype=torch.float32)
        idx = int(torch.argmin((outputs["boxes"] - target).abs().sum(dim=1)))
        return outputs["logits"][idx, det.class_id]

    def layer_scale(self, layer: str) -> float:
        return float(self.stride)


MODEL_REGISTRY = {
    "mini-one-stage": MiniOneStage,
    "mini-two-stage": MiniTwoStage,
}


def build_model(name: str, num_classes: int = 3, seed: int = 0) -> nn.Module:
    if name not in MODEL_REGISTRY:
        raise ValueError(f"unknown model {name!r}; available: {sorted(MODEL_REGISTRY)}")
    torch.manual_seed(seed)
    model = MODEL_REGISTRY[name](num_classes=num_classes)
    model.eval()
    return model


def load_checkpoint(model: nn.Module, path: str) -> nn.Module:
    state = torch.load(path, map_location="cpu", weights_only=True)
    model.load_state_dict(state)
    model.eval()
    return model
