"""Bit-exact capture interchange plus heatmap rendering and lossy encoding.

A capture directory holds manifest.json, a lossless PNG of the input image,
and one NPY v1.0 file per layer for features and gradients (little-endian
float32, C-order). Writes are deterministic: stable JSON key order, fixed
NPY header padding, no encoder timestamps.
"""

import ast
import io
import json
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .toy_detector import Detection, Detector, Source, layer_ids

MANIFEST_NAME = "manifest.json"
NPY_MAGIC = b"\x93NUMPY"


class CaptureError(ValueError):
    pass


class MissingFileError(CaptureError):
    pass


class ShapeMismatchError(CaptureError):
    pass


class UnsupportedDtypeError(CaptureError):
    pass


class BadMagicError(CaptureError):
    pass


# ------------------------------------------------------------------ NPY v1.0

def save_npy(path: str, array: np.ndarray) -> None:
    """Write a float32 C-order NPY v1.0 file with deterministic header padding."""
    array = np.ascontiguousarray(array, dtype="<f4")
    header = "{'descr': '<f4', 'fortran_order': False, 'shape': %s, }" % (
        repr(tuple(int(d) for d in array.shape)),
    )
    base = len(NPY_MAGIC) + 2 + 2  # magic + version + header-length field
    pad = (64 - (base + len(header) + 1) % 64) % 64
    header = header + " " * pad + "\n"
    with open(path, "wb") as f:
        f.write(NPY_MAGIC)
        f.write(bytes([1, 0]))
        f.write(len(header).to_bytes(2, "little"))
        f.write(header.encode("latin1"))
        f.write(array.tobytes())


def load_npy(path: str) -> np.ndarray:
    """Strict NPY v1.0 reader accepting only little-endian float32 C-order."""
    if not os.path.isfile(path):
        raise MissingFileError(f"array file missing: {path}")
    with open(path, "rb") as f:
        magic = f.read(6)
        if magic != NPY_MAGIC:
            raise BadMagicError(f"{path}: not an NPY file (bad magic {magic!r})")
        version = f.read(2)
        if version != bytes([1, 0]):
            raise BadMagicError(f"{path}: unsupported NPY version {tuple(version)}")
        hlen = int.from_bytes(f.read(2), "little")
        try:
            header = ast.literal_eval(f.read(hlen).decode("latin1"))
            descr = header["descr"]
            fortran = header["fortran_order"]
            shape = tuple(int(d) for d in header["shape"])
        except (ValueError, KeyError, SyntaxError) as e:
            raise BadMagicError(f"{path}: malformed NPY header ({e})") from None
        if descr != "<f4":
            raise UnsupportedDtypeError(f"{path}: dtype {descr!r} unsupported; need little-endian float32 '<f4'")
        if fortran:
            raise UnsupportedDtypeError(f"{path}: fortran-order arrays unsupported")
        count = int(np.prod(shape)) if shape else 1
        data = f.read(count * 4)
        if len(data) != count * 4:
            raise ShapeMismatchError(f"{path}: payload has {len(data)} bytes, header shape {shape} needs {count * 4}")
        return np.frombuffer(data, dtype="<f4").reshape(shape).copy()


# ------------------------------------------------------------------ capture

@dataclass
class LayerRecord:
    layer_id: str
    features: np.ndarray  # (K,h,w) float32
    gradients: np.ndarray  # (K,h,w) float32
    stride_or_scale: float = 1.0


@dataclass
class Capture:
    image: np.ndarray  # (H,W,3) uint8
    detections: list = field(default_factory=list)
    layers: list = field(default_factory=list)
    ground_truth: list | None = None  # [(box, class_id)]
    model_tag: str = ""
    version: int = 1

    def image_float(self) -> np.ndarray:
        return (self.image.astype(np.float32) / 255.0).astype(np.float32)

    def validate(self):
        if self.version != 1:
            raise CaptureError(f"unsupported capture version {self.version}")
        img = np.asarray(self.image)
        if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
            raise CaptureError(f"capture image must be uint8 (H,W,3), got {img.dtype} {img.shape}")
        for lr in self.layers:
            for name, arr in (("features", lr.features), ("gradients", lr.gradients)):
                arr = np.asarray(arr)
                if arr.ndim != 3:
                    raise ShapeMismatchError(f"layer {lr.layer_id} {name} must be (K,h,w), got {arr.shape}")
                if not np.isfinite(arr).all():
                    raise CaptureError(f"layer {lr.layer_id} {name} contains non-finite values")
            if lr.features.shape != lr.gradients.shape:
                raise ShapeMismatchError(
                    f"layer {lr.layer_id}: feature shape {lr.features.shape} != gradient shape {lr.gradients.shape}"
                )


def _detection_to_dict(d: Detection) -> dict:
    rec = {
        "classId": int(d.class_id),
        "box": [float(v) for v in d.box],
        "pObj": float(d.p_obj),
        "classScores": [float(v) for v in d.class_scores],
    }
    if d.source is not None:
        rec["source"] = {
            "levelIndex": int(d.source.level),
            "cellRow": int(d.source.row),
            "cellCol": int(d.source.col),
        }
    else:
        rec["source"] = None
    return rec


def _detection_from_dict(rec: dict) -> Detection:
    src = rec.get("source")
    source = None
    if src is not None:
        source = Source(int(src["levelIndex"]), int(src["cellRow"]), int(src["cellCol"]))
    class_scores = tuple(float(v) for v in rec["classScores"])
    class_id = int(rec["classId"])
    p_obj = float(rec["pObj"])
    return Detection(
        box=tuple(float(v) for v in rec["box"]),
        p_obj=p_obj,
        class_scores=class_scores,
        class_id=class_id,
        score=p_obj * class_scores[class_id],
        source=source,
    )


def write_capture(capture: Capture, directory: str) -> None:
    capture.validate()
    os.makedirs(directory, exist_ok=True)
    image_file = "image.png"
    _atomic_write(os.path.join(directory, image_file), png_bytes(capture.image))
    layers_meta = []
    for lr in capture.layers:
        k, h, w = lr.features.shape
        feature_file = f"{lr.layer_id}.features.npy"
        gradient_file = f"{lr.layer_id}.gradients.npy"
        save_npy(os.path.join(directory, feature_file), lr.features)
        save_npy(os.path.join(directory, gradient_file), lr.gradients)
        layers_meta.append(
            {
                "layerId": lr.layer_id,
                "featureFile": feature_file,
                "gradientFile": gradient_file,
                "K": int(k),
                "h": int(h),
                "w": int(w),
                "strideOrScale": float(lr.stride_or_scale),
            }
        )
    manifest = {
        "version": 1,
        "imageFile": image_file,
        "imageH": int(capture.image.shape[0]),
        "imageW": int(capture.image.shape[1]),
        "detections": [_detection_to_dict(d) for d in capture.detections],
        "layers": layers_meta,
        "groundTruth": None
        if capture.ground_truth is None
        else [{"box": [float(v) for v in box], "classId": int(cid)} for box, cid in capture.ground_truth],
        "modelTag": capture.model_tag,
    }
    payload = json.dumps(manifest, indent=2, sort_keys=True).encode()
    _atomic_write(os.path.join(directory, MANIFEST_NAME), payload)


def read_capture(directory: str) -> Capture:
    manifest_path = os.path.join(directory, MANIFEST_NAME)
    if not os.path.isfile(manifest_path):
        raise MissingFileError(f"manifest missing: {manifest_path}")
    with open(manifest_path, "rb") as f:
        manifest = json.loads(f.read().decode())
    version = manifest.get("version")
    if version != 1:
        raise CaptureError(f"unsupported capture version {version!r}")
    image_path = os.path.join(directory, manifest["imageFile"])
    if not os.path.isfile(image_path):
        raise MissingFileError(f"image missing: {image_path}")
    image = np.asarray(Image.open(image_path).convert("RGB"), dtype=np.uint8)
    if image.shape[0] != manifest["imageH"] or image.shape[1] != manifest["imageW"]:
        raise ShapeMismatchError(
            f"image is {image.shape[0]}x{image.shape[1]}, manifest says "
            f"{manifest['imageH']}x{manifest['imageW']}"
        )
    layers = []
    for meta in manifest["layers"]:
        expected = (int(meta["K"]), int(meta["h"]), int(meta["w"]))
        feats = load_npy(os.path.join(directory, meta["featureFile"]))
        grads = load_npy(os.path.join(directory, meta["gradientFile"]))
        for name, arr in (("features", feats), ("gradients", grads)):
            if arr.shape != expected:
                raise ShapeMismatchError(
                    f"layer {meta['layerId']} {name}: array shape {arr.shape} != manifest {expected}"
                )
        layers.append(LayerRecord(meta["layerId"], feats, grads, float(meta["strideOrScale"])))
    ground_truth = None
    if manifest.get("groundTruth") is not None:
        ground_truth = [
            (tuple(float(v) for v in g["box"]), int(g["classId"])) for g in manifest["groundTruth"]
        ]
    capture = Capture(
        image=image,
        detections=[_detection_from_dict(r) for r in manifest["detections"]],
        layers=layers,
        ground_truth=ground_truth,
        model_tag=manifest.get("modelTag", ""),
        version=1,
    )
    capture.validate()
    return capture


# ------------------------------------------------------- detector weights

def write_weights(detector: Detector, directory: str) -> None:
    """Dump every layer's weight/bias pair so randomized runs can be replayed."""
    os.makedirs(directory, exist_ok=True)
    for lid in layer_ids(detector.config):
        w, b = detector.weights[lid]
        save_npy(os.path.join(directory, f"{lid}.weight.npy"), w)
        save_npy(os.path.join(directory, f"{lid}.bias.npy"), b)


def read_weights(config, directory: str) -> dict:
    out = {}
    for lid in layer_ids(config):
        w = load_npy(os.path.join(directory, f"{lid}.weight.npy"))
        b = load_npy(os.path.join(directory, f"{lid}.bias.npy"))
        out[lid] = (w, b)
    return out


# ------------------------------------------------------------------ images

@dataclass(frozen=True)
class HeatmapStyle:
    colormap: str = "jet"
    alpha: float = 0.5

    def validate(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"overlay alpha must be in [0,1], got {self.alpha}")


def to_uint8_image(image) -> np.ndarray:
    image = np.asarray(image)
    if image.dtype == np.uint8:
        return image
    return np.clip(np.round(np.asarray(image, np.float64) * 255.0), 0, 255).astype(np.uint8)


def png_bytes(image_u8: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(image_u8, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def render_heatmap(image, saliency, style: HeatmapStyle = HeatmapStyle()) -> bytes:
    """Alpha-blend a colormapped saliency map over the image; returns PNG bytes."""
    style.validate()
    from matplotlib import colormaps

    image_u8 = to_uint8_image(image)
    saliency = np.asarray(saliency, dtype=np.float32)
    if image_u8.shape[:2] != saliency.shape:
        raise ValueError(f"image {image_u8.shape} and saliency {saliency.shape} dims differ")
    cmap = colormaps[style.colormap]
    colored = cmap(np.clip(saliency, 0.0, 1.0))[..., :3]  # (H,W,3) float64
    blended = (1.0 - style.alpha) * (image_u8.astype(np.float64) / 255.0) + style.alpha * colored
    return png_bytes(np.clip(np.round(blended * 255.0), 0, 255).astype(np.uint8))


def encode_lossy(image, quality: int = 75) -> bytes:
    """WebP-encode an image (uint8 or float [0,1]); RIFF/WEBP container bytes."""
    if not 0 <= quality <= 100:
        raise ValueError(f"quality must be in [0,100], got {quality}")
    image_u8 = to_uint8_image(image)
    buf = io.BytesIO()
    try:
        Image.fromarray(image_u8, mode="RGB").save(buf, format="WEBP", quality=quality)
    except OSError as e:  # pragma: no cover - depends on Pillow build
        raise CaptureError(f"WebP encode failed: {e}") from e
    return buf.getvalue()


def _atomic_write(path: str, payload: bytes) -> None:
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(payload)
    os.replace(tmp, path)
