import io
import json
import os

import numpy as np
import pytest
from PIL import Image

from gcame.capture_io import (
    BadMagicError,
    Capture,
    HeatmapStyle,
    LayerRecord,
    MissingFileError,
    ShapeMismatchError,
    UnsupportedDtypeError,
    encode_lossy,
    load_npy,
    png_bytes,
    read_capture,
    read_weights,
    render_heatmap,
    save_npy,
    write_capture,
    write_weights,
)
from gcame.fixtures import default_config
from gcame.toy_detector import Detection, Source, build_blob_detector, layer_ids


# ---------------------------------------------------------------------- npy

def test_npy_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    arr = rng.normal(size=(3, 5, 7)).astype(np.float32)
    path = str(tmp_path / "a.npy")
    save_npy(path, arr)
    back = load_npy(path)
    assert back.shape == arr.shape
    assert back.tobytes() == arr.tobytes()


def test_npy_interops_with_numpy(tmp_path):
    rng = np.random.default_rng(1)
    arr = rng.normal(size=(2, 4)).astype(np.float32)
    ours = str(tmp_path / "ours.npy")
    save_npy(ours, arr)
    via_np = np.load(ours)
    np.testing.assert_array_equal(via_np, arr)
    theirs = str(tmp_path / "theirs.npy")
    np.save(theirs, arr)
    np.testing.assert_array_equal(load_npy(theirs), arr)


def test_npy_write_deterministic(tmp_path):
    arr = np.arange(12, dtype=np.float32).reshape(3, 4)
    p1, p2 = str(tmp_path / "1.npy"), str(tmp_path / "2.npy")
    save_npy(p1, arr)
    save_npy(p2, arr)
    assert open(p1, "rb").read() == open(p2, "rb").read()


def test_npy_error_taxonomy(tmp_path):
    with pytest.raises(MissingFileError):
        load_npy(str(tmp_path / "absent.npy"))
    bad_magic = tmp_path / "bad.npy"
    bad_magic.write_bytes(b"NOTNUMPYAT ALL")
    with pytest.raises(BadMagicError):
        load_npy(str(bad_magic))
    big_endian = tmp_path / "be.npy"
    np.save(str(big_endian), np.zeros((2, 2), dtype=">f4"))
    with pytest.raises(UnsupportedDtypeError):
        load_npy(str(big_endian))
    f64 = tmp_path / "f8.npy"
    np.save(str(f64), np.zeros((2, 2), dtype=np.float64))
    with pytest.raises(UnsupportedDtypeError):
        load_npy(str(f64))
    truncated = tmp_path / "trunc.npy"
    save_npy(str(truncated), np.ones((4, 4), np.float32))
    payload = truncated.read_bytes()
    truncated.write_bytes(payload[:-8])
    with pytest.raises(ShapeMismatchError):
        load_npy(str(truncated))


# ------------------------------------------------------------------ capture

def _sample_capture(seed=0, layers=2, dets=2, with_gt=True):
    rng = np.random.default_rng(seed)
    h, w = int(rng.integers(8, 48)), int(rng.integers(8, 48))
    det_list = []
    for i in range(dets):
        scores = tuple(float(v) for v in rng.uniform(0, 1, 3))
        cid = int(rng.integers(0, 3))
        x1, y1 = float(rng.uniform(0, w / 2)), float(rng.uniform(0, h / 2))
        det_list.append(
            Detection(
                box=(x1, y1, x1 + float(rng.uniform(1, w / 2)), y1 + float(rng.uniform(1, h / 2))),
                p_obj=float(rng.uniform(0, 1)),
                class_scores=scores,
                class_id=cid,
                score=0.0,
                source=Source(0, int(rng.integers(0, 4)), int(rng.integers(0, 4))) if rng.random() < 0.5 else None,
            )
        )
    layer_list = []
    for li in range(layers):
        k, fh, fw = int(rng.integers(1, 6)), int(rng.integers(2, 9)), int(rng.integers(2, 9))
        layer_list.append(
            LayerRecord(
                f"layer{li}",
                rng.normal(size=(k, fh, fw)).astype(np.float32),
                rng.normal(size=(k, fh, fw)).astype(np.float32),
                float(rng.choice([4.0, 8.0, 16.0])),
            )
        )
    gt = None
    if with_gt:
        gt = [((1.0, 1.0, 5.0, 5.0), int(rng.integers(0, 3)))]
    return Capture(
        image=rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8),
        detections=det_list,
        layers=layer_list,
        ground_truth=gt,
        model_tag=f"fuzz-{seed}",
    )


def test_capture_roundtrip_structural(tmp_path):
    cap = _sample_capture(3)
    d = str(tmp_path / "cap")
    write_capture(cap, d)
    back = read_capture(d)
    assert np.array_equal(back.image, cap.image)
    assert back.model_tag == cap.model_tag
    assert back.ground_truth == cap.ground_truth
    assert len(back.detections) == len(cap.detections)
    for a, b in zip(back.detections, cap.detections):
        assert a.box == b.box
        assert a.class_id == b.class_id
        assert a.p_obj == b.p_obj
        assert a.class_scores == b.class_scores
        assert a.source == b.source
    for a, b in zip(back.layers, cap.layers):
        assert a.layer_id == b.layer_id
        assert a.features.tobytes() == b.features.tobytes()
        assert a.gradients.tobytes() == b.gradients.tobytes()
        assert a.stride_or_scale == b.stride_or_scale


def test_capture_write_byte_deterministic(tmp_path):
    cap = _sample_capture(5)
    d1, d2 = str(tmp_path / "a"), str(tmp_path / "b")
    write_capture(cap, d1)
    write_capture(cap, d2)
    files1 = sorted(os.listdir(d1))
    assert files1 == sorted(os.listdir(d2))
    for name in files1:
        assert open(os.path.join(d1, name), "rb").read() == open(os.path.join(d2, name), "rb").read(), name


def test_capture_empty_layers_ok(tmp_path):
    cap = Capture(image=np.zeros((4, 4, 3), np.uint8), detections=[], layers=[])
    d = str(tmp_path / "empty")
    write_capture(cap, d)
    back = read_capture(d)
    assert back.layers == []
    manifest = json.loads(open(os.path.join(d, "manifest.json")).read())
    assert manifest["layers"] == []
    assert manifest["version"] == 1


def test_capture_manifest_shape_mismatch(tmp_path):
    cap = _sample_capture(7, layers=1)
    d = str(tmp_path / "cap")
    write_capture(cap, d)
    manifest_path = os.path.join(d, "manifest.json")
    manifest = json.loads(open(manifest_path).read())
    manifest["layers"][0]["K"] += 1
    open(manifest_path, "w").write(json.dumps(manifest))
    with pytest.raises(ShapeMismatchError):
        read_capture(d)


def test_capture_missing_manifest(tmp_path):
    with pytest.raises(MissingFileError):
        read_capture(str(tmp_path / "nope"))


def test_capture_rejects_non_finite_arrays():
    feats = np.ones((1, 2, 2), np.float32)
    grads = np.ones((1, 2, 2), np.float32)
    grads[0, 0, 0] = np.nan
    cap = Capture(image=np.zeros((4, 4, 3), np.uint8), layers=[LayerRecord("l", feats, grads, 1.0)])
    with pytest.raises(ValueError, match="non-finite"):
        cap.validate()


def test_capture_fuzz_roundtrip(tmp_path):
    for seed in range(20):
        cap = _sample_capture(seed, layers=seed % 4, dets=seed % 3, with_gt=bool(seed % 2))
        d = str(tmp_path / f"cap{seed}")
        write_capture(cap, d)
        back = read_capture(d)
        assert np.array_equal(back.image, cap.image)
        for a, b in zip(back.layers, cap.layers):
            assert a.features.tobytes() == b.features.tobytes()
            assert a.gradients.tobytes() == b.gradients.tobytes()


# ------------------------------------------------------------ weight dumps

def test_weights_roundtrip(tmp_path):
    cfg = default_config()
    detector = build_blob_detector(cfg)
    d = str(tmp_path / "weights")
    write_weights(detector, d)
    back = read_weights(cfg, d)
    for lid in layer_ids(cfg):
        assert back[lid][0].tobytes() == detector.weights[lid][0].tobytes()
        assert back[lid][1].tobytes() == detector.weights[lid][1].tobytes()


# ------------------------------------------------------------------ images

def test_render_heatmap_alpha_zero_recovers_image():
    rng = np.random.default_rng(2)
    img = rng.integers(0, 256, size=(12, 14, 3), dtype=np.uint8)
    sal = rng.uniform(0, 1, (12, 14)).astype(np.float32)
    png = render_heatmap(img, sal, HeatmapStyle(alpha=0.0))
    decoded = np.asarray(Image.open(io.BytesIO(png)).convert("RGB"))
    np.testing.assert_array_equal(decoded, img)


def test_render_heatmap_deterministic_and_uniform_on_zero():
    img = np.zeros((8, 8, 3), np.uint8)
    sal = np.zeros((8, 8), np.float32)
    p1 = render_heatmap(img, sal, HeatmapStyle(alpha=1.0))
    p2 = render_heatmap(img, sal, HeatmapStyle(alpha=1.0))
    assert p1 == p2
    decoded = np.asarray(Image.open(io.BytesIO(p1)).convert("RGB"))
    assert np.all(decoded == decoded[0, 0])  # lowest-colormap tint everywhere


def test_render_heatmap_dim_mismatch():
    with pytest.raises(ValueError, match="dims differ"):
        render_heatmap(np.zeros((4, 4, 3), np.uint8), np.zeros((5, 5), np.float32))


def test_encode_lossy_webp_container_and_quality():
    rng = np.random.default_rng(8)
    img = rng.integers(0, 256, size=(40, 40, 3), dtype=np.uint8)
    data = encode_lossy(img, 75)
    assert data[:4] == b"RIFF"
    assert data[8:12] == b"WEBP"
    low = encode_lossy(img, 50)
    high = encode_lossy(img, 90)
    assert len(high) >= len(low)
    tiny = encode_lossy(np.zeros((1, 1, 3), np.uint8), 75)
    assert tiny[:4] == b"RIFF"
    with pytest.raises(ValueError, match="quality"):
        encode_lossy(img, 101)


def test_png_bytes_lossless():
    rng = np.random.default_rng(4)
    img = rng.integers(0, 256, size=(9, 5, 3), dtype=np.uint8)
    decoded = np.asarray(Image.open(io.BytesIO(png_bytes(img))).convert("RGB"))
    np.testing.assert_array_equal(decoded, img)
