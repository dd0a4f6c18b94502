import json
import os
import shutil
import subprocess
import sys

import numpy as np
import pytest
import torch
from PIL import Image

from gcame_exporter import ExportSpec, build_model, export_capture


@pytest.fixture(scope="module")
def image_path(tmp_path_factory):
    rng = np.random.default_rng(3)
    img = rng.integers(0, 256, size=(64, 64, 3), dtype=np.uint8)
    img[24:40, 24:40] = (220, 40, 40)  # a blob for the detectors to look at
    path = tmp_path_factory.mktemp("img") / "scene.png"
    Image.fromarray(img, "RGB").save(path)
    return str(path)


@pytest.fixture(scope="module")
def checkpoints(tmp_path_factory):
    d = tmp_path_factory.mktemp("ckpt")
    paths = {}
    for name in ("mini-one-stage", "mini-two-stage"):
        model = build_model(name, seed=7)
        path = str(d / f"{name}.pt")
        torch.save(model.state_dict(), path)
        paths[name] = path
    return paths


def _load_npy(path):
    arr = np.load(path)
    assert arr.dtype == np.dtype("<f4")
    return arr


def _manifest(directory):
    with open(os.path.join(directory, "manifest.json")) as f:
        return json.load(f)


def test_one_stage_export_single_pixel_gradients(tmp_path, image_path, checkpoints):
    out = str(tmp_path / "cap1")
    result = export_capture(
        ExportSpec(
            model="mini-one-stage",
            image=image_path,
            out_dir=out,
            checkpoint=checkpoints["mini-one-stage"],
            seed=7,
        )
    )
    manifest = _manifest(out)
    assert manifest["version"] == 1
    assert manifest["detections"][0]["source"] is not None
    meta = manifest["layers"][0]
    grads = _load_npy(os.path.join(out, meta["gradientFile"]))
    feats = _load_npy(os.path.join(out, meta["featureFile"]))
    assert grads.shape == feats.shape == (meta["K"], meta["h"], meta["w"])
    src = manifest["detections"][0]["source"]
    for k in range(grads.shape[0]):
        nz = np.transpose(np.nonzero(grads[k]))
        assert len(nz) <= 1, f"slice {k} has {len(nz)} nonzero cells"
        if len(nz):
            assert tuple(nz[0]) == (src["cellRow"], src["cellCol"])
    assert grads.any(), "gradient must carry signal"
    assert result.detection.source_cell == (src["cellRow"], src["cellCol"])


def test_two_stage_export_multi_pixel_gradients(tmp_path, image_path, checkpoints):
    out = str(tmp_path / "cap2")
    export_capture(
        ExportSpec(
            model="mini-two-stage",
            image=image_path,
            out_dir=out,
            checkpoint=checkpoints["mini-two-stage"],
            seed=7,
        )
    )
    manifest = _manifest(out)
    assert manifest["detections"][0]["source"] is None  # ROI pooling: no single cell
    meta = manifest["layers"][0]
    grads = _load_npy(os.path.join(out, meta["gradientFile"]))
    per_slice = [(grads[k] != 0).sum() for k in range(grads.shape[0])]
    assert max(per_slice) > 1, f"expected multi-pixel gradients, got {per_slice}"


def test_export_deterministic(tmp_path, image_path, checkpoints):
    spec = dict(model="mini-one-stage", image=image_path, checkpoint=checkpoints["mini-one-stage"], seed=7)
    d1, d2 = str(tmp_path / "a"), str(tmp_path / "b")
    export_capture(ExportSpec(out_dir=d1, **spec))
    export_capture(ExportSpec(out_dir=d2, **spec))
    for name in sorted(os.listdir(d1)):
        b1 = open(os.path.join(d1, name), "rb").read()
        b2 = open(os.path.join(d2, name), "rb").read()
        assert b1 == b2, f"{name} differs between identical export runs"


def test_detection_selectors(tmp_path, image_path, checkpoints):
    out = str(tmp_path / "sel")
    result = export_capture(
        ExportSpec(
            model="mini-one-stage",
            image=image_path,
            out_dir=out,
            checkpoint=checkpoints["mini-one-stage"],
            seed=7,
            detection_index=1,
        )
    )
    # rank-1 detection differs from rank-0
    top = export_capture(
        ExportSpec(
            model="mini-one-stage",
            image=image_path,
            out_dir=str(tmp_path / "sel0"),
            checkpoint=checkpoints["mini-one-stage"],
            seed=7,
        )
    )
    assert result.detection.score <= top.detection.score
    with pytest.raises(ValueError, match="ground-truth box"):
        export_capture(
            ExportSpec(
                model="mini-one-stage",
                image=image_path,
                out_dir=str(tmp_path / "bad"),
                detection_index=None,
                detection_class=0,
            )
        )
    with pytest.raises(ValueError, match="out of range"):
        export_capture(
            ExportSpec(model="mini-one-stage", image=image_path, out_dir=str(tmp_path / "bad2"), detection_index=999)
        )


def test_class_iou_selector(tmp_path, image_path, checkpoints):
    out = str(tmp_path / "cls")
    result = export_capture(
        ExportSpec(
            model="mini-two-stage",
            image=image_path,
            out_dir=out,
            checkpoint=checkpoints["mini-two-stage"],
            seed=7,
            detection_index=None,
            detection_class=None,
        )
    )
    wanted = result.detection.class_id
    picked = export_capture(
        ExportSpec(
            model="mini-two-stage",
            image=image_path,
            out_dir=str(tmp_path / "cls2"),
            checkpoint=checkpoints["mini-two-stage"],
            seed=7,
            detection_index=None,
            detection_class=wanted,
            gt_box=result.detection.box,
            gt_class=wanted,
        )
    )
    assert picked.detection.class_id == wanted
    assert _manifest(str(tmp_path / "cls2"))["groundTruth"][0]["classId"] == wanted


def test_unknown_layer_rejected(tmp_path, image_path):
    with pytest.raises(ValueError, match="does not resolve"):
        export_capture(
            ExportSpec(
                model="mini-one-stage",
                image=image_path,
                out_dir=str(tmp_path / "x"),
                target_layers=("not.a.module",),
            )
        )


def _gcame_cli_available():
    return shutil.which("gcame") is not None


@pytest.mark.skipif(not _gcame_cli_available(), reason="gcame engine CLI not installed")
def test_engine_consumes_both_exports(tmp_path, image_path, checkpoints):
    for model_name in ("mini-one-stage", "mini-two-stage"):
        cap = str(tmp_path / model_name)
        export_capture(
            ExportSpec(
                model=model_name,
                image=image_path,
                out_dir=cap,
                checkpoint=checkpoints[model_name],
                seed=7,
                gt_box=(24.0, 24.0, 40.0, 40.0),
                gt_class=0,
            )
        )
        proc = subprocess.run(
            ["gcame", "explain", "--capture", cap, "--out", cap, "--json"],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0, proc.stderr
        summary = json.loads(proc.stdout)
        assert summary["noSignal"] is False
        assert os.path.isfile(os.path.join(cap, "saliency.npy"))
    # the one-stage capture also evaluates as a dataset
    proc = subprocess.run(
        ["gcame", "evaluate", "--capture", str(tmp_path), "--out", str(tmp_path / "rep"), "--json"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    report = json.loads(proc.stdout)
    assert report["n"] == 2


def test_cli_export(tmp_path, image_path, checkpoints, capsys):
    from gcame_exporter.cli import main

    out = str(tmp_path / "cli-cap")
    code = main(
        [
            "--model",
            "mini-one-stage",
            "--image",
            image_path,
            "--out",
            out,
            "--checkpoint",
            checkpoints["mini-one-stage"],
            "--seed",
            "7",
        ]
    )
    assert code == 0
    assert os.path.isfile(os.path.join(out, "manifest.json"))
    assert "exported" in capsys.readouterr().out
    assert main(["--model", "nope", "--image", image_path, "--out", out]) == 2
