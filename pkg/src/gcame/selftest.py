"""Built-in verification checks behind `gcame selftest`.

Each check is a named oracle from the package's contract: analytic gradients
against central finite differences, structural single-pixel support,
Gaussian-mask analytics, the sigma worked example, NMS postconditions,
capture round trips, and the hand-computed metric fixtures.
"""

import math
import tempfile
from dataclasses import dataclass

import numpy as np

from . import metrics, numerics
from .capture_io import Capture, LayerRecord, read_capture, write_capture
from .fixtures import make_fixture
from .saliency import compute_sigma, gaussian_mask
from .toy_detector import (
    Detection,
    DetectorConfig,
    LevelSpec,
    build_blob_detector,
    finite_diff_gradient,
    head_input_layer,
    iou_xyxy,
    nms,
)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _check(name, fn):
    try:
        detail = fn()
        return CheckResult(name, True, detail or "ok")
    except AssertionError as e:
        return CheckResult(name, False, str(e) or "assertion failed")
    except Exception as e:  # noqa: BLE001 - selftest reports, never raises
        return CheckResult(name, False, f"{type(e).__name__}: {e}")


def check_conv_linearity():
    rng = np.random.default_rng(11)
    x = rng.uniform(-1, 1, (3, 9, 9)).astype(np.float32)
    y = rng.uniform(-1, 1, (3, 9, 9)).astype(np.float32)
    w = rng.uniform(-1, 1, (4, 3, 3, 3)).astype(np.float32)
    zero_b = np.zeros(4, np.float32)
    lhs = numerics.conv2d(2.0 * x + 3.0 * y, w, zero_b, 1, 1)
    rhs = 2.0 * numerics.conv2d(x, w, zero_b, 1, 1) + 3.0 * numerics.conv2d(y, w, zero_b, 1, 1)
    err = float(np.max(np.abs(lhs - rhs) - 1e-5 * np.abs(rhs)))
    assert err < 1e-5, f"linearity violated: residual {err} beyond 1e-5 + 1e-5|x|"
    ones = numerics.conv2d(np.ones((1, 3, 3), np.float32), np.ones((1, 1, 3, 3), np.float32), np.zeros(1, np.float32))
    assert abs(float(ones[0, 0, 0]) - 9.0) < 1e-6, f"3x3 ones conv gave {ones[0,0,0]}"
    return f"rel err {err:.2e}"


def check_bilinear_resize():
    const = numerics.bilinear_resize(np.full((2, 2), 0.7, np.float32), 8, 8)
    assert np.all(const == np.float32(0.7)), "constant map not preserved"
    rng = np.random.default_rng(3)
    m = rng.uniform(0, 1, (5, 7)).astype(np.float32)
    out = numerics.bilinear_resize(m, 13, 4)
    assert out.min() >= m.min() - 1e-6 and out.max() <= m.max() + 1e-6, "bounds violated"
    return "bounds + constant ok"


def check_normalize01():
    m = np.asarray([[-2.0, 0.0, 2.0]], np.float32)
    n1 = numerics.normalize01(m)
    assert np.allclose(n1, [[0.0, 0.5, 1.0]]), f"got {n1}"
    n2 = numerics.normalize01(n1)
    assert float(np.max(np.abs(n2 - n1))) < 1e-6, "not idempotent"
    assert np.all(numerics.normalize01(np.full((3, 3), 4.0, np.float32)) == 0.0), "constant must map to zeros"
    return "ok"


def check_gaussian_mask():
    for sigma in (0.7, 1.0, 2.5):
        m = gaussian_mask(9, 9, (4, 4), sigma)
        assert m[4, 4] == 1.0, "center must be exactly 1"
        expected = math.exp(-1.0 / (2.0 * sigma * sigma))
        assert abs(float(m[4, 5]) - expected) < 1e-6, f"axial value off at sigma={sigma}"
        for a, b in (((3, 4), (5, 4)), ((4, 3), (4, 5)), ((3, 3), (5, 5))):
            assert abs(float(m[a]) - float(m[b])) < 1e-6, "symmetry violated"
    return "center/axial/symmetry ok"


def check_sigma_worked_example():
    grad = np.zeros((8, 8), np.float32)
    grad[2, 5] = 64.0 * math.e
    sigma = compute_sigma(grad, 64, 64)
    assert abs(sigma - math.log(8.0)) < 1e-4, f"sigma {sigma} != ln 8"
    return f"sigma={sigma:.6f}"


def check_gradient_finite_difference(corrupt: bool = False):
    fx = make_fixture("one-square")
    detector = build_blob_detector(fx.config)
    dets, cache = detector.forward(fx.image)
    assert dets, "fixture produced no detections"
    det = dets[0]
    layer = head_input_layer(0)
    analytic = detector.backward_class_score(cache, det, layer)
    fd_detector = detector
    if corrupt:
        w, b = detector.weights["l0.cls"]
        fd_detector = detector.with_weights({"l0.cls": (w + np.float32(0.1), b.copy())})
    fd = finite_diff_gradient(fd_detector, fx.image, det, layer, eps=1e-3)
    rel = float(np.max(np.abs(analytic - fd) / (np.abs(analytic) + 1e-6)))
    assert rel < 1e-3, f"max rel err {rel}"
    return f"max rel err {rel:.2e}"


def check_one_pixel_support():
    rng = np.random.default_rng(7)
    for _ in range(10):
        stride = int(rng.choice([4, 8]))
        grid = int(rng.integers(4, 9))
        k = int(rng.integers(3, 17))
        c = int(rng.integers(1, 4))
        config = DetectorConfig(
            input_h=stride * grid, input_w=stride * grid, levels=(LevelSpec(stride, k),), num_classes=c
        )
        detector = build_blob_detector(config)
        image = np.full((config.input_h, config.input_w, 3), 0.5, np.float32)
        row, col = int(rng.integers(0, grid)), int(rng.integers(0, grid))
        color = int(rng.integers(0, c))
        from .fixtures import add_cell_square

        add_cell_square(image, config, row, col, color)
        dets, cache = detector.forward(image)
        assert dets, "no detection on calibrated square"
        det = dets[0]
        grad = detector.backward_class_score(cache, det, head_input_layer(0))
        for kk in range(grad.shape[0]):
            nz = np.nonzero(grad[kk])
            assert nz[0].size <= 1, f"slice {kk} has {nz[0].size} nonzero cells"
            if nz[0].size == 1:
                assert (int(nz[0][0]), int(nz[1][0])) == (det.source.row, det.source.col), "support off-cell"
    return "10 random configs ok"


def check_nms_postcondition():
    rng = np.random.default_rng(5)
    dets = []
    for i in range(40):
        x1, y1 = rng.uniform(0, 40, 2)
        bw, bh = rng.uniform(5, 20, 2)
        dets.append(
            Detection(
                box=(float(x1), float(y1), float(x1 + bw), float(y1 + bh)),
                p_obj=1.0,
                class_scores=(float(rng.uniform(0.2, 1.0)),),
                class_id=0,
                score=float(rng.uniform(0.2, 1.0)),
                source=None,
            )
        )
    kept = nms(dets, 0.5)
    for i in range(len(kept)):
        for j in range(i + 1, len(kept)):
            v = iou_xyxy(kept[i].box, kept[j].box)
            assert v < 0.5, f"surviving pair iou {v}"
    return f"{len(kept)} survivors, all pairwise iou < 0.5"


def check_capture_roundtrip():
    rng = np.random.default_rng(13)
    cap = Capture(
        image=rng.integers(0, 256, size=(16, 20, 3), dtype=np.uint8),
        detections=[],
        layers=[
            LayerRecord("layer0", rng.normal(size=(2, 4, 5)).astype(np.float32), rng.normal(size=(2, 4, 5)).astype(np.float32), 4.0)
        ],
        ground_truth=[((1.0, 2.0, 5.0, 6.0), 0)],
        model_tag="selftest",
    )
    with tempfile.TemporaryDirectory() as d:
        write_capture(cap, d)
        back = read_capture(d)
    assert np.array_equal(back.image, cap.image), "image changed"
    assert back.layers[0].features.tobytes() == cap.layers[0].features.tobytes(), "features changed"
    assert back.layers[0].gradients.tobytes() == cap.layers[0].gradients.tobytes(), "gradients changed"
    return "bit-exact"


def check_metric_fixtures():
    assert abs(metrics.iou((0, 0, 2, 2), (1, 0, 3, 2)) - 1.0 / 3.0) < 1e-9
    sal = np.zeros((4, 4), np.float32)
    sal[1, 1] = 0.8
    sal[3, 3] = 0.2
    assert abs(metrics.ebpg(sal, (0, 0, 2, 2)) - 0.8) < 1e-9
    assert metrics.pointing_game(sal, (0, 0, 2, 2))
    drop = metrics.average_drop(
        [metrics.EvalRecord(0.8, 0.6), metrics.EvalRecord(0.5, 0.5), metrics.EvalRecord(0.4, 0.0)]
    )
    assert abs(drop - 125.0 / 3.0) < 1e-9, f"average drop {drop}"
    return "iou/ebpg/pg/drop ok"


def run_selftest(corrupt: bool = False):
    return [
        _check("conv_linearity", check_conv_linearity),
        _check("bilinear_resize", check_bilinear_resize),
        _check("normalize01", check_normalize01),
        _check("gaussian_mask_analytics", check_gaussian_mask),
        _check("sigma_worked_example", check_sigma_worked_example),
        _check("gradient_finite_difference", lambda: check_gradient_finite_difference(corrupt)),
        _check("one_pixel_support", check_one_pixel_support),
        _check("nms_postcondition", check_nms_postcondition),
        _check("capture_roundtrip", check_capture_roundtrip),
        _check("metric_fixtures", check_metric_fixtures),
    ]
