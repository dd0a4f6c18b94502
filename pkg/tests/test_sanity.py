import numpy as np
import pytest

from gcame.fixtures import make_fixture
from gcame.sanity import RandomizationPlan, pearson, plan_layers, randomize, sanity_report
from gcame.saliency import explain_detection
from gcame.toy_detector import build_blob_detector, layer_ids


@pytest.fixture(scope="module")
def setup():
    fx = make_fixture("one-square")
    detector = build_blob_detector(fx.config)
    dets, cache = detector.forward(fx.image)
    return fx, detector, dets[0], cache


def test_randomize_deterministic(setup):
    _, detector, _, _ = setup
    plan = RandomizationPlan("cascading", "l0.stem", seed=42)
    r1 = randomize(detector, plan)
    r2 = randomize(detector, plan)
    for lid in layer_ids(detector.config):
        assert r1.weights[lid][0].tobytes() == r2.weights[lid][0].tobytes()
        assert r1.weights[lid][1].tobytes() == r2.weights[lid][1].tobytes()


def test_randomize_does_not_mutate_source(setup):
    _, detector, _, _ = setup
    before = {lid: detector.weights[lid][0].tobytes() for lid in layer_ids(detector.config)}
    randomize(detector, RandomizationPlan("cascading", "l0.stem", seed=0))
    after = {lid: detector.weights[lid][0].tobytes() for lid in layer_ids(detector.config)}
    assert before == after


def test_independent_touches_only_target(setup):
    _, detector, _, _ = setup
    plan = RandomizationPlan("independent", "l0.neck", seed=3)
    rd = randomize(detector, plan)
    for lid in layer_ids(detector.config):
        same = rd.weights[lid][0].tobytes() == detector.weights[lid][0].tobytes()
        assert same == (lid != "l0.neck")


def test_cascading_excludes_regression_branch(setup):
    _, detector, _, _ = setup
    layers = plan_layers(detector, RandomizationPlan("cascading", "l0.stem", seed=0))
    assert "l0.reg" not in layers
    assert set(layers) == {"l0.stem", "l0.neck", "l0.cls", "l0.obj"}
    # targeting the regression branch itself still randomizes it
    assert plan_layers(detector, RandomizationPlan("cascading", "l0.reg", seed=0)) == ["l0.reg"]


def test_cascading_at_top_equals_independent(setup):
    _, detector, _, _ = setup
    c = randomize(detector, RandomizationPlan("cascading", "l0.cls", seed=9))
    i = randomize(detector, RandomizationPlan("independent", "l0.cls", seed=9))
    for lid in layer_ids(detector.config):
        assert c.weights[lid][0].tobytes() == i.weights[lid][0].tobytes()


def test_plan_rejects_unknown_layer_and_mode(setup):
    _, detector, _, _ = setup
    with pytest.raises(ValueError):
        plan_layers(detector, RandomizationPlan("cascading", "l7.stem", seed=0))
    with pytest.raises(ValueError, match="mode"):
        plan_layers(detector, RandomizationPlan("shuffled", "l0.stem", seed=0))


def test_pearson_self_correlation_is_exactly_one(setup):
    fx, detector, det, cache = setup
    sal = explain_detection(detector, cache, det)
    assert pearson(sal.values, sal.values) == 1.0
    assert pearson(np.zeros((4, 4)), np.ones((4, 4))) == 0.0  # constant maps define 0


def test_restored_weights_give_correlation_one(setup):
    fx, detector, det, cache = setup
    original = explain_detection(detector, cache, det)
    plan = RandomizationPlan("independent", "l0.neck", seed=5)
    rd = randomize(detector, plan)
    restored = rd.with_weights({"l0.neck": detector.weights["l0.neck"]})
    _, rcache = restored.forward(fx.image)
    again = explain_detection(restored, rcache, det)
    assert pearson(original.values, again.values) == 1.0


def test_sanity_report_empty_plan_list(setup):
    fx, detector, det, _ = setup
    report = sanity_report(detector, fx.image, det, [])
    assert report.entries == []
    assert not report.original.empty


def test_sanity_report_pinned_cell_survives_vanishing_object(setup):
    fx, detector, det, _ = setup
    plan = RandomizationPlan("cascading", "l0.stem", seed=1)
    rd = randomize(detector, plan)
    rdets, _ = rd.forward(fx.image)
    assert rdets == []  # object vanished under randomization
    report = sanity_report(detector, fx.image, det, [plan])
    entry = report.entries[0]
    assert entry.saliency.values.shape == report.original.values.shape
    assert -1.0 <= entry.correlation <= 1.0


def test_cascading_randomization_decorrelates(setup):
    fx, detector, det, _ = setup
    plans = [RandomizationPlan("cascading", "l0.stem", seed=s) for s in range(5)]
    report = sanity_report(detector, fx.image, det, plans)
    corrs = [e.correlation for e in report.entries]
    assert float(np.mean(corrs)) < 0.5
