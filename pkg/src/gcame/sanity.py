"""Weight-randomization sanity checks with a Pearson-correlation readout.

Cascading plans reinitialize every layer from the target toward the detector
output (regression-branch layers excluded); independent plans touch only the
target layer. The source detector is never mutated. Saliency is recomputed
with the gradient pinned at the original detection's cell, so the check
still works when the randomized detector no longer finds the object.
"""

from dataclasses import dataclass

import numpy as np

from .saliency import SaliencyResult, explain_detection
from .toy_detector import Detection, Detector, downstream_layers, is_regression_layer, parse_layer_id


@dataclass(frozen=True)
class RandomizationPlan:
    mode: str  # cascading | independent
    target_layer: str
    seed: int
    std: float = 0.01

    def validate(self):
        if self.mode not in ("cascading", "independent"):
            raise ValueError(f"unknown randomization mode {self.mode!r}")
        if self.std < 0:
            raise ValueError("std must be non-negative")


def plan_layers(detector: Detector, plan: RandomizationPlan):
    plan.validate()
    parse_layer_id(detector.config, plan.target_layer)  # rejects unknown layers
    if plan.mode == "independent":
        return [plan.target_layer]
    chain = downstream_layers(detector.config, plan.target_layer)
    return [lid for lid in chain if lid == plan.target_layer or not is_regression_layer(lid)]


def randomize(detector: Detector, plan: RandomizationPlan) -> Detector:
    """Copy of the detector with the plan's layers redrawn from N(0, std)."""
    rng = np.random.default_rng(plan.seed)
    replacements = {}
    for lid in sorted(plan_layers(detector, plan)):
        w, b = detector.weights[lid]
        replacements[lid] = (
            rng.normal(0.0, plan.std, size=w.shape).astype(np.float32),
            rng.normal(0.0, plan.std, size=b.shape).astype(np.float32),
        )
    return detector.with_weights(replacements)


def pearson(a, b) -> float:
    """Pearson correlation over all pixels; 0.0 when either map is constant."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"map sizes differ: {a.shape} vs {b.shape}")
    if float(a.std()) == 0.0 or float(b.std()) == 0.0:
        return 0.0
    if np.array_equal(a, b):
        return 1.0  # exact by definition; np.corrcoef loses an ulp to sqrt
    return float(np.clip(np.corrcoef(a, b)[0, 1], -1.0, 1.0))


@dataclass
class SanityEntry:
    plan: RandomizationPlan
    saliency: SaliencyResult
    correlation: float


@dataclass
class SanityReport:
    original: SaliencyResult
    entries: list


def sanity_report(detector: Detector, image, detection: Detection, plans) -> SanityReport:
    """Explain the detection under each randomization plan and correlate.

    The explanation reruns on the randomized detector with the same target
    cell and class as the original detection; objectness comes from the
    randomized forward pass.
    """
    _, cache = detector.forward(image)
    original = explain_detection(detector, cache, detection)
    entries = []
    for plan in plans:
        rd = randomize(detector, plan)
        _, rcache = rd.forward(image)
        rsal = explain_detection(rd, rcache, detection)
        entries.append(SanityEntry(plan, rsal, pearson(original.values, rsal.values)))
    return SanityReport(original, entries)
