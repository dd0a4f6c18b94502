"""Synthetic scenes the toy detector is calibrated for.

All squares are aligned to the detector's cell grid (position and size in
whole cells), so each square lights up exactly one feature-map cell and the
predicted box coincides with the square.
"""

from dataclasses import dataclass

import numpy as np

from .toy_detector import COLOR_VALUES, DetectorConfig, LevelSpec

BACKGROUND = 0.5


@dataclass(frozen=True)
class GroundTruth:
    box: tuple  # (x1, y1, x2, y2) pixels
    class_id: int


@dataclass(frozen=True)
class ToyFixture:
    name: str
    image: np.ndarray  # (H,W,3) float32 in [0,1]
    ground_truth: tuple
    config: DetectorConfig


def default_config(size: int = 64, channels: int = 12) -> DetectorConfig:
    return DetectorConfig(input_h=size, input_w=size, levels=(LevelSpec(8, channels),))


def background_image(h: int, w: int, texture: float = 0.0, seed: int = 0) -> np.ndarray:
    img = np.full((h, w, 3), BACKGROUND, np.float32)
    if texture > 0.0:
        rng = np.random.default_rng(seed)
        img += rng.uniform(-texture, texture, size=(h, w, 3)).astype(np.float32)
        np.clip(img, 0.0, 1.0, out=img)
    return img


def add_cell_square(image: np.ndarray, config: DetectorConfig, row: int, col: int, class_id: int) -> GroundTruth:
    """Paint a one-cell square of the class's calibration color; returns its box."""
    stride = config.levels[0].stride
    r0, c0 = row * stride, col * stride
    image[r0 : r0 + stride, c0 : c0 + stride] = np.asarray(COLOR_VALUES[class_id], np.float32)
    return GroundTruth(box=(float(c0), float(r0), float(c0 + stride), float(r0 + stride)), class_id=class_id)


def make_fixture(name: str, size: int = 64, seed: int = 0) -> ToyFixture:
    """Named scenes: blank, one-square, two-squares, mosaic, suite:<n>[:<size>]."""
    config = default_config(size)
    grid = size // config.levels[0].stride
    image = background_image(size, size)
    gts = []
    if name == "blank":
        pass
    elif name == "one-square":
        gts.append(add_cell_square(image, config, grid // 2 - 1, grid // 2, 0))
    elif name == "two-squares":
        gts.append(add_cell_square(image, config, 1, 1, 0))
        gts.append(add_cell_square(image, config, grid - 2, grid - 2, 1))
    elif name == "mosaic":
        # many objects: every third cell in both directions, cycling colors
        image = background_image(size, size, texture=0.02, seed=seed)
        c = 0
        for i in range(1, grid - 1, 3):
            for j in range(1, grid - 1, 3):
                gts.append(add_cell_square(image, config, i, j, c % 3))
                c += 1
    else:
        raise ValueError(f"unknown fixture {name!r}")
    return ToyFixture(name, image, tuple(gts), config)


@dataclass(frozen=True)
class TwoObjectSample:
    image: np.ndarray
    target: GroundTruth
    distractor: GroundTruth
    config: DetectorConfig


def two_object_suite(n: int, seed: int = 0, size: int = 64) -> list:
    """Seeded suite of two-square scenes with cell distance >= 3.

    Colors are drawn independently, so same-class and different-class pairs
    both occur.
    """
    rng = np.random.default_rng(seed)
    config = default_config(size)
    grid = size // config.levels[0].stride
    samples = []
    while len(samples) < n:
        ra, ca, rb, cb = (int(v) for v in rng.integers(0, grid, size=4))
        if (ra - rb) ** 2 + (ca - cb) ** 2 < 9:
            continue
        col_a, col_b = (int(v) for v in rng.integers(0, 3, size=2))
        image = background_image(size, size)
        target = add_cell_square(image, config, ra, ca, col_a)
        distractor = add_cell_square(image, config, rb, cb, col_b)
        samples.append(TwoObjectSample(image, target, distractor, config))
    return samples


def parse_fixture_name(name: str):
    """Split 'suite:<n>[:<size>]' names from plain fixture names."""
    if name.startswith("suite"):
        parts = name.split(":")
        n = int(parts[1]) if len(parts) > 1 else 50
        size = int(parts[2]) if len(parts) > 2 else 64
        return "suite", n, size
    return "fixture", name, None
