from typing import Sequence

import numpy as np
from loguru import logger

from effbench.data.dataset import Dataset
from effbench.engine.tensor import Rng
from effbench.error_handling import DataFormatError

BLOBS_PER_CLASS = 2

_TEMPLATE_STREAM = 0
_SPLIT_STREAMS = {"train": 1, "test": 2}


def class_templates(seed: int, class_count: int, shape: Sequence[int]) -> np.ndarray:
    """(classes, C, H, W) sums of Gaussian blobs scaled to peak at 1"""
    channels, height, width = shape
    rng = Rng((seed, _TEMPLATE_STREAM))
    rows = np.arange(height)[:, None]
    cols = np.arange(width)[None, :]
    sigma = max(height, width) / 4.0
    templates = np.zeros((class_count, channels, height, width))
    for label in range(class_count):
        centers = rng.uniform(0.0, 1.0, (BLOBS_PER_CLASS, 2)) * (height - 1, width - 1)
        amplitudes = rng.uniform(0.5, 1.0, (BLOBS_PER_CLASS, channels))
        for (cy, cx), amplitude in zip(centers, amplitudes):
            blob = np.exp(-((rows - cy) ** 2 + (cols - cx) ** 2) / (2 * sigma ** 2))
            templates[label] += amplitude[:, None, None] * blob
        templates[label] /= templates[label].max()
    return templates


def synthesize_dataset(
    seed: int,
    n: int,
    class_count: int,
    shape: Sequence[int],
    difficulty: float,
    split: str = "train",
) -> Dataset:
    """Balanced class-template images plus Gaussian noise of std ``difficulty``.

    Both splits of one seed share their templates and differ in noise.
    """
    if n < class_count:
        raise DataFormatError(f"Need at least one sample per class: n={n} < {class_count} classes")
    if difficulty < 0:
        raise DataFormatError(f"difficulty must be >= 0, got {difficulty}")
    if split not in _SPLIT_STREAMS:
        raise DataFormatError(f"Unknown split {split!r}")
    templates = class_templates(seed, class_count, shape)
    rng = Rng((seed, _SPLIT_STREAMS[split]))
    labels = rng.permutation(np.arange(n) % class_count)
    images = templates[labels] + difficulty * rng.normal((n,) + tuple(shape))
    logger.debug(
        f"synthesized {n} {split} samples, {class_count} classes, "
        f"shape {'x'.join(map(str, shape))}, difficulty {difficulty}"
    )
    return Dataset(images, labels, class_count, split)
