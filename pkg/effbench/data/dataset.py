from dataclasses import dataclass
from typing import Iterator, Optional, Tuple

import numpy as np

from effbench.consts import NORMALIZE_STD_FLOOR
from effbench.engine.tensor import Rng, Tensor
from effbench.error_handling import DataFormatError, LabelRangeError

SPLITS = ("train", "test")


class Dataset:
    __slots__ = ["images", "labels", "class_count", "split"]

    def __init__(self, images, labels, class_count: int, split: str = "train"):
        self.images = images if isinstance(images, Tensor) else Tensor(images)
        self.labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        self.class_count = int(class_count)
        self.split = split
        self.validate()

    def validate(self):
        if self.split not in SPLITS:
            raise DataFormatError(f"Unknown split {self.split!r}, expected one of {SPLITS}")
        if len(self.labels) != self.images.shape.batch:
            raise DataFormatError(
                f"{len(self.labels)} labels for {self.images.shape.batch} images"
            )
        if self.class_count < 1:
            raise DataFormatError(f"class_count must be positive, got {self.class_count}")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            bad = int(np.flatnonzero((self.labels < 0) | (self.labels >= self.class_count))[0])
            raise LabelRangeError(
                f"Label {self.labels[bad]} at sample {bad} outside [0, {self.class_count})"
            )
        if not self.images.is_finite():
            raise DataFormatError("Images contain NaN or infinite values")

    @property
    def sample_shape(self) -> Tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def __len__(self):
        return self.images.shape.batch

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices)
        return Dataset(self.images.data[indices], self.labels[indices], self.class_count, self.split)

    def with_images(self, images) -> "Dataset":
        return Dataset(images, self.labels, self.class_count, self.split)

    def class_histogram(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.class_count)

    def __repr__(self):
        return (
            f"<Dataset split={self.split} n={len(self)} "
            f"shape={'x'.join(map(str, self.sample_shape))} classes={self.class_count}>"
        )


class BatchIterator:
    """Seeded pass over a dataset; the final partial batch is kept."""

    def __init__(self, dataset: Dataset, batch_size: int, seed=None):
        if batch_size < 1:
            raise DataFormatError(f"batch_size must be positive, got {batch_size}")
        self.dataset = dataset
        self.batch_size = batch_size
        self.seed = seed
        self.cursor = 0
        self.order = (
            np.arange(len(dataset)) if seed is None else Rng(seed).permutation(len(dataset))
        )

    def __iter__(self) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
        return self

    def __next__(self) -> Tuple[np.ndarray, np.ndarray]:
        if self.cursor >= len(self.order):
            raise StopIteration
        indices = self.order[self.cursor : self.cursor + self.batch_size]
        self.cursor += len(indices)
        return self.dataset.images.data[indices], self.dataset.labels[indices]

    def __len__(self):
        return -(-len(self.dataset) // self.batch_size)


@dataclass
class Stats:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def of(cls, dataset: Dataset) -> "Stats":
        data = dataset.images.data
        std = np.maximum(data.std(axis=(0, 2, 3)), NORMALIZE_STD_FLOOR)
        return cls(data.mean(axis=(0, 2, 3)), std)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean[None, :, None, None]) / self.std[None, :, None, None]

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        return x * self.std[None, :, None, None] + self.mean[None, :, None, None]

    def to_dict(self) -> dict:
        return dict(mean=self.mean.tolist(), std=self.std.tolist())

    @classmethod
    def from_dict(cls, data: dict) -> "Stats":
        return cls(np.asarray(data["mean"], dtype=np.float64), np.asarray(data["std"], dtype=np.float64))


def normalize(dataset: Dataset, stats: Optional[Stats] = None) -> Tuple[Dataset, Stats]:
    """Standardize per channel; without ``stats`` they are computed from ``dataset``,
    which must then be a training split."""
    if stats is None:
        if dataset.split != "train":
            raise DataFormatError("Normalization statistics must come from the train split")
        stats = Stats.of(dataset)
    if len(stats.mean) != dataset.images.shape.channels:
        raise DataFormatError(
            f"Stats cover {len(stats.mean)} channels, dataset has {dataset.images.shape.channels}"
        )
    return dataset.with_images(stats.apply(dataset.images.data)), stats
