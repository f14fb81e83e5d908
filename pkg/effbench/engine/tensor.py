"""Dense NCHW tensors, their shapes, and the seeded generator used for every random draw.

Random streams come from numpy's PCG64 bit generator (O'Neill's permuted
congruential generator, 128-bit state, 64-bit output), which produces the
same stream for the same seed on every platform numpy supports.
"""
import math
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np

from effbench.error_handling import ShapeError, TensorError

INDEX_LIMIT = np.iinfo(np.intp).max


class Shape4(NamedTuple):
    batch: int
    channels: int
    height: int
    width: int

    @property
    def element_count(self) -> int:
        return self.batch * self.channels * self.height * self.width

    @property
    def floats_out(self) -> int:
        """values emitted per sample"""
        return self.channels * self.height * self.width

    def with_batch(self, batch: int) -> "Shape4":
        return self._replace(batch=batch)

    def validate(self) -> "Shape4":
        if any(int(extent) != extent or extent < 1 for extent in self):
            raise TensorError(f"Invalid shape {tuple(self)}: every extent must be >= 1")
        if self.element_count > INDEX_LIMIT:
            raise TensorError(
                f"Shape {tuple(self)} holds {self.element_count} elements, "
                f"more than the index limit {INDEX_LIMIT}"
            )
        return self

    def __str__(self):
        return "x".join(str(extent) for extent in self)

    @classmethod
    def of(cls, value: Union["Shape4", Sequence[int]]) -> "Shape4":
        if len(value) != 4:
            raise TensorError(f"Expected 4 extents, got {tuple(value)}")
        return cls(*(int(extent) for extent in value)).validate()


class Rng:
    """Seeded PCG64 stream."""

    __slots__ = ["seed", "generator"]

    def __init__(self, seed: Union[int, Sequence[int]]):
        # a sequence such as (seed, epoch) derives an independent stream
        self.seed = tuple(int(s) for s in seed) if isinstance(seed, (tuple, list)) else int(seed)
        self.generator = np.random.Generator(np.random.PCG64(self.seed))

    def derive(self, *keys: int) -> "Rng":
        base = self.seed if isinstance(self.seed, tuple) else (self.seed,)
        return Rng(base + tuple(keys))

    def uniform(self, low: float, high: float, size) -> np.ndarray:
        return self.generator.uniform(low, high, size)

    def normal(self, size, scale: float = 1.0) -> np.ndarray:
        return self.generator.normal(0.0, scale, size)

    def random(self, size) -> np.ndarray:
        return self.generator.random(size)

    def permutation(self, n) -> np.ndarray:
        return self.generator.permutation(n)

    def __repr__(self):
        return f"<Rng seed={self.seed}>"


class Tensor:
    """Immutable 4-D float64 array in row-major [batch, channels, height, width] order."""

    __slots__ = ["shape", "_data"]

    def __init__(self, data: np.ndarray):
        array = np.array(data, dtype=np.float64, order="C", copy=True)
        if array.ndim != 4:
            raise TensorError(f"Tensor needs 4 dimensions, got shape {array.shape}")
        self.shape = Shape4.of(array.shape)
        array.setflags(write=False)
        self._data = array

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def flat(self) -> np.ndarray:
        return self._data.reshape(-1)

    @property
    def floats_out(self) -> int:
        return self.shape.floats_out

    def numpy(self) -> np.ndarray:
        """writable copy"""
        return self._data.copy()

    def is_finite(self) -> bool:
        return bool(np.isfinite(self._data).all())

    def __repr__(self):
        return f"<Tensor shape={self.shape}>"


class Zeros:
    def sample(self, shape: Shape4) -> np.ndarray:
        return np.zeros(shape)


class Constant:
    __slots__ = ["value"]

    def __init__(self, value: float):
        self.value = float(value)

    def sample(self, shape: Shape4) -> np.ndarray:
        return np.full(shape, self.value)


class HeUniform:
    """uniform(-sqrt(6 / fan_in), +sqrt(6 / fan_in))"""

    __slots__ = ["rng", "fan_in"]

    def __init__(self, rng: Rng, fan_in: int):
        if fan_in < 1:
            raise TensorError(f"fan_in must be positive, got {fan_in}")
        self.rng = rng
        self.fan_in = fan_in

    @property
    def bound(self) -> float:
        return math.sqrt(6.0 / self.fan_in)

    def sample(self, shape) -> np.ndarray:
        return self.rng.uniform(-self.bound, self.bound, tuple(shape))


def tensor_create(shape, fill: Optional[object] = None) -> Tensor:
    shape = Shape4.of(shape)
    fill = fill or Zeros()
    return Tensor(fill.sample(shape))


def reshape(t: Tensor, new) -> Tensor:
    new = Shape4.of(new)
    if new.element_count != t.shape.element_count:
        raise ShapeError(
            f"Cannot reshape {t.shape} ({t.shape.element_count} elements) "
            f"to {new} ({new.element_count} elements)"
        )
    return Tensor(t.data.reshape(new))
