"""Container formats for image datasets and parameter arrays.

idx_pair     ``{split}-images-idx3-ubyte`` (or ``idx4`` for N x C x H x W) and
             ``{split}-labels-idx1-ubyte``; big-endian IDX headers, unsigned
             byte pixels scaled to [0, 1].
csv_labeled  ``{split}.csv``, header-free rows ``label,p0,p1,...`` with pixels
             0-255 in row-major C x H x W order.
raw_nchw     ``{split}-images.nchw``: 32-byte header (magic, four little-endian
             u32 extents, u32 dtype code, 8 reserved bytes) then the payload;
             ``{split}-labels.u32``: little-endian u32 labels.
"""
import math
import struct
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from effbench.consts import (
    IDX_IMAGES_4D_MAGIC,
    IDX_IMAGES_MAGIC,
    IDX_LABELS_MAGIC,
    RAW_DTYPE_CODES,
    RAW_HEADER_SIZE,
    RAW_MAGIC,
)
from effbench.data.dataset import Dataset
from effbench.error_handling import (
    BadMagicError,
    CompatibilityError,
    DataFormatError,
    LabelRangeError,
    TruncatedFileError,
)

FORMATS = ("idx_pair", "csv_labeled", "raw_nchw")
RAW_HEADER = struct.Struct("<4s4II8x")
PIXEL_SCALE = 255.0


def _read_bytes(path: Path) -> bytes:
    if not path.is_file():
        raise DataFormatError(f"{path} does not exist")
    return path.read_bytes()


def _check_payload(path: Path, data: bytes, header_size: int, expected: int):
    actual = len(data) - header_size
    if actual < expected:
        raise TruncatedFileError(
            f"{path.name}: expected {expected} payload bytes, found {actual}",
            offset=len(data),
        )
    if actual > expected:
        logger.warning(f"{path.name}: ignoring {actual - expected} trailing bytes")


def _check_range(path, labels, class_count, offsets):
    """``offsets[i]`` is the byte offset of label ``i`` in ``path``"""
    bad = np.flatnonzero(labels >= class_count)
    if bad.size:
        index = int(bad[0])
        raise LabelRangeError(
            f"{path.name}: label {labels[index]} of sample {index} outside [0, {class_count})",
            offset=int(offsets[index]),
        )


# -- idx


def read_idx_images(path: Path) -> np.ndarray:
    data = _read_bytes(path)
    if len(data) < 4:
        raise TruncatedFileError(f"{path.name}: missing IDX magic number", offset=len(data))
    (magic,) = struct.unpack_from(">I", data, 0)
    if magic not in (IDX_IMAGES_MAGIC, IDX_IMAGES_4D_MAGIC):
        raise BadMagicError(f"{path.name}: bad IDX image magic number {magic:#010x}", offset=0)
    rank = magic & 0xFF
    header_size = 4 + 4 * rank
    if len(data) < header_size:
        raise TruncatedFileError(f"{path.name}: header needs {header_size} bytes", offset=len(data))
    dims = struct.unpack_from(f">{rank}I", data, 4)
    _check_payload(path, data, header_size, math.prod(dims))
    pixels = np.frombuffer(data, dtype=np.uint8, count=math.prod(dims), offset=header_size)
    images = pixels.reshape(dims).astype(np.float64) / PIXEL_SCALE
    return images[:, None] if rank == 3 else images


def read_idx_labels(path: Path) -> np.ndarray:
    data = _read_bytes(path)
    if len(data) < 8:
        raise TruncatedFileError(f"{path.name}: header needs 8 bytes", offset=len(data))
    magic, count = struct.unpack_from(">II", data, 0)
    if magic != IDX_LABELS_MAGIC:
        raise BadMagicError(f"{path.name}: bad IDX label magic number {magic:#010x}", offset=0)
    _check_payload(path, data, 8, count)
    return np.frombuffer(data, dtype=np.uint8, count=count, offset=8).astype(np.int64)


def write_idx_images(path: Path, images: np.ndarray):
    pixels = np.clip(np.rint(images * PIXEL_SCALE), 0, 255).astype(np.uint8)
    if pixels.shape[1] == 1:
        pixels = pixels[:, 0]
    magic = IDX_IMAGES_MAGIC if pixels.ndim == 3 else IDX_IMAGES_4D_MAGIC
    header = struct.pack(f">I{pixels.ndim}I", magic, *pixels.shape)
    path.write_bytes(header + pixels.tobytes())


def write_idx_labels(path: Path, labels: np.ndarray):
    labels = np.asarray(labels)
    path.write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)) + labels.astype(np.uint8).tobytes())


# -- csv


def infer_sample_shape(values: int) -> Tuple[int, int, int]:
    """square grey or RGB images"""
    for channels in (1, 3):
        side = math.isqrt(values // channels)
        if values % channels == 0 and side * side * channels == values:
            return channels, side, side
    raise DataFormatError(f"Cannot infer a square 1- or 3-channel image from {values} pixels")


def read_csv(path: Path, sample_shape: Optional[Sequence[int]] = None) -> Tuple[np.ndarray, np.ndarray]:
    images, labels, _ = _parse_csv(path, sample_shape)
    return images, labels


def _parse_csv(path: Path, sample_shape: Optional[Sequence[int]]):
    """images, labels and the byte offset of each row"""
    data = _read_bytes(path)
    labels, rows, starts = [], [], []
    offset = 0
    for number, line in enumerate(data.split(b"\n"), start=1):
        start, offset = offset, offset + len(line) + 1
        if not line.strip():
            continue
        try:
            values = [float(v) for v in line.decode().strip().split(",")]
        except ValueError:
            raise DataFormatError(f"{path.name}: row {number} is not numeric", offset=start)
        if rows and len(values) - 1 != len(rows[0]):
            raise DataFormatError(
                f"{path.name}: row {number} has {len(values) - 1} pixels, expected {len(rows[0])}",
                offset=start,
            )
        if values[0] < 0 or values[0] != int(values[0]):
            raise LabelRangeError(f"{path.name}: row {number} has label {values[0]}", offset=start)
        labels.append(int(values[0]))
        rows.append(values[1:])
        starts.append(start)
    if not rows:
        raise TruncatedFileError(f"{path.name}: no rows", offset=0)
    if sample_shape is None:
        shape = infer_sample_shape(len(rows[0]))
    elif math.prod(sample_shape) == len(rows[0]):
        shape = tuple(sample_shape)
    else:
        raise CompatibilityError(
            f"{path.name}: {len(rows[0])} pixels per row do not fill {'x'.join(map(str, sample_shape))}"
        )
    images = np.asarray(rows, dtype=np.float64).reshape((len(rows),) + shape) / PIXEL_SCALE
    return images, np.asarray(labels, dtype=np.int64), np.asarray(starts, dtype=np.int64)


def write_csv(path: Path, images: np.ndarray, labels: np.ndarray):
    pixels = np.clip(np.rint(images * PIXEL_SCALE), 0, 255).astype(np.int64).reshape(len(images), -1)
    lines = [",".join(map(str, [int(label), *row])) for label, row in zip(labels, pixels)]
    path.write_text("\n".join(lines) + "\n")


# -- raw nchw


def write_array(path: Path, array: np.ndarray, dtype_code: Optional[int] = None):
    """Write up to four dimensions; fewer are padded with leading ones.

    Without ``dtype_code`` float32 is used when it holds every value exactly.
    """
    array = np.asarray(array, dtype=np.float64)
    if array.ndim > 4:
        raise DataFormatError(f"raw container holds at most 4 dimensions, got {array.ndim}")
    if dtype_code is None:
        dtype_code = 1 if np.array_equal(array.astype("<f4").astype(np.float64), array) else 2
    if dtype_code not in RAW_DTYPE_CODES:
        raise DataFormatError(f"Unknown dtype code {dtype_code}")
    dims = (1,) * (4 - array.ndim) + array.shape
    header = RAW_HEADER.pack(RAW_MAGIC, *dims, dtype_code)
    path.write_bytes(header + array.astype(RAW_DTYPE_CODES[dtype_code]).tobytes())


def read_array(path: Path) -> np.ndarray:
    data = _read_bytes(path)
    if len(data) < RAW_HEADER_SIZE:
        raise TruncatedFileError(f"{path.name}: header needs {RAW_HEADER_SIZE} bytes", offset=len(data))
    magic, *dims, dtype_code = RAW_HEADER.unpack_from(data, 0)
    if magic != RAW_MAGIC:
        raise BadMagicError(f"{path.name}: bad magic {magic!r}, expected {RAW_MAGIC!r}", offset=0)
    if dtype_code not in RAW_DTYPE_CODES:
        raise DataFormatError(f"{path.name}: unknown dtype code {dtype_code}", offset=20)
    dtype = np.dtype(RAW_DTYPE_CODES[dtype_code])
    count = math.prod(dims)
    _check_payload(path, data, RAW_HEADER_SIZE, count * dtype.itemsize)
    payload = np.frombuffer(data, dtype=dtype, count=count, offset=RAW_HEADER_SIZE)
    return payload.astype(np.float64).reshape(dims)


def read_u32_labels(path: Path) -> np.ndarray:
    data = _read_bytes(path)
    if len(data) % 4:
        raise TruncatedFileError(f"{path.name}: {len(data)} bytes is not a whole number of labels", offset=len(data))
    return np.frombuffer(data, dtype="<u4").astype(np.int64)


def write_u32_labels(path: Path, labels: np.ndarray):
    path.write_bytes(np.asarray(labels, dtype="<u4").tobytes())


# -- datasets


def dataset_files(path: Path, format: str, split: str, channels: int = 1) -> Tuple[Path, ...]:
    path = Path(path)
    if format == "idx_pair":
        rank = 3 if channels == 1 else 4
        images = path / f"{split}-images-idx{rank}-ubyte"
        if not images.exists() and (path / f"{split}-images-idx4-ubyte").exists():
            images = path / f"{split}-images-idx4-ubyte"
        return images, path / f"{split}-labels-idx1-ubyte"
    if format == "csv_labeled":
        return (path / f"{split}.csv",)
    if format == "raw_nchw":
        return path / f"{split}-images.nchw", path / f"{split}-labels.u32"
    raise DataFormatError(f"Unknown dataset format {format!r}, expected one of {FORMATS}")


def load_dataset(
    path,
    format: str,
    split: str = "train",
    class_count: Optional[int] = None,
    sample_shape: Optional[Sequence[int]] = None,
) -> Dataset:
    files = dataset_files(path, format, split)
    if format == "idx_pair":
        images, labels = read_idx_images(files[0]), read_idx_labels(files[1])
        offsets = 8 + np.arange(len(labels))
    elif format == "csv_labeled":
        images, labels, offsets = _parse_csv(files[0], sample_shape)
    else:
        images, labels = read_array(files[0]), read_u32_labels(files[1])
        offsets = 4 * np.arange(len(labels))
    if len(labels) != len(images):
        raise DataFormatError(f"{len(labels)} labels for {len(images)} images in {path}")
    if sample_shape is not None and tuple(images.shape[1:]) != tuple(sample_shape):
        raise CompatibilityError(
            f"Images in {path} are {'x'.join(map(str, images.shape[1:]))}, "
            f"expected {'x'.join(map(str, sample_shape))}"
        )
    if class_count is None:
        class_count = int(labels.max()) + 1 if labels.size else 1
    else:
        _check_range(files[-1], labels, class_count, offsets)
    logger.debug(f"loaded {len(images)} {split} samples from {path} ({format})")
    return Dataset(images, labels, class_count, split)


def save_dataset(dataset: Dataset, path, format: str):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    images, labels = dataset.images.data, dataset.labels
    files = dataset_files(path, format, dataset.split, dataset.images.shape.channels)
    if format == "idx_pair":
        write_idx_images(files[0], images)
        write_idx_labels(files[1], labels)
    elif format == "csv_labeled":
        write_csv(files[0], images, labels)
    else:
        write_array(files[0], images)
        write_u32_labels(files[1], labels)
    return files
