"""Dataset containers, single-pass streams, and the on-disk image formats.

Formats
-------
IDX (classic MNIST layout, big-endian):
    images  magic 0x00000803, u32 N, u32 rows, u32 cols, N*rows*cols bytes
    labels  magic 0x00000801, u32 N, N bytes
Raw tensor (little-endian):
    "UAPT", u8 version=1, u32 H, W, C, N, then N*H*W*C float32
Raw labels (little-endian):
    "UAPL", u8 version=1, u32 N, then N u16
"""

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import ConfigurationError, DatasetExhausted, ParseError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
UAPT_MAGIC = b"UAPT"
UAPL_MAGIC = b"UAPL"
FORMAT_VERSION = 1
MAX_ELEMENTS = 1 << 34


class Batch(NamedTuple):
    ids: np.ndarray
    images: np.ndarray
    labels: np.ndarray | None


@dataclass
class Dataset:
    """Images (N, H, W, C) in [0, 1], optional labels, and stable integer ids."""

    images: np.ndarray
    labels: np.ndarray | None = None
    ids: np.ndarray | None = None

    def __post_init__(self):
        self.images = np.asarray(self.images)
        if self.images.ndim != 4:
            raise ValueError(f"images must have shape (N, H, W, C), got {self.images.shape}")
        n = len(self.images)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (n,):
                raise ValueError("one label per image required")
        self.ids = np.arange(n, dtype=np.int64) if self.ids is None else np.asarray(self.ids, dtype=np.int64)
        if len(np.unique(self.ids)) != n:
            raise ValueError("image ids must be unique")
        self._index = None

    def __len__(self):
        return len(self.images)

    @property
    def image_shape(self):
        return self.images.shape[1:]

    def subset(self, positions):
        positions = np.asarray(positions, dtype=np.int64)
        labels = None if self.labels is None else self.labels[positions]
        return Dataset(self.images[positions], labels, self.ids[positions])

    def lookup(self, ids):
        """Images for the given ids, in the order given."""
        if self._index is None:
            self._index = {int(i): k for k, i in enumerate(self.ids)}
        return self.images[[self._index[int(i)] for i in ids]]

    def split_holdout(self, fraction=1 / 6, seed=0):
        """Seeded split into (query set, holdout set) with disjoint ids."""
        if not 0 < fraction < 1:
            raise ConfigurationError("holdout fraction must lie in (0, 1)")
        perm = np.random.default_rng(seed).permutation(len(self))
        k = int(round(fraction * len(self)))
        return self.subset(np.sort(perm[k:])), self.subset(np.sort(perm[:k]))

    def without_labels(self):
        return Dataset(self.images, None, self.ids)

    def stream(self, seed=None):
        return DatasetStream(self, seed)


class DatasetStream:
    """Hands out each image at most once, in a seed-fixed order."""

    def __init__(self, dataset, seed=None):
        self.dataset = dataset
        n = len(dataset)
        self.order = np.arange(n) if seed is None else np.random.default_rng(seed).permutation(n)
        self.cursor = 0

    @property
    def remaining(self):
        return len(self.order) - self.cursor

    @property
    def consumed(self):
        return self.cursor

    def take(self, n):
        if n > self.remaining:
            raise DatasetExhausted(f"requested {n} images, {self.remaining} left")
        pos = self.order[self.cursor : self.cursor + n]
        self.cursor += n
        ds = self.dataset
        labels = None if ds.labels is None else ds.labels[pos]
        return Batch(ds.ids[pos], ds.images[pos], labels)


# ---------------------------------------------------------------------------
# IDX
# ---------------------------------------------------------------------------


def _read_bytes(path):
    return Path(path).read_bytes()


def parse_idx(buf):
    """Decode an unsigned-byte IDX buffer into a uint8 array."""
    if len(buf) < 4:
        raise ParseError("file too short for an IDX magic number", len(buf) if buf else 0)
    zero, dtype, ndim = struct.unpack_from(">HBB", buf, 0)
    if zero != 0 or dtype != 0x08 or ndim not in (1, 3):
        raise ParseError(f"bad IDX magic 0x{struct.unpack_from('>I', buf, 0)[0]:08x}", 0)
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise ParseError("truncated IDX dimension header", len(buf))
    dims = struct.unpack_from(f">{ndim}I", buf, 4)
    count = 1
    for d in dims:
        count *= d
    if count > MAX_ELEMENTS:
        raise ParseError(f"IDX dimensions {dims} overflow the element limit", 4)
    if len(buf) < header + count:
        raise ParseError(f"truncated IDX payload: need {count} bytes", len(buf))
    if len(buf) > header + count:
        raise ParseError("trailing bytes after IDX payload", header + count)
    return np.frombuffer(buf, dtype=np.uint8, count=count, offset=header).reshape(dims)


def read_idx_images(path):
    raw = parse_idx(_read_bytes(path))
    if raw.ndim != 3:
        raise ParseError("expected an image archive (magic 0x00000803)", 0)
    return (raw.astype(np.float32) / np.float32(255.0))[..., None]


def read_idx_labels(path):
    raw = parse_idx(_read_bytes(path))
    if raw.ndim != 1:
        raise ParseError("expected a label archive (magic 0x00000801)", 0)
    return raw.astype(np.int64)


def to_bytes(images):
    """Quantise [0, 1] intensities to unsigned bytes (x * 255, rounded)."""
    return np.rint(np.clip(np.asarray(images, dtype=np.float64), 0, 1) * 255.0).astype(np.uint8)


def write_idx_images(path, images):
    images = np.asarray(images)
    if images.ndim == 4:
        if images.shape[-1] != 1:
            raise ValueError("IDX image archives hold single-channel images")
        images = images[..., 0]
    data = images if images.dtype == np.uint8 else to_bytes(images)
    n, rows, cols = data.shape
    Path(path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols) + data.tobytes())


def write_idx_labels(path, labels):
    labels = np.asarray(labels)
    if labels.min(initial=0) < 0 or labels.max(initial=0) > 255:
        raise ValueError("IDX labels must fit in one byte")
    Path(path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)) + labels.astype(np.uint8).tobytes())


def load_idx(images_path, labels_path=None):
    images = read_idx_images(images_path)
    labels = None if labels_path is None else read_idx_labels(labels_path)
    if labels is not None and len(labels) != len(images):
        raise ParseError(f"{len(labels)} labels for {len(images)} images", 4)
    return Dataset(images, labels)


# ---------------------------------------------------------------------------
# UAPT / UAPL
# ---------------------------------------------------------------------------


def parse_uapt(buf):
    if len(buf) < 5:
        raise ParseError("file too short for a UAPT header", len(buf))
    if buf[:4] != UAPT_MAGIC:
        raise ParseError(f"bad UAPT magic {bytes(buf[:4])!r}", 0)
    if buf[4] != FORMAT_VERSION:
        raise ParseError(f"unsupported UAPT version {buf[4]}", 4)
    if len(buf) < 21:
        raise ParseError("truncated UAPT dimension header", len(buf))
    h, w, c, n = struct.unpack_from("<4I", buf, 5)
    count = h * w * c * n
    if count > MAX_ELEMENTS:
        raise ParseError(f"UAPT dimensions {(h, w, c, n)} overflow the element limit", 5)
    end = 21 + 4 * count
    if len(buf) < end:
        raise ParseError(f"truncated UAPT payload: need {4 * count} bytes", len(buf))
    if len(buf) > end:
        raise ParseError("trailing bytes after UAPT payload", end)
    return np.frombuffer(buf, dtype="<f4", count=count, offset=21).reshape(n, h, w, c).astype(np.float32)


def read_uapt(path):
    return parse_uapt(_read_bytes(path))


def write_uapt(path, tensors):
    """Write (N, H, W, C) or a single (H, W, C) tensor as float32."""
    t = np.asarray(tensors)
    if t.ndim == 3:
        t = t[None]
    if t.ndim != 4:
        raise ValueError(f"expected (N, H, W, C) data, got shape {t.shape}")
    n, h, w, c = t.shape
    header = UAPT_MAGIC + struct.pack("<B4I", FORMAT_VERSION, h, w, c, n)
    Path(path).write_bytes(header + np.ascontiguousarray(t, dtype="<f4").tobytes())


def parse_uapl(buf):
    if len(buf) < 5:
        raise ParseError("file too short for a UAPL header", len(buf))
    if buf[:4] != UAPL_MAGIC:
        raise ParseError(f"bad UAPL magic {bytes(buf[:4])!r}", 0)
    if buf[4] != FORMAT_VERSION:
        raise ParseError(f"unsupported UAPL version {buf[4]}", 4)
    if len(buf) < 9:
        raise ParseError("truncated UAPL count", len(buf))
    (n,) = struct.unpack_from("<I", buf, 5)
    end = 9 + 2 * n
    if len(buf) < end:
        raise ParseError(f"truncated UAPL payload: need {2 * n} bytes", len(buf))
    if len(buf) > end:
        raise ParseError("trailing bytes after UAPL payload", end)
    return np.frombuffer(buf, dtype="<u2", count=n, offset=9).astype(np.int64)


def read_uapl(path):
    return parse_uapl(_read_bytes(path))


def write_uapl(path, labels):
    labels = np.asarray(labels)
    if labels.min(initial=0) < 0 or labels.max(initial=0) > 0xFFFF:
        raise ValueError("UAPL labels must fit in u16")
    header = UAPL_MAGIC + struct.pack("<BI", FORMAT_VERSION, len(labels))
    Path(path).write_bytes(header + labels.astype("<u2").tobytes())


def load_raw_f32(images_path, labels_path=None):
    images = read_uapt(images_path)
    if images.size and (images.min() < 0 or images.max() > 1):
        raise ParseError("image intensities outside [0, 1]", 21)
    labels = None if labels_path is None else read_labels(labels_path)
    if labels is not None and len(labels) != len(images):
        raise ParseError(f"{len(labels)} labels for {len(images)} images", 5)
    return Dataset(images, labels)


def read_labels(path):
    """UAPL or IDX labels, chosen by the magic bytes."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    return read_uapl(path) if head == UAPL_MAGIC else read_idx_labels(path)


def load_dataset(images_path, labels_path=None):
    """Load IDX or UAPT images by sniffing the magic bytes."""
    with open(images_path, "rb") as fh:
        head = fh.read(4)
    if head == UAPT_MAGIC:
        return load_raw_f32(images_path, labels_path)
    images = read_idx_images(images_path)
    labels = None
    if labels_path is not None:
        labels = read_labels(labels_path)
        if len(labels) != len(images):
            raise ParseError(f"{len(labels)} labels for {len(images)} images", 4)
    return Dataset(images, labels)
