"""Image and perturbation tensors, tiling, and the two box projections.

All arrays use one layout: (H, W, C) per image, row-major with the channel
axis fastest. Batches prepend an N axis.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ShapeError


@dataclass(frozen=True)
class ImageTensor:
    data: np.ndarray
    label: int | None = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ShapeError(f"image must have shape (H, W, C), got {data.shape}")
        if data.min() < 0.0 or data.max() > 1.0:
            raise ValueError("pixel intensities must lie in [0, 1]")
        object.__setattr__(self, "data", data)

    @property
    def shape(self):
        return self.data.shape


@dataclass(frozen=True)
class PerturbationTile:
    """The optimisation variable: an l x l x C block bounded by epsilon."""

    data: np.ndarray
    epsilon: float

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3 or data.shape[0] != data.shape[1] or data.shape[0] < 1:
            raise ShapeError(f"tile must have shape (l, l, C), got {data.shape}")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if np.abs(data).max(initial=0.0) > self.epsilon:
            raise ValueError("tile leaves the l-infinity ball")
        object.__setattr__(self, "data", data)

    @property
    def side(self):
        return self.data.shape[0]

    @property
    def channels(self):
        return self.data.shape[2]

    @classmethod
    def zeros(cls, side, channels, epsilon):
        return cls(np.zeros((side, side, channels)), epsilon)


@dataclass(frozen=True)
class UniversalPerturbation:
    """A full-resolution perturbation added to every input image."""

    data: np.ndarray
    epsilon: float

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3:
            raise ShapeError(f"perturbation must have shape (H, W, C), got {data.shape}")
        if np.abs(data).max(initial=0.0) > self.epsilon:
            raise ValueError("perturbation leaves the l-infinity ball")
        object.__setattr__(self, "data", data)

    @property
    def shape(self):
        return self.data.shape

    def linf(self):
        return float(np.abs(self.data).max(initial=0.0))


def expand_array(tile, height, width):
    """Repeat an (l, l', C) array to (height, width, C) by modular indexing.

    Partial repetitions at the right and bottom edges are cut off.
    """
    tile = np.asarray(tile, dtype=np.float64)
    if tile.ndim != 3:
        raise ShapeError(f"tile must be three-dimensional, got shape {tile.shape}")
    if height < tile.shape[0] or width < tile.shape[1]:
        raise ShapeError(
            f"cannot expand a {tile.shape[0]}x{tile.shape[1]} tile to {height}x{width}"
        )
    rows = np.arange(height) % tile.shape[0]
    cols = np.arange(width) % tile.shape[1]
    return tile[rows[:, None], cols[None, :], :]


def tile_expand(tile, height, width):
    return UniversalPerturbation(expand_array(tile.data, height, width), tile.epsilon)


def project_linf(delta, epsilon):
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    return np.clip(np.asarray(delta, dtype=np.float64), -epsilon, epsilon)


def clip_image(x):
    return np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)


def check_channels(images, tile):
    if images.shape[-1] != tile.shape[-1]:
        raise ShapeError(
            f"tile has {tile.shape[-1]} channels but images have {images.shape[-1]}"
        )
    if images.shape[1] < tile.shape[-3] or images.shape[2] < tile.shape[-2]:
        raise ShapeError(f"tile side {tile.shape[-3]} exceeds image size {images.shape[1:3]}")


def perturb_batch(images, tiles):
    """Clipped perturbed inputs for a batch, plus per-row l-infinity shift.

    ``tiles`` is either one (l, l, C) tile shared by the batch or an
    (N, l, l, C) stack with one tile per image.
    """
    images = np.asarray(images)
    tiles = np.asarray(tiles, dtype=np.float64)
    if images.ndim != 4:
        raise ShapeError(f"image batch must have shape (N, H, W, C), got {images.shape}")
    check_channels(images, tiles)
    if tiles.ndim == 3:
        tiles = tiles[None]
    return _kernels.perturb_clip(images, tiles)
