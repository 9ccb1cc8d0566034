"""Two-sided finite-difference gradient estimates along fixed direction sets.

Directions live in tile space (l, l, C) and are flattened in the canonical
row-major, channel-minor order. Each estimate perturbs the current tile by
``+mu z`` and ``-mu z``, projects back into the epsilon ball, tiles the
result over a fresh batch of images and spends exactly two oracle queries
per image.
"""

from dataclasses import dataclass
from enum import Enum
from functools import cached_property

import numpy as np

from .errors import DomainError
from .perturbation import perturb_batch, project_linf


class BasisKind(str, Enum):
    FFT = "fft"
    CANONICAL = "canonical"
    RANDOM = "random"


def fft_frequencies(side):
    """Representative 2-d frequency pairs in low-to-high radial order.

    Signed frequencies in (-side/2, side/2] are sorted by ``u*u + v*v`` with
    lexicographic tie-breaks; a pair is kept only if neither it nor its
    conjugate ``(-u, -v) mod side`` has been kept already. The second field
    is True when the sine component vanishes (DC and Nyquist pairs).
    """
    lo, hi = -((side - 1) // 2), side // 2
    signed = [(u, v) for u in range(lo, hi + 1) for v in range(lo, hi + 1)]
    signed.sort(key=lambda p: (p[0] ** 2 + p[1] ** 2, p[0], p[1]))
    seen = set()
    pairs = []
    for u, v in signed:
        key = (u % side, v % side)
        if key in seen:
            continue
        conj = ((-u) % side, (-v) % side)
        seen.add(key)
        seen.add(conj)
        pairs.append(((u, v), key == conj))
    return pairs


def _channel_patterns(channels):
    """Orthonormal channel mixes; the first replicates a pattern across channels."""
    first = np.ones(channels) / np.sqrt(channels)
    if channels == 1:
        return first[None]
    # complete the constant vector to an orthonormal basis of R^C
    q, _ = np.linalg.qr(np.column_stack([first, np.eye(channels)[:, : channels - 1]]))
    q[:, 0] = first
    return q.T


def fft_basis(side, channels):
    """All ``side*side*channels`` real Fourier vectors, lowest frequency first.

    Spatial patterns (cosine, then sine unless it vanishes) are enumerated in
    radial order. The first ``side*side`` vectors replicate each pattern
    identically across channels; later blocks use orthogonal channel mixes.
    """
    i = np.arange(side)[:, None]
    j = np.arange(side)[None, :]
    spatial = []
    for (u, v), self_conjugate in fft_frequencies(side):
        phase = 2.0 * np.pi * (u * i + v * j) / side
        spatial.append(np.cos(phase))
        if not self_conjugate:
            spatial.append(np.sin(phase))
    spatial = np.array([s / np.linalg.norm(s) for s in spatial])
    out = []
    for mix in _channel_patterns(channels):
        for s in spatial:
            out.append((s[:, :, None] * mix[None, None, :]).reshape(-1))
    return np.array(out)


@dataclass(frozen=True)
class DirectionBasis:
    """A deterministic, indexable family of unit directions in tile space.

    ``size`` limits the family to its first ``size`` members (for the Fourier
    basis, the lowest frequencies); it defaults to the full tile dimension.
    """

    kind: BasisKind
    tile_shape: tuple
    size: int | None = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", BasisKind(self.kind))
        object.__setattr__(self, "tile_shape", tuple(int(s) for s in self.tile_shape))
        if len(self.tile_shape) != 3 or self.tile_shape[0] != self.tile_shape[1]:
            raise DomainError(f"tile shape must be (l, l, C), got {self.tile_shape}")
        n = self.dimension
        size = n if self.size is None else int(self.size)
        if not 1 <= size <= n:
            raise DomainError(f"basis size must be in [1, {n}], got {size}")
        object.__setattr__(self, "size", size)

    @property
    def dimension(self):
        l, _, c = self.tile_shape
        return l * l * c

    def __len__(self):
        return self.size

    @cached_property
    def matrix(self):
        """Rows are the basis vectors, flattened."""
        n = self.dimension
        if self.kind is BasisKind.CANONICAL:
            return np.eye(n)[: self.size]
        if self.kind is BasisKind.FFT:
            return fft_basis(self.tile_shape[0], self.tile_shape[2])[: self.size]
        rows = []
        for j in range(self.size):
            g = np.random.default_rng([self.seed, j]).standard_normal(n)
            rows.append(g / np.linalg.norm(g))
        return np.array(rows)

    def vector(self, j):
        if not 0 <= j < self.size:
            raise IndexError(f"basis index {j} out of range [0, {self.size})")
        return self.matrix[j].copy()

    def direction(self, j):
        """Basis vector ``j`` reshaped to the tile shape."""
        return self.vector(j).reshape(self.tile_shape)


def basis_vector(basis, j):
    return basis.vector(j)


@dataclass(frozen=True)
class FdConfig:
    smoothing: float
    directions_per_step: int
    batch_size: int
    basis: DirectionBasis

    def __post_init__(self):
        if not self.smoothing > 0:
            raise DomainError("smoothing must be positive")
        if self.directions_per_step < 1 or self.batch_size < 1:
            raise DomainError("directions_per_step and batch_size must be at least 1")


def two_sided_estimate(loss_fn, batch, delta, direction, mu, epsilon, ledger=None):
    """Central-difference estimate of the loss gradient along ``direction``.

    ``loss_fn(points, labels)`` returns one loss per row of ``points``.
    Each image in ``batch`` is queried at ``clip(x + tile(P(delta + mu z)))``
    and ``clip(x + tile(P(delta - mu z)))``; both queries are entered in
    ``ledger`` before the oracle sees them. Returns the batch mean of
    ``(L+ - L-) / (2 mu) * z`` with the tile shape of ``delta``.
    """
    if mu <= 0:
        raise DomainError("smoothing must be positive")
    if len(batch.ids) == 0:
        raise DomainError("empty batch")
    delta = np.asarray(delta, dtype=np.float64)
    z = np.asarray(direction, dtype=np.float64).reshape(delta.shape)
    plus = project_linf(delta + mu * z, epsilon)
    minus = project_linf(delta - mu * z, epsilon)
    images = batch.images
    b = len(images)
    tiles = np.concatenate(
        [np.broadcast_to(plus, (b,) + plus.shape), np.broadcast_to(minus, (b,) + minus.shape)]
    )
    points, dist = perturb_batch(np.concatenate([images, images]), tiles)
    if ledger is not None:
        ids = np.concatenate([batch.ids, batch.ids])
        ledger.record_batch(ids, dist, epsilon)
    labels = None if batch.labels is None else np.concatenate([batch.labels, batch.labels])
    losses = np.asarray(loss_fn(points, labels), dtype=np.float64)
    diff = losses[:b] - losses[b:]
    return float(np.mean(diff / (2.0 * mu))) * z


def direction_indices(iteration, config):
    j = config.directions_per_step
    return [(iteration * j + k) % len(config.basis) for k in range(j)]


def averaged_gradient(loss_fn, stream, delta, config, iteration, epsilon, ledger=None):
    """Mean of ``directions_per_step`` two-sided estimates on fresh batches.

    Iteration ``t`` uses basis indices ``t*J, ..., t*J + J - 1`` modulo the
    basis size. Raises ``DatasetExhausted`` if the stream cannot supply a
    batch; estimates already computed for this iteration are discarded.
    """
    total = np.zeros(np.shape(delta))
    for j in direction_indices(iteration, config):
        batch = stream.take(config.batch_size)
        total += two_sided_estimate(
            loss_fn, batch, delta, config.basis.direction(j), config.smoothing, epsilon, ledger
        )
    return total / config.directions_per_step

